"""Exact quantities for finite microstate chains.

The oracle works with one counter tick per macroscopic step, so the base
chain's matrix is taken to be the transition matrix over one ``tau``. The
augmented chain lives on reachable triples ``(x, I, c)``: microstate,
current jump-process state, and consecutive time (in ticks) spent in the
macrostate of ``x``, capped at that macrostate's ``q``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import ConfigurationError, NumericalDiagnosticError
from .estimate import JumpDistribution, TransitionSeries
from .jumpproc import DecorrelationConfig
from .mzkernel import KernelSeries
from .renewal import renewal_forward
from .trajio import FiniteChainSpec

__all__ = [
    "Qsd",
    "AugmentedChain",
    "ProjectorMatrix",
    "compute_qsd",
    "compute_qsds",
    "build_augmented_chain",
    "build_projector",
    "exact_transitions",
    "operator_kernels",
    "exact_jump_distribution",
    "mz_operator_residual",
    "convergence_study",
]


@dataclass
class Qsd:
    """Quasistationary distribution of one macrostate.

    `eta` is indexed like `microstates`; `eigenvalue` is the survival
    rate per step and `delta` the ratio of the second to the first
    eigenvalue modulus of the restricted matrix (0 for one microstate).
    """

    macrostate: int
    microstates: np.ndarray
    eta: np.ndarray
    eigenvalue: float
    delta: float
    iterations: int = 0


def compute_qsd(spec: FiniteChainSpec, macrostate: int, rtol=1e-12, max_iter=100_000) -> Qsd:
    """Left Perron vector of the chain restricted to `macrostate`, by power iteration."""
    micro = spec.microstates_of(macrostate)
    if micro.size == 0:
        raise ConfigurationError(f"macrostate {macrostate} has no microstates")
    sub = spec.transition_matrix[np.ix_(micro, micro)]
    if micro.size == 1:
        return Qsd(macrostate, micro, np.ones(1), float(sub[0, 0]), 0.0)
    n_comp, comp = connected_components(sp.csr_matrix(sub > 0), directed=True, connection="strong")
    if n_comp > 1:
        groups = [micro[comp == c].tolist() for c in range(n_comp)]
        raise ConfigurationError(
            f"restriction to macrostate {macrostate} is reducible; strongly connected"
            f" microstate groups: {groups}"
        )
    v = np.full(micro.size, 1.0 / micro.size)
    lam = 0.0
    for it in range(1, max_iter + 1):
        w = v @ sub
        lam = w.sum()
        if lam <= 0:
            raise NumericalDiagnosticError(f"restriction to macrostate {macrostate} is nilpotent")
        w /= lam
        if np.abs(w - v).max() <= rtol * np.abs(w).max():
            v = w
            break
        v = w
    else:
        raise NumericalDiagnosticError(
            f"QSD power iteration for macrostate {macrostate} did not converge in {max_iter} iterations"
        )
    ev = np.sort(np.abs(np.linalg.eigvals(sub)))[::-1]
    delta = float(ev[1] / ev[0]) if ev[0] > 0 else 0.0
    return Qsd(macrostate, micro, v, float(lam), delta, it)


def compute_qsds(spec: FiniteChainSpec) -> list:
    """QSDs of all macrostates, in macrostate order."""
    return [compute_qsd(spec, i) for i in range(1, spec.n_macrostates + 1)]


@dataclass
class AugmentedChain:
    """Markov chain on ``(x, I, c)`` triples with sparse kernel `kernel`."""

    spec: FiniteChainSpec
    q: np.ndarray
    states: list
    index: dict
    kernel: sp.csr_matrix
    tau: float = 1.0

    @property
    def n_states(self):
        return len(self.states)

    @property
    def n_macrostates(self):
        return self.spec.n_macrostates

    def entry_state(self, x, macrostate):
        """Index of the decorrelated entry configuration ``(x, I, q_I)``."""
        return self.index[(int(x), macrostate, int(self.q[macrostate - 1]))]

    def indicators(self):
        """Matrix ``chi[a, J-1] = 1`` when state ``a`` has jump-process value ``J``."""
        chi = np.zeros((self.n_states, self.n_macrostates))
        for a, (_, big_i, _) in enumerate(self.states):
            chi[a, big_i - 1] = 1.0
        return chi

    def r_values(self):
        return np.array([s[1] for s in self.states])


def _counters(q, n_macrostates, tau):
    if isinstance(q, DecorrelationConfig):
        _, q = q.steps(tau, n_macrostates)
    elif np.ndim(q) == 0:
        q = np.full(n_macrostates, int(q))
    q = np.asarray(q, dtype=np.int64)
    if q.shape != (n_macrostates,) or np.any(q < 0):
        raise ConfigurationError("need one nonnegative counter cap per macrostate")
    return q


def build_augmented_chain(spec: FiniteChainSpec, q, tau=1.0, max_states=100_000) -> AugmentedChain:
    """Enumerate augmented states reachable from the entry configurations.

    `q` is a `DecorrelationConfig` (its tau and tau_I must be multiples of
    `tau`), a sequence of caps per macrostate, or one cap for all.
    """
    q = _counters(q, spec.n_macrostates, tau)
    m = spec.transition_matrix
    lab = spec.labeling
    succ = [np.flatnonzero(m[x] > 0) for x in range(spec.n_microstates)]
    states, index = [], {}
    queue = deque()

    def visit(s):
        if s not in index:
            if len(states) >= max_states:
                raise ConfigurationError(f"augmented state space exceeds {max_states} states")
            index[s] = len(states)
            states.append(s)
            queue.append(s)

    for x in range(spec.n_microstates):
        visit((x, int(lab[x]), int(q[lab[x] - 1])))
    rows, cols, vals = [], [], []
    while queue:
        x, big_i, c = s = queue.popleft()
        a = index[s]
        for y in succ[x]:
            ly = int(lab[y])
            qy = int(q[ly - 1])
            c2 = min(c + 1, qy) if ly == lab[x] else 0
            r2 = ly if c2 == qy else big_i
            t = (int(y), r2, c2)
            visit(t)
            rows.append(a)
            cols.append(index[t])
            vals.append(m[x, y])
    n = len(states)
    kernel = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    kernel.sum_duplicates()
    return AugmentedChain(spec, q, states, index, kernel, tau)


@dataclass
class ProjectorMatrix:
    """``P f(x, I, c) = sum_z eta_I(z) f(z, I, q_I)`` as a sparse matrix."""

    matrix: sp.csr_matrix

    def apply(self, f):
        return self.matrix @ f

    def complement(self, f):
        return f - self.matrix @ f

    def dense(self):
        return self.matrix.toarray()


def build_projector(ac: AugmentedChain, qsds) -> ProjectorMatrix:
    rows, cols, vals = [], [], []
    for a, (_, big_i, _) in enumerate(ac.states):
        qsd = qsds[big_i - 1]
        for z, w in zip(qsd.microstates, qsd.eta):
            rows.append(a)
            cols.append(ac.entry_state(z, big_i))
            vals.append(w)
    n = ac.n_states
    return ProjectorMatrix(sp.csr_matrix((vals, (rows, cols)), shape=(n, n)))


def _entry_rows(ac: AugmentedChain, qsds):
    """``(N, S)`` matrix whose row I is the QSD spread over I's entry states."""
    e = np.zeros((ac.n_macrostates, ac.n_states))
    for qsd in qsds:
        for z, w in zip(qsd.microstates, qsd.eta):
            e[qsd.macrostate - 1, ac.entry_state(z, qsd.macrostate)] = w
    return e


def exact_transitions(ac: AugmentedChain, qsds, n_max: int) -> TransitionSeries:
    """``T_IJ(n tau) = sum_x eta_I(x) (K^n chi_J)(x, I, q_I)`` for ``n <= n_max``."""
    entry = _entry_rows(ac, qsds)
    v = ac.indicators()
    out = np.empty((n_max + 1, ac.n_macrostates, ac.n_macrostates))
    out[0] = entry @ v
    for n in range(1, n_max + 1):
        v = ac.kernel @ v
        out[n] = entry @ v
    return TransitionSeries(ac.tau, out)


def operator_kernels(ac: AugmentedChain, proj: ProjectorMatrix, n_max: int, spread_tol=1e-10) -> KernelSeries:
    """Memory kernels ``K_IJ(n tau) = (P T (Q T)^{n-1} chi_J)(x, I, c)``.

    The value must not depend on ``(x, c)`` within a macrostate; a spread
    above `spread_tol` signals an inconsistent projector.
    """
    r = ac.r_values()
    chi = ac.indicators()
    u = chi
    kernels = np.empty((n_max, ac.n_macrostates, ac.n_macrostates))
    for n in range(1, n_max + 1):
        w = ac.kernel @ u
        k = proj.apply(w)
        for big_i in range(1, ac.n_macrostates + 1):
            block = k[r == big_i]
            if block.size == 0:
                raise ConfigurationError(f"no augmented state has R = {big_i}")
            spread = np.ptp(block, axis=0).max()
            if spread > spread_tol:
                raise NumericalDiagnosticError(
                    f"kernel row {big_i} varies by {spread:.3g} across states at n={n}"
                )
            kernels[n - 1, big_i - 1] = block[0]
        u = w - k
    return KernelSeries(ac.tau, kernels, 0.0, 0.0)


def mz_operator_residual(ac: AugmentedChain, proj: ProjectorMatrix, n: int) -> float:
    """Max-abs residual of ``P T^n = sum_m K(m) P T^{n-m} + F(n)`` as dense operators."""
    t = ac.kernel.toarray()
    p = proj.dense()
    q = np.eye(ac.n_states) - p
    qt = q @ t
    lhs = p @ np.linalg.matrix_power(t, n)
    rhs = np.zeros_like(lhs)
    qt_pow = np.eye(ac.n_states)
    for m in range(1, n + 1):
        k_m = p @ t @ qt_pow
        rhs += k_m @ p @ np.linalg.matrix_power(t, n - m)
        if m < n:
            qt_pow = qt_pow @ qt
    rhs += p @ t @ qt_pow @ q
    return float(np.abs(lhs - rhs).max())


def exact_jump_distribution(ac: AugmentedChain, qsds, n_trunc: int) -> JumpDistribution:
    """First-jump law after a decorrelated entry, for lags ``1..n_trunc``.

    Mass still undecided after `n_trunc` steps is reported as the tail.
    """
    nm = ac.n_macrostates
    r = ac.r_values()
    entry = _entry_rows(ac, qsds)
    kernel_t = ac.kernel.T.tocsr()
    masses = np.zeros((n_trunc + 1, nm, nm))
    tail = np.zeros(nm)
    for big_i in range(1, nm + 1):
        inside = r == big_i
        p = entry[big_i - 1].copy()
        for n in range(1, n_trunc + 1):
            p = kernel_t @ p
            absorbed = np.bincount(r[~inside] - 1, weights=p[~inside], minlength=nm)
            masses[n, big_i - 1] = absorbed
            p[~inside] = 0.0
        tail[big_i - 1] = p.sum()
    return JumpDistribution(ac.tau, masses, tail)


def convergence_study(spec: FiniteChainSpec, q_values, n_max: int) -> dict:
    """Distance between exact transitions and their renewal approximation, by counter cap.

    For each cap ``q`` (shared by all macrostates) computes
    ``err(q) = max_{n <= n_max} |T_q(n) - renewal(P_q)(n)|_inf`` and fits
    ``log err`` linearly in ``q``; ``fitted_rate`` is the exponential of the
    slope, to be compared with the spectral ratio ``delta``.
    """
    qsds = compute_qsds(spec)
    errors = []
    for q in q_values:
        ac = build_augmented_chain(spec, q)
        exact = exact_transitions(ac, qsds, n_max)
        jd = exact_jump_distribution(ac, qsds, n_max)
        approx = renewal_forward(jd, n_max * ac.tau, tail_tol=np.inf)
        errors.append(float(np.abs(exact.matrices - approx.matrices).max()))
    q_arr = np.asarray(q_values, dtype=float)
    err = np.asarray(errors)
    positive = err > 0
    if positive.sum() >= 2:
        slope = float(np.polyfit(q_arr[positive], np.log(err[positive]), 1)[0])
        rate = float(np.exp(slope))
    else:
        slope, rate = float("nan"), float("nan")
    deltas = [qsd.delta for qsd in qsds]
    return {
        "q": [int(q) for q in q_values],
        "error": errors,
        "log_slope": slope,
        "fitted_rate": rate,
        "delta": max(deltas),
        "delta_per_macrostate": deltas,
    }
