"""Discrete memory kernels fitted by ridge-regularized least squares.

The kernels ``K(1..m)`` (in units of tau) minimize

    L(K) = sum_{r=1}^{n_max} || T(r) - sum_{s=1}^{min(r, m)} K(s) T(r-s) ||_F^2
           + lam * sum_s ||K(s)||_F^2

whose normal equations are ``X (G + lam I) = B`` with ``X = [K(1) ... K(m)]``,
``G = sum_r U_r U_r^T`` and ``B = sum_r T(r) U_r^T`` where ``U_r`` stacks
``T(r-1), ..., T(r-m)`` vertically (``T`` of a negative lag is zero).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, NumericalDiagnosticError
from .estimate import TransitionSeries
from .jumpproc import steps_of

__all__ = [
    "FitConfig",
    "CorrelationSystem",
    "KernelSeries",
    "build_correlation_system",
    "fit_kernels",
    "loss_and_gradient",
    "infer_transitions",
    "default_ridge",
]


@dataclass
class FitConfig:
    """Kernel cutoff `t_mem`, data cutoff `t_max` and ridge coefficient.

    ``lam=None`` selects ``1e-6 * trace(G) / (m N)``. Lags whose smallest
    row count is below `min_count` are left out of the loss.
    """

    t_mem: float
    t_max: float
    lam: float | None = None
    min_count: int = 0

    def lags(self, tau):
        m = steps_of(self.t_mem, tau, "t_mem", minimum=1)
        n_max = steps_of(self.t_max, tau, "t_max", minimum=1)
        if m > n_max:
            raise ConfigurationError(f"t_mem={self.t_mem:g} exceeds t_max={self.t_max:g}")
        if self.lam is not None and self.lam < 0:
            raise ConfigurationError("lambda must be >= 0")
        return m, n_max


@dataclass
class CorrelationSystem:
    """Block normal equations of the kernel fit.

    ``gram`` is ``(mN, mN)`` with block ``(s, t)`` equal to
    ``sum_r T(r-s) T(r-t)^T``; ``rhs`` is ``(N, mN)`` with block ``s`` equal
    to ``sum_r T(r) T(r-s)^T``; ``t_sq`` is ``sum_r ||T(r)||_F^2``.
    """

    tau: float
    n_kernels: int
    gram: np.ndarray
    rhs: np.ndarray
    t_sq: float

    @property
    def n_states(self):
        return self.rhs.shape[0]

    def block(self, s, t):
        n = self.n_states
        return self.gram[(s - 1) * n : s * n, (t - 1) * n : t * n]


@dataclass
class KernelSeries:
    """Memory kernels ``K(tau), ..., K(m tau)`` with fit diagnostics."""

    tau: float
    kernels: np.ndarray
    lam: float = 0.0
    loss: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kernels = np.asarray(self.kernels, dtype=float)
        if self.kernels.ndim != 3 or self.kernels.shape[0] < 1:
            raise ConfigurationError("need at least one N x N kernel")
        if not np.all(np.isfinite(self.kernels)):
            raise NumericalDiagnosticError("kernels contain non-finite entries")

    @property
    def n_kernels(self):
        return self.kernels.shape[0]

    @property
    def n_states(self):
        return self.kernels.shape[1]

    @property
    def t_mem(self):
        return self.n_kernels * self.tau

    def to_json(self, path):
        doc = {
            "tau": self.tau,
            "t_mem": self.t_mem,
            "lambda": self.lam,
            "kernels": self.kernels.tolist(),
            "loss": self.loss,
            "diagnostics": self.diagnostics,
        }
        Path(path).write_text(json.dumps(doc) + "\n")

    @classmethod
    def from_json(cls, path):
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"input file not found: {path}")
        doc = json.loads(path.read_text())
        try:
            return cls(float(doc["tau"]), np.array(doc["kernels"]), float(doc.get("lambda", 0.0)),
                       float(doc.get("loss", float("nan"))))
        except KeyError as exc:
            raise ConfigurationError(f"{path}: missing key {exc}") from exc


def _padded_series(ts: TransitionSeries, n_max: int):
    if ts.n_lags < n_max:
        raise ConfigurationError(f"series covers {ts.n_lags} lags, fit needs {n_max}")
    mats = ts.matrices[: n_max + 1].copy()
    mats[0] = np.eye(ts.n_states)
    missing = np.isnan(mats).any(axis=2)
    if missing.any():
        lags, states = np.nonzero(missing)
        warnings.warn(
            f"{missing.sum()} flagged rows (states {sorted(set((states + 1).tolist()))})"
            " excluded from the fit"
        )
        mats[np.isnan(mats)] = 0.0
    return mats


def _used_lags(ts, cfg, n_max):
    r = np.arange(1, n_max + 1)
    if cfg.min_count and ts.counts is not None:
        r = r[ts.counts[1 : n_max + 1].min(axis=1) >= cfg.min_count]
    return r


def _stack(mats, r, m):
    """``U_r``: vertical stack of ``T(r-1) ... T(r-m)`` with zero blocks for negative lags."""
    n = mats.shape[1]
    u = np.zeros((m * n, n))
    for s in range(1, min(r, m) + 1):
        u[(s - 1) * n : s * n] = mats[r - s]
    return u


def build_correlation_system(ts: TransitionSeries, cfg: FitConfig) -> CorrelationSystem:
    """Assemble the Gram matrix and right-hand side of the kernel fit."""
    m, n_max = cfg.lags(ts.tau)
    mats = _padded_series(ts, n_max)
    if not np.all(np.isfinite(mats)):
        raise NumericalDiagnosticError("transition series has non-finite entries")
    n = ts.n_states
    gram = np.zeros((m * n, m * n))
    rhs = np.zeros((n, m * n))
    t_sq = 0.0
    for r in _used_lags(ts, cfg, n_max):
        u = _stack(mats, r, m)
        gram += u @ u.T
        rhs += mats[r] @ u.T
        t_sq += float(np.sum(mats[r] ** 2))
    gram = 0.5 * (gram + gram.T)
    return CorrelationSystem(ts.tau, m, gram, rhs, t_sq)


def default_ridge(cs: CorrelationSystem) -> float:
    return 1e-6 * np.trace(cs.gram) / cs.gram.shape[0]


def fit_kernels(cs: CorrelationSystem, cfg: FitConfig) -> KernelSeries:
    """Solve the (ridge) normal equations for the memory kernels.

    Uses a Cholesky factorization of ``G + lam I``. At ``lam = 0`` a
    singular Gram matrix falls back to the minimum-norm least-squares
    solution, recorded in ``diagnostics["fallback"]``.
    """
    if not (np.all(np.isfinite(cs.gram)) and np.all(np.isfinite(cs.rhs))):
        raise NumericalDiagnosticError("correlation system has non-finite entries")
    lam = default_ridge(cs) if cfg.lam is None else float(cfg.lam)
    a = cs.gram + lam * np.eye(cs.gram.shape[0])
    diagnostics = {"condition": float(np.linalg.cond(a)), "fallback": False}
    try:
        factor = scipy.linalg.cho_factor(a, lower=True)
        x_t = scipy.linalg.cho_solve(factor, cs.rhs.T)
        if lam == 0 and diagnostics["condition"] > 1e14:
            raise np.linalg.LinAlgError("gram numerically singular")
    except np.linalg.LinAlgError as exc:
        if lam > 0:
            raise NumericalDiagnosticError(f"ridge system not factorizable: {exc}") from exc
        warnings.warn("singular Gram matrix at lambda=0; using minimum-norm least squares")
        x_t = scipy.linalg.lstsq(a, cs.rhs.T, cond=None)[0]
        diagnostics["fallback"] = True
    x = x_t.T
    n = cs.n_states
    kernels = np.stack([x[:, (s - 1) * n : s * n] for s in range(1, cs.n_kernels + 1)])
    loss = cs.t_sq - 2.0 * np.sum(x * cs.rhs) + np.sum((x @ cs.gram) * x)
    return KernelSeries(cs.tau, kernels, lam, float(max(loss, 0.0)), diagnostics)


def loss_and_gradient(kernels: KernelSeries, ts: TransitionSeries, cfg: FitConfig):
    """Loss value and its gradient with respect to each kernel.

    Evaluated directly from residuals, independently of the Gram assembly.
    The ridge coefficient is ``cfg.lam`` or, when None, the one stored on
    `kernels`.
    """
    m, n_max = cfg.lags(ts.tau)
    if kernels.n_kernels != m or kernels.n_states != ts.n_states:
        raise ConfigurationError("kernel shapes do not match the fit configuration")
    lam = kernels.lam if cfg.lam is None else float(cfg.lam)
    mats = _padded_series(ts, n_max)
    k = kernels.kernels
    loss = 0.0
    grad = np.zeros_like(k)
    for r in _used_lags(ts, cfg, n_max):
        resid = mats[r].copy()
        for s in range(1, min(r, m) + 1):
            resid -= k[s - 1] @ mats[r - s]
        loss += float(np.sum(resid**2))
        for s in range(1, min(r, m) + 1):
            grad[s - 1] -= 2.0 * resid @ mats[r - s].T
    if lam > 0:
        loss += lam * float(np.sum(k**2))
        grad += 2.0 * lam * k
    return loss, grad


def infer_transitions(kernels: KernelSeries, horizon: float, bound=10.0) -> TransitionSeries:
    """Extend transition matrices with the memory recursion up to `horizon`.

    Values are returned unclamped; ``diagnostics`` holds the per-lag
    maximum row-sum deviation from 1 and the most negative entry.
    """
    n_lags = steps_of(horizon, kernels.tau, "horizon")
    n, m = kernels.n_states, kernels.n_kernels
    out = np.zeros((n_lags + 1, n, n))
    out[0] = np.eye(n)
    for t in range(1, n_lags + 1):
        acc = np.zeros((n, n))
        for s in range(1, min(t, m) + 1):
            acc += kernels.kernels[s - 1] @ out[t - s]
        if not np.all(np.abs(acc) <= bound):
            raise NumericalDiagnosticError(
                f"inferred transition matrices diverge at lag {t} (|entry| > {bound});"
                " the kernel fit is unstable"
            )
        out[t] = acc
    diag = {
        "row_sum_deviation": np.abs(out.sum(axis=2) - 1.0).max(axis=1).tolist(),
        "min_entry": out.min(axis=(1, 2)).tolist(),
    }
    return TransitionSeries(kernels.tau, out, None, diag)
