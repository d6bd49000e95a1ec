"""Discrete renewal equation ``T(t) = sum_{0<s<=t} P(s) T(t-s) + F(t)``, forward and inverse."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericalDiagnosticError
from .estimate import JumpDistribution, TransitionSeries
from .jumpproc import steps_of

__all__ = [
    "SurvivalMatrix",
    "survival_from_jumps",
    "renewal_forward",
    "renewal_invert",
]


@dataclass
class SurvivalMatrix:
    """Diagonal survival matrices ``F(n tau)``; ``values[n]`` is N x N."""

    tau: float
    values: np.ndarray

    @property
    def diagonal(self):
        """Array ``(L+1, N)`` of per-state survival probabilities."""
        return np.diagonal(self.values, axis1=1, axis2=2)


def _survival_diagonal(masses):
    return 1.0 - np.cumsum(masses.sum(axis=2), axis=0)


def survival_from_jumps(jd: JumpDistribution) -> SurvivalMatrix:
    """Probability of not having jumped yet, by lag."""
    diag = _survival_diagonal(jd.masses)
    values = np.zeros(jd.masses.shape)
    idx = np.arange(jd.n_states)
    values[:, idx, idx] = diag
    return SurvivalMatrix(jd.tau, values)


def renewal_forward(jd: JumpDistribution, horizon: float, tail_tol=1e-6) -> TransitionSeries:
    """Transition matrices of the renewal process defined by `jd`.

    Mass in ``jd.tail`` is treated as holding beyond the horizon, so rows
    stay stochastic; a tail above `tail_tol` triggers a warning because the
    result is then exact only up to that mass.
    """
    if np.any(jd.masses < 0):
        raise ConfigurationError("jump distribution has negative masses")
    if np.any(jd.tail > tail_tol):
        warnings.warn(
            f"jump distribution tail mass up to {jd.tail.max():.3g}; transition"
            " matrices past the truncation are off by at most that much"
        )
    n_lags = steps_of(horizon, jd.tau, "horizon")
    n = jd.n_states
    p = np.zeros((n_lags + 1, n, n))
    keep = min(n_lags, jd.n_lags) + 1
    p[:keep] = jd.masses[:keep]
    surv = _survival_diagonal(p)
    out = np.zeros((n_lags + 1, n, n))
    out[0] = np.eye(n)
    idx = np.arange(n)
    for t in range(1, n_lags + 1):
        acc = np.einsum("sij,sjk->ik", p[1 : t + 1], out[t - 1 :: -1])
        acc[idx, idx] += surv[t]
        out[t] = acc
    return TransitionSeries(jd.tau, out)


def renewal_invert(ts: TransitionSeries, tol=1e-8, consistency_bound=1e-6,
                   stochastic_tol=1e-6, survival_floor=1e-6) -> JumpDistribution:
    """Recover the jump distribution from transition matrices.

    Deconvolves lag by lag: ``M(t) = T(t) - sum_{0<s<t} P(s) T(t-s)`` has
    ``P(t)`` off the diagonal and the survival ``F(t)`` on it. Recovered
    masses in ``[-tol, 0)`` are clamped to zero without renormalizing;
    anything more negative, or a diagonal inconsistent with the survival
    implied by the masses by more than `consistency_bound`, means the input
    is not a renewal process (decorrelation times too short) and raises.
    Stops early once every state's survival is below `survival_floor`.
    """
    mats = ts.matrices
    if np.isnan(mats[1:]).any():
        raise ConfigurationError("transition series has flagged missing rows")
    row_dev = np.abs(mats.sum(axis=2) - 1.0).max()
    if row_dev > stochastic_tol:
        raise ConfigurationError(
            f"transition rows deviate from stochastic by {row_dev:.3g} (> {stochastic_tol:g})"
        )
    n = ts.n_states
    off = ~np.eye(n, dtype=bool)
    p = np.zeros_like(mats)
    surv = np.ones(n)
    worst_gap = 0.0
    n_clamped = 0
    clamped_mass = np.zeros(n)
    last = ts.n_lags
    for t in range(1, ts.n_lags + 1):
        resid = mats[t] - np.einsum("sij,sjk->ik", p[1:t], mats[t - 1 : 0 : -1])
        step = np.where(off, resid, 0.0)
        neg = step < 0
        if np.any(step < -tol):
            i, j = np.unravel_index(np.argmin(step), step.shape)
            raise NumericalDiagnosticError(
                f"negative jump mass {step[i, j]:.3g} for {i + 1}->{j + 1} at lag {t}:"
                " input is not consistent with a renewal process"
            )
        if neg.any():
            n_clamped += int(neg.sum())
            clamped_mass -= np.where(neg, step, 0.0).sum(axis=1)
            step[neg] = 0.0
        p[t] = step
        surv = surv - step.sum(axis=1)
        gap = float(np.abs(np.diagonal(resid) - surv).max())
        worst_gap = max(worst_gap, gap)
        if gap > consistency_bound:
            raise NumericalDiagnosticError(
                f"diagonal of the deconvolution differs from the survival by {gap:.3g}"
                f" at lag {t}: input is not consistent with a renewal process"
            )
        if np.all(surv < survival_floor):
            last = t
            break
    masses = p[: last + 1]
    diagnostics = {
        "max_diagonal_discrepancy": worst_gap,
        "clamped_entries": n_clamped,
        "stopped_at_lag": last,
        "mass_deficit": clamped_mass.tolist(),
    }
    tail = 1.0 - masses.sum(axis=(0, 2))
    return JumpDistribution(ts.tau, masses, tail, diagnostics=diagnostics)
