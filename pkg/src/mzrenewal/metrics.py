"""Error metrics for jump distributions and transition series."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .estimate import JumpDistribution, TransitionSeries
from .jumpproc import JumpProcess, steps_of

__all__ = ["CvmReport", "cvm_error", "markov_baseline", "series_distance"]


@dataclass
class CvmReport:
    total: float
    contributions: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)

    def to_json(self, path=None):
        doc = {
            "total": self.total,
            "contributions": [[i, j, v] for (i, j), v in sorted(self.contributions.items())],
            "skipped": [list(p) for p in self.skipped],
        }
        text = json.dumps(doc) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def cvm_error(p_ref: JumpDistribution, p_est: JumpDistribution, shared_normalization=False) -> CvmReport:
    """Cramer-von Mises style distance between jump-time distributions.

    For every pair ``I != J`` the masses of each distribution are divided by
    their own total ``Z_IJ`` (the reference's for both when
    `shared_normalization`), the running sum of the difference is squared
    and averaged under the normalized reference masses. Pairs with no
    reference mass are skipped and listed.
    """
    if not np.isclose(p_ref.tau, p_est.tau, rtol=1e-12, atol=0):
        raise ConfigurationError(f"grid mismatch: tau {p_ref.tau:g} vs {p_est.tau:g}")
    if p_ref.n_states != p_est.n_states:
        raise ConfigurationError("distributions have different numbers of states")
    n_lags = max(p_ref.n_lags, p_est.n_lags)
    ref = p_ref.padded(n_lags).masses
    est = p_est.padded(n_lags).masses
    contributions, skipped = {}, []
    for i in range(p_ref.n_states):
        for j in range(p_ref.n_states):
            if i == j:
                continue
            z_ref = ref[:, i, j].sum()
            if z_ref <= 0:
                skipped.append((i + 1, j + 1))
                continue
            z_est = z_ref if shared_normalization else est[:, i, j].sum()
            est_norm = est[:, i, j] / z_est if z_est > 0 else np.zeros(n_lags + 1)
            w = ref[:, i, j] / z_ref
            inner = np.cumsum(w - est_norm)
            contributions[(i + 1, j + 1)] = float(np.sum(inner**2 * w))
    return CvmReport(float(sum(contributions.values())), contributions, skipped)


def markov_baseline(jp: JumpProcess, lag: float, horizon: float) -> TransitionSeries:
    """Markov model from a single count matrix of ``R`` at `lag`, extended by powers.

    Counts run over every defined time, not only jump entries. Feed it the
    jump process built with zero decorrelation times to count transitions of
    the raw macrostate sequence. Returns matrices on the tau grid; lags that
    are not multiples of `lag` are left NaN.
    """
    k = steps_of(lag, jp.tau, "lag", minimum=1)
    n_lags = steps_of(horizon, jp.tau, "horizon")
    n = jp.n_macrostates
    seq = jp.r[jp.burn_in :] - 1
    if seq.size <= k:
        raise ConfigurationError("sequence shorter than the lag")
    counts = np.zeros((n, n), dtype=np.int64)
    np.add.at(counts, (seq[:-k], seq[k:]), 1)
    rows = counts.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = counts / rows[:, None]
    empty = rows == 0
    t[empty] = np.nan
    out = np.full((n_lags + 1, n, n), np.nan)
    out[0] = np.eye(n)
    for step in range(k, n_lags + 1, k):
        out[step] = np.linalg.matrix_power(np.nan_to_num(t), step // k)
        out[step][empty] = np.nan
    diag = {"empty_rows": (np.flatnonzero(empty) + 1).tolist(), "lag_steps": k}
    return TransitionSeries(jp.tau, out, None, diag)


def series_distance(a: TransitionSeries, b: TransitionSeries) -> dict:
    """Per-lag max-abs and Frobenius differences on the common lag range."""
    if a.n_states != b.n_states or not np.isclose(a.tau, b.tau, rtol=1e-12, atol=0):
        raise ConfigurationError("series have different shapes or time steps")
    n = min(a.n_lags, b.n_lags) + 1
    d = a.matrices[:n] - b.matrices[:n]
    return {
        "lag": (np.arange(n) * a.tau).tolist(),
        "max_abs": np.abs(d).max(axis=(1, 2)).tolist(),
        "frobenius": np.sqrt(np.sum(d**2, axis=(1, 2))).tolist(),
    }

