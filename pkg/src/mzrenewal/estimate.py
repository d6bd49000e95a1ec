"""Count-based estimators of entry-conditioned transition matrices and jump distributions."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .jumpproc import JumpProcess, steps_of

__all__ = [
    "TransitionSeries",
    "JumpDistribution",
    "estimate_transitions",
    "estimate_jump_distribution",
    "transition_counts",
    "jump_counts",
    "mean_holding_times",
]


@dataclass
class TransitionSeries:
    """Stack of N x N matrices at lags ``0, tau, ..., n_max * tau``.

    `counts` holds per-lag row sample sizes for estimated series and is
    None for series produced by a model. Rows with zero count are NaN.
    """

    tau: float
    matrices: np.ndarray
    counts: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.matrices = np.asarray(self.matrices, dtype=float)
        if self.matrices.ndim != 3 or self.matrices.shape[1] != self.matrices.shape[2]:
            raise ConfigurationError(f"matrices must have shape (L, N, N), got {self.matrices.shape}")
        if self.counts is not None:
            self.counts = np.asarray(self.counts)

    @property
    def n_lags(self):
        """Largest lag index stored."""
        return self.matrices.shape[0] - 1

    @property
    def n_states(self):
        return self.matrices.shape[1]

    @property
    def t_max(self):
        return self.n_lags * self.tau

    @property
    def missing(self):
        """Boolean (L+1, N) mask of rows without data."""
        return np.isnan(self.matrices).any(axis=2)

    def truncate(self, n_lags):
        counts = None if self.counts is None else self.counts[: n_lags + 1]
        return TransitionSeries(self.tau, self.matrices[: n_lags + 1], counts)

    def to_json(self, path):
        doc = {
            "tau": self.tau,
            "t_max": self.t_max,
            "matrices": _nan_to_none(self.matrices),
            "counts": None if self.counts is None else self.counts.tolist(),
        }
        if self.diagnostics:
            doc["diagnostics"] = self.diagnostics
        Path(path).write_text(json.dumps(doc) + "\n")

    @classmethod
    def from_json(cls, path):
        doc = _load_json(path)
        try:
            mats = np.array(doc["matrices"], dtype=float)
            counts = doc.get("counts")
            return cls(float(doc["tau"]), mats, None if counts is None else np.array(counts))
        except KeyError as exc:
            raise ConfigurationError(f"{path}: missing key {exc}") from exc


@dataclass
class JumpDistribution:
    """Joint law of destination and holding time after entering a macrostate.

    ``masses[n, I, J]`` is the probability of jumping from ``I`` to ``J``
    exactly ``n`` coarse steps after entering ``I`` (0-based indices,
    ``masses[0] = 0``, zero diagonal). ``tail[I]`` is the mass beyond the
    truncation, so each row of masses plus its tail sums to 1.
    """

    tau: float
    masses: np.ndarray
    tail: np.ndarray | None = None
    censored: np.ndarray | None = None
    n_entries: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.masses = np.asarray(self.masses, dtype=float)
        if self.masses.ndim != 3 or self.masses.shape[1] != self.masses.shape[2]:
            raise ConfigurationError(f"masses must have shape (L, N, N), got {self.masses.shape}")
        n = self.masses.shape[1]
        if self.tail is None:
            self.tail = 1.0 - self.masses.sum(axis=(0, 2))
        self.tail = np.asarray(self.tail, dtype=float)
        if self.censored is None:
            self.censored = np.zeros(n, dtype=np.int64)
        self.censored = np.asarray(self.censored, dtype=np.int64)

    @property
    def n_states(self):
        return self.masses.shape[1]

    @property
    def n_lags(self):
        return self.masses.shape[0] - 1

    @property
    def t_trunc(self):
        return self.n_lags * self.tau

    @classmethod
    def from_records(cls, tau, records, n_states=None):
        """Build from ``(I, J, t, p)`` records with 1-based states and physical times."""
        records = list(records)
        if n_states is None:
            n_states = max(max(int(i), int(j)) for i, j, _, _ in records)
        n_lags = max(steps_of(t, tau, "t", minimum=1) for _, _, t, _ in records)
        masses = np.zeros((n_lags + 1, n_states, n_states))
        for i, j, t, p in records:
            if int(i) == int(j):
                raise ConfigurationError("jump distribution has a diagonal mass")
            masses[steps_of(t, tau, "t", minimum=1), int(i) - 1, int(j) - 1] += p
        return cls(tau, masses)

    def records(self):
        n, i, j = np.nonzero(self.masses)
        return [
            [int(a) + 1, int(b) + 1, float(k * self.tau), float(self.masses[k, a, b])]
            for k, a, b in zip(n, i, j)
        ]

    def padded(self, n_lags):
        """Copy with the lag axis zero-padded (or cut) to `n_lags`."""
        m = np.zeros((n_lags + 1,) + self.masses.shape[1:])
        keep = min(n_lags, self.n_lags) + 1
        m[:keep] = self.masses[:keep]
        tail = 1.0 - m.sum(axis=(0, 2)) if n_lags < self.n_lags else self.tail
        return JumpDistribution(self.tau, m, tail, self.censored, self.n_entries)

    def to_json(self, path):
        doc = {
            "tau": self.tau,
            "t_trunc": self.t_trunc,
            "n_states": self.n_states,
            "masses": self.records(),
            "tail": self.tail.tolist(),
            "censored": self.censored.tolist(),
            "n_entries": None if self.n_entries is None else np.asarray(self.n_entries).tolist(),
        }
        if self.diagnostics:
            doc["diagnostics"] = self.diagnostics
        Path(path).write_text(json.dumps(doc) + "\n")

    @classmethod
    def from_json(cls, path):
        doc = _load_json(path)
        try:
            tau = float(doc["tau"])
            n_states = int(doc["n_states"])
            n_lags = steps_of(doc["t_trunc"], tau, "t_trunc")
        except KeyError as exc:
            raise ConfigurationError(f"{path}: missing key {exc}") from exc
        masses = np.zeros((n_lags + 1, n_states, n_states))
        for i, j, t, p in doc["masses"]:
            masses[steps_of(t, tau, "t"), int(i) - 1, int(j) - 1] = p
        n_entries = doc.get("n_entries")
        return cls(tau, masses, doc.get("tail"), doc.get("censored"),
                   None if n_entries is None else np.array(n_entries))


def _load_json(path):
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"input file not found: {path}")
    return json.loads(path.read_text())


def _nan_to_none(a):
    return [[[None if np.isnan(v) else v for v in row] for row in m] for m in a.tolist()]


def transition_counts(jp: JumpProcess, n_lags: int, include_first=True) -> np.ndarray:
    """Count tensor ``C[n, I, J]``: entries into I with ``R(s + n) = J``."""
    s, i = jp.entry_lists(include_first)
    n_states = jp.n_macrostates
    counts = np.zeros((n_lags + 1, n_states, n_states), dtype=np.int64)
    for n in range(n_lags + 1):
        ok = s + n < jp.r.size
        flat = i[ok] * n_states + jp.r[s[ok] + n] - 1
        counts[n] = np.bincount(flat, minlength=n_states * n_states).reshape(n_states, n_states)
    return counts


def series_from_counts(tau, counts) -> TransitionSeries:
    counts = np.asarray(counts)
    rows = counts.sum(axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        mats = counts / rows[:, :, None]
    mats[rows == 0] = np.nan
    mats[0] = np.eye(counts.shape[1])
    return TransitionSeries(tau, mats, rows)


def estimate_transitions(jp: JumpProcess, t_max: float, include_first=True) -> TransitionSeries:
    """Estimate entry-conditioned transition matrices up to lag `t_max`.

    Each lag uses the entries whose window ``s + t`` stays inside the
    defined range. Rows never observed are NaN and listed in
    ``diagnostics["missing_states"]``.
    """
    n_lags = steps_of(t_max, jp.tau, "t_max")
    ts = series_from_counts(jp.tau, transition_counts(jp, n_lags, include_first))
    never = np.flatnonzero(ts.counts[min(1, n_lags)] == 0) if n_lags else np.array([], int)
    if never.size:
        warnings.warn(f"macrostates {(never + 1).tolist()} have no entries; rows flagged missing")
        ts.diagnostics["missing_states"] = (never + 1).tolist()
    return ts


def jump_counts(jp: JumpProcess, n_lags: int, include_first=True):
    """Holding-interval counts.

    Returns ``(counts, tail, censored)`` where ``counts[n, I, J]`` counts
    completed intervals of length ``n`` from I to J, ``tail[I]`` counts
    completed intervals longer than `n_lags`, and ``censored[I]`` counts
    intervals cut off by the end of the data.
    """
    e = jp.entries if include_first else jp.entries[1:]
    n_states = jp.n_macrostates
    counts = np.zeros((n_lags + 1, n_states, n_states), dtype=np.int64)
    tail = np.zeros(n_states, dtype=np.int64)
    censored = np.zeros(n_states, dtype=np.int64)
    if e.shape[0]:
        censored[e[-1, 1] - 1] += 1
    if e.shape[0] > 1:
        # consecutive recorded entries are consecutive jumps even when the
        # first entry is excluded, since only the head of the list is dropped
        dt = np.diff(e[:, 0])
        src, dst = e[:-1, 1] - 1, e[1:, 1] - 1
        short = dt <= n_lags
        np.add.at(counts, (dt[short], src[short], dst[short]), 1)
        np.add.at(tail, src[~short], 1)
    return counts, tail, censored


def distribution_from_counts(tau, counts, tail, censored) -> JumpDistribution:
    n_complete = counts.sum(axis=(0, 2)) + tail
    bad = np.flatnonzero((n_complete == 0) & (censored > 0))
    if bad.size:
        raise ConfigurationError(
            f"every holding interval in macrostates {(bad + 1).tolist()} is censored"
        )
    never = np.flatnonzero(n_complete == 0)
    if never.size:
        warnings.warn(f"macrostates {(never + 1).tolist()} were never entered")
    denom = np.where(n_complete > 0, n_complete, 1)
    masses = counts / denom[None, :, None]
    tail_mass = np.where(n_complete > 0, tail / denom, 1.0)
    return JumpDistribution(tau, masses, tail_mass, censored, n_complete)


def estimate_jump_distribution(jp: JumpProcess, t_trunc: float, include_first=True) -> JumpDistribution:
    """Empirical jump distribution from consecutive entry events."""
    n_lags = steps_of(t_trunc, jp.tau, "t_trunc")
    return distribution_from_counts(jp.tau, *jump_counts(jp, n_lags, include_first))


def mean_holding_times(jd: JumpDistribution, tail_threshold=0.01) -> dict:
    """Mean holding time per macrostate (1-based keys), conditioned on jumping before truncation."""
    over = np.flatnonzero(jd.tail > tail_threshold)
    if over.size:
        raise ConfigurationError(
            f"tail mass {jd.tail[over].round(6).tolist()} in macrostates"
            f" {(over + 1).tolist()} exceeds {tail_threshold}; increase t_trunc"
        )
    t = np.arange(jd.n_lags + 1) * jd.tau
    out_mass = jd.masses.sum(axis=2)
    means = (t[:, None] * out_mass).sum(axis=0) / (1.0 - jd.tail)
    return {i + 1: float(m) for i, m in enumerate(means)}
