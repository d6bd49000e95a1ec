"""Decorrelated jump process on the coarse time grid.

The jump process ``R`` moves to macrostate ``J`` at coarse index ``n``
(fine index ``k = n * p``) once the fine trajectory has occupied ``J`` for
``q_J + 1`` consecutive samples ending at ``k``. Before the first such event
``R`` is undefined; that prefix is the burn-in and is stored as 0.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ConfigurationError
from .trajio import LabeledTrajectory

__all__ = [
    "DecorrelationConfig",
    "JumpProcess",
    "build_jump_process",
    "consecutive_clock",
    "steps_of",
]


def steps_of(t, unit, name="time", minimum=0):
    """Express `t` as an integer multiple of `unit`, or raise."""
    k = int(round(t / unit))
    if abs(k * unit - t) > 1e-9 * max(abs(t), unit):
        raise ConfigurationError(f"{name}={t:g} is not a multiple of {unit:g}")
    if k < minimum:
        raise ConfigurationError(f"{name}={t:g} must be at least {minimum} x {unit:g}")
    return k


@dataclass
class DecorrelationConfig:
    """Macroscopic step `tau` and per-macrostate decorrelation times.

    `tau_I` is either a mapping ``{macrostate: time}`` with 1-based keys, a
    sequence indexed by ``macrostate - 1``, or a scalar shared by all states.
    """

    tau: float
    tau_I: object = None

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigurationError("tau must be positive")
        if self.tau_I is None:
            self.tau_I = self.tau

    def decorrelation_times(self, n_macrostates):
        t = self.tau_I
        if isinstance(t, Mapping):
            missing = set(range(1, n_macrostates + 1)) - {int(k) for k in t}
            if missing:
                raise ConfigurationError(f"tau_I missing for macrostates {sorted(missing)}")
            return np.array([float(t[k] if k in t else t[str(k)]) for k in range(1, n_macrostates + 1)])
        if np.ndim(t) == 0:
            return np.full(n_macrostates, float(t))
        t = np.asarray(t, dtype=float)
        if t.shape != (n_macrostates,):
            raise ConfigurationError(f"tau_I has {t.size} entries for {n_macrostates} macrostates")
        return t

    def steps(self, fine_step, n_macrostates):
        """Return ``(p, q)``: tau and each tau_I counted in fine steps."""
        p = steps_of(self.tau, fine_step, "tau", minimum=1)
        q = np.array(
            [steps_of(t, fine_step, f"tau_I[{i + 1}]") for i, t in enumerate(self.decorrelation_times(n_macrostates))],
            dtype=np.int64,
        )
        return p, q

    def sigma(self, n_macrostates):
        return float(self.decorrelation_times(n_macrostates).min())


@dataclass
class JumpProcess:
    """Jump process on the coarse grid ``t = n * tau``.

    Attributes
    ----------
    r : ndarray of int
        Macrostate at every coarse index; 0 during the burn-in.
    entries : ndarray, shape (n_entries, 2)
        Rows ``(n, I)`` of jump-entry events, the first defined time included.
    tau : float
        Coarse time step.
    burn_in : int
        Number of undefined coarse indices at the start.
    """

    r: np.ndarray
    entries: np.ndarray
    tau: float
    burn_in: int
    n_macrostates: int

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=np.int64)
        self.entries = np.asarray(self.entries, dtype=np.int64).reshape(-1, 2)
        self.burn_in = int(self.burn_in)

    def __len__(self):
        return self.r.size

    @classmethod
    def from_sequence(cls, r, tau, n_macrostates=None):
        """Build from a coarse sequence (0 = undefined prefix); entries at value changes."""
        r = np.asarray(r, dtype=np.int64)
        defined = np.flatnonzero(r > 0)
        if defined.size == 0:
            raise ConfigurationError("sequence is entirely undefined")
        burn_in = int(defined[0])
        if np.any(r[burn_in:] <= 0):
            raise ConfigurationError("undefined values after the burn-in")
        tail = r[burn_in:]
        change = np.flatnonzero(np.diff(tail) != 0) + 1
        idx = np.concatenate([[0], change]) + burn_in
        entries = np.column_stack([idx, r[idx]])
        if n_macrostates is None:
            n_macrostates = int(r.max())
        return cls(r, entries, tau, burn_in, n_macrostates)

    def entry_lists(self, include_first=True):
        """Entry indices and 0-based states, optionally dropping the first entry."""
        e = self.entries if include_first else self.entries[1:]
        return e[:, 0], e[:, 1] - 1

    def to_files(self, csv_path, json_path=None):
        csv_path = Path(csv_path)
        json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "label"])
            for n in range(self.burn_in, self.r.size):
                w.writerow([n, int(self.r[n])])
        side = {
            "tau": self.tau,
            "burn_in": self.burn_in,
            "length": int(self.r.size),
            "n_macrostates": self.n_macrostates,
            "entries": self.entries.tolist(),
        }
        json_path.write_text(json.dumps(side) + "\n")

    @classmethod
    def from_files(cls, csv_path, json_path=None):
        csv_path = Path(csv_path)
        json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
        for p in (csv_path, json_path):
            if not p.exists():
                raise ConfigurationError(f"input file not found: {p}")
        side = json.loads(json_path.read_text())
        with open(csv_path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, [])
            if [h.strip() for h in header] != ["n", "label"]:
                raise ConfigurationError(f"{csv_path}: expected header n,label")
            rows = [(int(a), int(b)) for a, b in reader]
        length = side.get("length", rows[-1][0] + 1 if rows else side["burn_in"])
        r = np.zeros(length, dtype=np.int64)
        for n, lab in rows:
            r[n] = lab
        n_macro = side.get("n_macrostates", int(r.max()))
        return cls(r, side["entries"], float(side["tau"]), side["burn_in"], n_macro)


def _run_lengths(labels):
    """Zero-based position of each sample within its run of equal labels."""
    n = labels.size
    starts = np.zeros(n, dtype=np.int64)
    change = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    starts[change] = change
    np.maximum.accumulate(starts, out=starts)
    return np.arange(n) - starts


def consecutive_clock(traj: LabeledTrajectory, cfg: DecorrelationConfig) -> np.ndarray:
    """Time spent consecutively in the current macrostate, capped at its tau_I."""
    _, q = cfg.steps(traj.fine_step, traj.n_macrostates)
    ticks = np.minimum(_run_lengths(traj.labels), q[traj.labels - 1])
    return ticks * traj.fine_step


def build_jump_process(traj: LabeledTrajectory, cfg: DecorrelationConfig) -> JumpProcess:
    """Construct the decorrelated jump process of a labeled trajectory."""
    p, q = cfg.steps(traj.fine_step, traj.n_macrostates)
    k = np.arange(0, len(traj), p)
    lab = traj.labels[k]
    fired = _run_lengths(traj.labels)[k] >= q[lab - 1]
    if not fired.any():
        raise ConfigurationError(
            "no macrostate equilibrated; decrease tau_I or lengthen trajectory"
        )
    last = np.where(fired, np.arange(k.size), -1)
    np.maximum.accumulate(last, out=last)
    r = np.where(last >= 0, lab[np.maximum(last, 0)], 0)
    return JumpProcess.from_sequence(r, cfg.tau, traj.n_macrostates)
