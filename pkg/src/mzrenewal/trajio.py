"""Trajectory ingestion and synthetic trajectory generators.

Macrostate ids are 1-based everywhere a label is visible to the user
(trajectory files, entries, dictionaries). Microstates of a finite chain
are 0-based row indices of its transition matrix.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

from .errors import ConfigurationError, NumericalDiagnosticError

__all__ = [
    "LabeledTrajectory",
    "Rectangle",
    "MacrostateGeometry",
    "FiniteChainSpec",
    "LangevinPotential",
    "assign_macrostates",
    "label_coordinates",
    "sample_finite_chain",
    "sample_langevin",
    "read_trajectory_csv",
    "write_labels_csv",
    "write_points_csv",
]


@dataclass
class LabeledTrajectory:
    """Macrostate labels of a fine-grained trajectory sampled every `fine_step`."""

    labels: np.ndarray
    fine_step: float
    n_macrostates: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1 or self.labels.size < 2:
            raise ConfigurationError("trajectory needs at least 2 samples")
        if not self.fine_step > 0:
            raise ConfigurationError(f"fine_step must be positive, got {self.fine_step}")
        self.n_macrostates = int(self.n_macrostates)
        lo, hi = self.labels.min(), self.labels.max()
        if lo < 1 or hi > self.n_macrostates:
            raise ConfigurationError(
                f"labels must lie in 1..{self.n_macrostates}, found range {lo}..{hi}"
            )

    def __len__(self):
        return self.labels.size

    def split(self, fraction=0.5):
        """Split into two contiguous pieces (e.g. train/test)."""
        cut = int(round(fraction * len(self)))
        return (
            LabeledTrajectory(self.labels[:cut], self.fine_step, self.n_macrostates),
            LabeledTrajectory(self.labels[cut:], self.fine_step, self.n_macrostates),
        )


@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned half-open box ``[xmin, xmax) x [ymin, ymax)``."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ConfigurationError(f"degenerate rectangle {self}")

    def contains(self, points):
        points = np.atleast_2d(points)
        x, y = points[:, 0], points[:, 1]
        return (x >= self.xmin) & (x < self.xmax) & (y >= self.ymin) & (y < self.ymax)

    def overlaps(self, other):
        return (
            self.xmin < other.xmax
            and other.xmin < self.xmax
            and self.ymin < other.ymax
            and other.ymin < self.ymax
        )

    @property
    def center(self):
        return (0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))


@dataclass
class MacrostateGeometry:
    """Macrostates as disjoint rectangles; macrostate ``k`` is ``rectangles[k-1]``."""

    rectangles: list

    def __post_init__(self):
        self.rectangles = [
            r if isinstance(r, Rectangle) else Rectangle(**r) for r in self.rectangles
        ]
        if not self.rectangles:
            raise ConfigurationError("geometry has no rectangles")
        for i, a in enumerate(self.rectangles):
            for j in range(i + 1, len(self.rectangles)):
                if a.overlaps(self.rectangles[j]):
                    raise ConfigurationError(f"rectangles {i + 1} and {j + 1} overlap")

    @property
    def n_macrostates(self):
        return len(self.rectangles)

    @classmethod
    def grid(cls, xedges, yedges):
        """Tile a box with a grid of rectangles, x index outermost.

        For quadrants, ``grid([-1, 0, 1], [-1, 0, 1])`` orders the cells
        lower-left, upper-left, lower-right, upper-right.
        """
        rects = []
        for x0, x1 in zip(xedges[:-1], xedges[1:]):
            for y0, y1 in zip(yedges[:-1], yedges[1:]):
                rects.append(Rectangle(float(x0), float(x1), float(y0), float(y1)))
        return cls(rects)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        try:
            return cls(list(doc["rectangles"]))
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"{path}: malformed geometry document ({exc})") from exc

    def to_json(self, path):
        doc = {
            "rectangles": [
                {"xmin": r.xmin, "xmax": r.xmax, "ymin": r.ymin, "ymax": r.ymax}
                for r in self.rectangles
            ]
        }
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def assign_macrostates(points, geom: MacrostateGeometry) -> np.ndarray:
    """Return the 1-based id of the rectangle containing each 2D point."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ConfigurationError(f"points must have shape (n, 2), got {points.shape}")
    labels = np.zeros(len(points), dtype=np.int64)
    for k, rect in enumerate(geom.rectangles, start=1):
        labels[rect.contains(points)] = k
    outside = np.flatnonzero(labels == 0)
    if outside.size:
        i = int(outside[0])
        raise ConfigurationError(
            f"point {i} at ({points[i, 0]:g}, {points[i, 1]:g}) is outside all macrostates"
            f" ({outside.size} such points)"
        )
    return labels


def label_coordinates(points, geom: MacrostateGeometry, fine_step: float) -> LabeledTrajectory:
    """Label a coordinate trajectory by macrostate."""
    return LabeledTrajectory(assign_macrostates(points, geom), fine_step, geom.n_macrostates)


@dataclass
class FiniteChainSpec:
    """Finite microstate chain with a macrostate labeling.

    Parameters
    ----------
    transition_matrix : (n, n) array_like
        Row-stochastic matrix of the microstate chain over one fine step.
    labeling : (n,) array_like of int
        Macrostate id (1..N) of each microstate.
    """

    transition_matrix: np.ndarray
    labeling: np.ndarray
    n_macrostates: int = field(init=False)

    def __post_init__(self):
        m = np.asarray(self.transition_matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ConfigurationError(f"transition matrix must be square, got {m.shape}")
        if np.any(m < 0):
            raise ConfigurationError("transition matrix has negative entries")
        dev = np.abs(m.sum(axis=1) - 1.0)
        if np.any(dev > 1e-12):
            bad = int(np.argmax(dev))
            raise ConfigurationError(
                f"row {bad} of the transition matrix sums to {m[bad].sum():.15g}, not 1"
            )
        lab = np.asarray(self.labeling, dtype=np.int64)
        if lab.shape != (m.shape[0],):
            raise ConfigurationError("labeling must give one macrostate per microstate")
        n_macro = int(lab.max())
        if lab.min() < 1 or set(np.unique(lab)) != set(range(1, n_macro + 1)):
            raise ConfigurationError("labeling must be surjective onto 1..N")
        self.transition_matrix = m
        self.labeling = lab
        self.n_macrostates = n_macro

    @property
    def n_microstates(self):
        return self.transition_matrix.shape[0]

    def microstates_of(self, macrostate):
        return np.flatnonzero(self.labeling == macrostate)

    def stationary_distribution(self):
        """Left Perron eigenvector of the transition matrix, normalized to sum 1."""
        w, v = np.linalg.eig(self.transition_matrix.T)
        pi = np.real(v[:, np.argmin(np.abs(w - 1.0))])
        return pi / pi.sum()

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        try:
            return cls(doc["matrix"], doc["labels"])
        except KeyError as exc:
            raise ConfigurationError(f"{path}: missing key {exc}") from exc

    def to_json(self, path):
        doc = {"matrix": self.transition_matrix.tolist(), "labels": self.labeling.tolist()}
        Path(path).write_text(json.dumps(doc) + "\n")


@numba.njit(cache=True)
def _chain_walk(cum, start, u):
    n = u.size
    out = np.empty(n + 1, dtype=np.int64)
    x = start
    out[0] = x
    width = cum.shape[1]
    for k in range(n):
        row = cum[x]
        j = np.searchsorted(row, u[k], side="right")
        if j >= width:
            j = width - 1
        x = j
        out[k + 1] = x
    return out


def sample_finite_chain(spec: FiniteChainSpec, steps: int, start: int, seed: int,
                        fine_step: float = 1.0, return_microstates=False):
    """Sample ``steps`` transitions of the chain from microstate `start`.

    Returns a trajectory of ``steps + 1`` labels (and optionally the
    microstate path). The generator is numpy's PCG64 seeded with `seed`.
    """
    if steps < 1:
        raise ConfigurationError("steps must be >= 1")
    if not 0 <= start < spec.n_microstates:
        raise ConfigurationError(f"start microstate {start} out of range")
    cum = np.cumsum(spec.transition_matrix, axis=1)
    cum[:, -1] = 1.0
    u = np.random.default_rng(seed).random(steps)
    path = _chain_walk(cum, int(start), u)
    traj = LabeledTrajectory(spec.labeling[path], fine_step, spec.n_macrostates)
    if return_microstates:
        return traj, path
    return traj


@dataclass(frozen=True)
class LangevinPotential:
    """Four-well potential ``(x^2-1)^2 + (y^2-1)^2 + c*x*y``."""

    coupling: float = 0.3

    def energy(self, x, y):
        return (x * x - 1) ** 2 + (y * y - 1) ** 2 + self.coupling * x * y

    def gradient(self, x, y):
        c = self.coupling
        return 4 * x * (x * x - 1) + c * y, 4 * y * (y * y - 1) + c * x


@numba.njit(cache=True)
def _euler_maruyama(x0, y0, c, dt, scale, noise, bound):
    n = noise.shape[0]
    out = np.empty((n + 1, 2))
    x, y = x0, y0
    out[0, 0] = x
    out[0, 1] = y
    for k in range(n):
        gx = 4.0 * x * (x * x - 1.0) + c * y
        gy = 4.0 * y * (y * y - 1.0) + c * x
        x = x - dt * gx + scale * noise[k, 0]
        y = y - dt * gy + scale * noise[k, 1]
        if not (abs(x) <= bound and abs(y) <= bound):
            return out[: k + 1], k + 1
        out[k + 1, 0] = x
        out[k + 1, 1] = y
    return out, -1


def sample_langevin(potential=None, beta=3.0, dt=1e-3, steps=1000, seed=0,
                    start=(1.0, 1.0), bound=10.0):
    """Euler-Maruyama path of overdamped Langevin dynamics.

    ``dX = -grad V(X) dt + sqrt(2/beta) dW``. Pass ``beta=np.inf`` for the
    noiseless gradient flow. Returns an array of shape ``(steps + 1, 2)``.
    """
    if potential is None:
        potential = LangevinPotential()
    elif isinstance(potential, dict):
        potential = LangevinPotential(**potential)
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    if steps < 1:
        raise ConfigurationError("steps must be >= 1")
    if not beta > 0:
        raise ConfigurationError("beta must be positive")
    scale = 0.0 if np.isinf(beta) else np.sqrt(2.0 * dt / beta)
    noise = np.random.default_rng(seed).standard_normal((steps, 2))
    out, failed_at = _euler_maruyama(
        float(start[0]), float(start[1]), float(potential.coupling), float(dt),
        float(scale), noise, float(bound),
    )
    if failed_at >= 0:
        raise NumericalDiagnosticError(
            f"Langevin trajectory left |x|,|y| <= {bound} at step {failed_at};"
            " use a smaller dt"
        )
    return out


def read_trajectory_csv(path, fine_step=None, n_macrostates=None):
    """Read a ``step,label`` or ``step,x,y`` CSV.

    Returns a `LabeledTrajectory` for label files (needs `fine_step`) and
    an ``(n, 2)`` point array for coordinate files.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"input file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        rows = [row for row in reader if row]
    if header == ["step", "label"]:
        if fine_step is None:
            raise ConfigurationError("fine_step is required to load a label trajectory")
        labels = np.array([int(r[1]) for r in rows], dtype=np.int64)
        if n_macrostates is None:
            n_macrostates = int(labels.max()) if labels.size else 1
        return LabeledTrajectory(labels, fine_step, n_macrostates)
    if header == ["step", "x", "y"]:
        return np.array([[float(r[1]), float(r[2])] for r in rows])
    raise ConfigurationError(f"{path}: unrecognized header {header}")


def write_labels_csv(path, traj: LabeledTrajectory):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "label"])
        w.writerows(zip(range(len(traj)), traj.labels.tolist()))


def write_points_csv(path, points: Sequence):
    points = np.asarray(points, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "x", "y"])
        for k, (x, y) in enumerate(points.tolist()):
            w.writerow([k, repr(x), repr(y)])
