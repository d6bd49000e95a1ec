"""Sampling of discrete-time Markov renewal processes."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericalDiagnosticError
from .estimate import JumpDistribution
from .jumpproc import JumpProcess, steps_of

__all__ = ["MrpTrajectory", "simulate_mrp", "expand_to_grid"]


@dataclass
class MrpTrajectory:
    """Jump entries ``(n, I)`` (coarse index, 1-based state) up to coarse index `horizon`."""

    entries: np.ndarray
    horizon: int
    tau: float
    n_states: int
    seed: int | None = None

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.int64).reshape(-1, 2)

    @property
    def n_jumps(self):
        return max(self.entries.shape[0] - 1, 0)


def simulate_mrp(jd: JumpDistribution, start: int, horizon: float | None, seed: int,
                 max_jumps: int | None = None, tail_tol=1e-6) -> MrpTrajectory:
    """Sample the renewal process defined by `jd` starting with an entry into `start`.

    Each holding interval draws the pair (destination, holding time) from
    the current state's masses by inverse CDF on a PCG64 stream seeded by
    `seed`. Sampling stops at `horizon` (a time) or after `max_jumps`
    jumps, whichever comes first. Tail mass is dropped and the masses
    renormalized, with a warning when it exceeds `tail_tol`.
    """
    n = jd.n_states
    if not 1 <= start <= n:
        raise ConfigurationError(f"start state {start} out of range 1..{n}")
    if horizon is None and max_jumps is None:
        raise ConfigurationError("need a horizon or max_jumps")
    h = None if horizon is None else steps_of(horizon, jd.tau, "horizon")
    if np.any(jd.masses < 0):
        raise ConfigurationError("jump distribution has negative masses")
    # per-state flattened (lag, destination) masses
    flat = jd.masses.transpose(1, 0, 2).reshape(n, -1)
    totals = flat.sum(axis=1)
    if np.any(1.0 - totals > tail_tol):
        warnings.warn(
            f"dropping tail mass up to {np.max(1.0 - totals):.3g} and renormalizing"
        )
    cum = np.cumsum(flat, axis=1)
    rng = np.random.default_rng(seed)
    entries = [(0, start)]
    t, state = 0, start - 1
    chunk = np.empty(0)
    pos = 0
    while True:
        if max_jumps is not None and len(entries) - 1 >= max_jumps:
            break
        if totals[state] <= 0:
            raise NumericalDiagnosticError(
                f"state {state + 1} has no outgoing mass: absorbing under truncation"
            )
        if pos == chunk.size:
            chunk = rng.random(4096)
            pos = 0
        u = chunk[pos] * totals[state]
        pos += 1
        k = min(int(np.searchsorted(cum[state], u, side="right")), flat.shape[1] - 1)
        lag, dest = divmod(k, n)
        t += lag
        if h is not None and t > h:
            break
        entries.append((t, dest + 1))
        state = dest
    if h is None:
        h = entries[-1][0]
    return MrpTrajectory(np.array(entries), h, jd.tau, n, seed)


def expand_to_grid(mt: MrpTrajectory) -> JumpProcess:
    """Piecewise-constant jump process on coarse indices ``0..horizon``."""
    if mt.entries.shape[0] == 0:
        raise ConfigurationError("trajectory has no entries")
    r = np.zeros(mt.horizon + 1, dtype=np.int64)
    starts = mt.entries[:, 0]
    stops = np.append(starts[1:], mt.horizon + 1)
    for (a, state), b in zip(mt.entries, stops):
        r[a:b] = state
    burn_in = int(starts[0])
    return JumpProcess(r, mt.entries, mt.tau, burn_in, mt.n_states)
