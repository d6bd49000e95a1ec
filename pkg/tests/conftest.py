import itertools

import numpy as np
import pytest

from mzrenewal import DecorrelationConfig, FiniteChainSpec, JumpDistribution, LabeledTrajectory, build_jump_process


def random_chain(rng, n_micro, n_macro, density=0.7):
    """Random chain with irreducible restrictions to each macrostate."""
    while True:
        labels = np.concatenate([np.arange(1, n_macro + 1), rng.integers(1, n_macro + 1, n_micro - n_macro)])
        rng.shuffle(labels)
        m = rng.random((n_micro, n_micro)) * (rng.random((n_micro, n_micro)) < density)
        for i in range(1, n_macro + 1):
            idx = np.flatnonzero(labels == i)
            # a cycle inside each macrostate keeps its restriction irreducible
            for a, b in zip(idx, np.roll(idx, -1)):
                m[a, b] += 0.2
        m += np.eye(n_micro) * 0.1
        m /= m.sum(axis=1, keepdims=True)
        return FiniteChainSpec(m, labels)


def metastable_chain(rng, sizes, eps):
    labels = np.repeat(np.arange(1, len(sizes) + 1), sizes)
    n = labels.size
    same = labels[:, None] == labels[None, :]
    m = np.where(same, rng.random((n, n)) + 0.5, rng.random((n, n)) * eps)
    m /= m.sum(axis=1, keepdims=True)
    return FiniteChainSpec(m, labels)


def gateway_chain(a=0.2, e=0.05):
    """Two wells of two microstates joined through their inner microstates."""
    m = np.array([
        [1 - a, a, 0, 0],
        [a, 1 - a - e, e, 0],
        [0, e, 1 - a - e, a],
        [0, 0, a, 1 - a],
    ])
    return FiniteChainSpec(m, [1, 1, 2, 2])


def random_jump_distribution(rng, n_states, support, tau=1.0, tail=0.0):
    masses = rng.random((support + 1, n_states, n_states))
    masses[0] = 0.0
    idx = np.arange(n_states)
    masses[:, idx, idx] = 0.0
    masses *= (1.0 - tail) / masses.sum(axis=(0, 2))[None, :, None]
    return JumpDistribution(tau, masses)


def enumerate_paths(spec, q, n):
    """Brute-force exact transitions and first-jump masses from decorrelated entries.

    Every microstate path of length `n` after an entry is pushed through the
    fine-grid jump-process construction, with the entry condition realized by
    prepending `q_I` samples in the entry macrostate. Entry microstates are
    weighted by the stationary law restricted to the macrostate and
    renormalized only after the QSD is supplied by the caller, so this
    returns per-microstate results.
    """
    nm = spec.n_macrostates
    qs = np.full(nm, q) if np.ndim(q) == 0 else np.asarray(q)
    lab = spec.labeling
    mat = spec.transition_matrix
    n_micro = spec.n_microstates
    trans = np.zeros((n_micro, n + 1, nm))
    first = np.zeros((n_micro, n + 1, nm))
    for x in range(n_micro):
        big_i = int(lab[x])
        for path in itertools.product(range(n_micro), repeat=n):
            full = (x,) + path
            p = np.prod([mat[a, b] for a, b in zip(full[:-1], full[1:])])
            if p == 0:
                continue
            labels = np.concatenate([np.full(qs[big_i - 1], big_i), lab[list(full)]])
            traj = LabeledTrajectory(labels, 1.0, nm)
            jp = build_jump_process(traj, DecorrelationConfig(1.0, dict(enumerate(qs.astype(float), 1))))
            r = jp.r[qs[big_i - 1]:]
            assert r[0] == big_i
            trans[x, np.arange(n + 1), r - 1] += p
            moved = np.flatnonzero(r != big_i)
            if moved.size:
                first[x, moved[0], r[moved[0]] - 1] += p
    return trans, first


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
