import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mzrenewal import (
    CorrelationSystem,
    FitConfig,
    KernelSeries,
    TransitionSeries,
    build_correlation_system,
    fit_kernels,
    infer_transitions,
    loss_and_gradient,
)
from mzrenewal.errors import ConfigurationError, NumericalDiagnosticError


def random_series(rng, n_states, n_lags, tau=1.0):
    mats = rng.random((n_lags + 1, n_states, n_states))
    mats /= mats.sum(axis=2, keepdims=True)
    mats[0] = np.eye(n_states)
    return TransitionSeries(tau, mats)


def markov_series(rng, n_states, n_lags):
    m = rng.random((n_states, n_states))
    m /= m.sum(axis=1, keepdims=True)
    return m, TransitionSeries(1.0, np.stack([np.linalg.matrix_power(m, n) for n in range(n_lags + 1)]))


def test_scalar_system():
    ts = TransitionSeries(1.0, np.ones((3, 1, 1)))
    cs = build_correlation_system(ts, FitConfig(1.0, 2.0))
    assert cs.gram.tolist() == [[2.0]]
    assert cs.rhs.tolist() == [[2.0]]


def test_single_block_gram(rng):
    ts = random_series(rng, 3, 6)
    cs = build_correlation_system(ts, FitConfig(1.0, 6.0))
    expected = sum(ts.matrices[r - 1] @ ts.matrices[r - 1].T for r in range(1, 7))
    np.testing.assert_allclose(cs.gram, expected, atol=1e-14)


def test_blocks_match_correlation_sums(rng):
    ts = random_series(rng, 3, 8)
    m, n_max = 3, 8
    cs = build_correlation_system(ts, FitConfig(float(m), float(n_max)))

    def t(k):
        return ts.matrices[k] if k >= 0 else np.zeros((3, 3))

    for s in range(1, m + 1):
        for u in range(1, m + 1):
            expected = sum(t(r - s) @ t(r - u).T for r in range(1, n_max + 1))
            np.testing.assert_allclose(cs.block(s, u), expected, atol=1e-13)
        b = sum(t(r) @ t(r - s).T for r in range(1, n_max + 1))
        np.testing.assert_allclose(cs.rhs[:, (s - 1) * 3 : s * 3], b, atol=1e-13)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(0, 2**31))
def test_gram_symmetric_psd(n_states, m, seed):
    ts = random_series(np.random.default_rng(seed), n_states, 2 * m + 2)
    g = build_correlation_system(ts, FitConfig(float(m), float(2 * m + 2))).gram
    assert np.abs(g - g.T).max() <= 1e-12
    assert np.linalg.eigvalsh(g).min() >= -1e-10 * np.linalg.norm(g)


def test_t_mem_beyond_t_max():
    with pytest.raises(ConfigurationError, match="exceeds"):
        FitConfig(5.0, 4.0).lags(1.0)


def test_series_too_short(rng):
    with pytest.raises(ConfigurationError, match="covers"):
        build_correlation_system(random_series(rng, 2, 3), FitConfig(1.0, 5.0))


def test_markov_single_kernel(rng):
    m, ts = markov_series(rng, 3, 10)
    ks = fit_kernels(build_correlation_system(ts, FitConfig(1.0, 10.0, 0.0)), FitConfig(1.0, 10.0, 0.0))
    np.testing.assert_allclose(ks.kernels[0], m, atol=1e-10)


def test_markov_collapse(rng):
    m, ts = markov_series(rng, 3, 12)
    cfg = FitConfig(3.0, 12.0, 0.0)
    ks = fit_kernels(build_correlation_system(ts, cfg), cfg)
    np.testing.assert_allclose(ks.kernels[0], m, atol=1e-8)
    assert np.abs(ks.kernels[1:]).max() <= 1e-8
    assert ks.loss < 1e-16


def test_default_ridge_scale(rng):
    ts = random_series(rng, 3, 10)
    cfg = FitConfig(2.0, 10.0)
    cs = build_correlation_system(ts, cfg)
    ks = fit_kernels(cs, cfg)
    assert ks.lam == pytest.approx(1e-6 * np.trace(cs.gram) / 6)


def test_ridge_shrinks_kernel_norm(rng):
    ts = random_series(rng, 3, 12)
    norms = []
    for lam in [0.0, 1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0]:
        cfg = FitConfig(4.0, 12.0, lam)
        ks = fit_kernels(build_correlation_system(ts, cfg), cfg)
        norms.append(np.sum(ks.kernels**2))
    assert all(b <= a * (1 + 1e-12) for a, b in zip(norms, norms[1:]))


def test_zero_kernels_loss(rng):
    ts = random_series(rng, 3, 7)
    cfg = FitConfig(2.0, 7.0, 0.0)
    loss, _ = loss_and_gradient(KernelSeries(1.0, np.zeros((2, 3, 3))), ts, cfg)
    assert loss == pytest.approx(np.sum(ts.matrices[1:] ** 2), rel=1e-14)


@pytest.mark.parametrize("lam", [0.0, 0.3])
def test_gradient_finite_differences(rng, lam):
    ts = random_series(rng, 3, 8)
    cfg = FitConfig(3.0, 8.0, lam)
    k = rng.normal(size=(3, 3, 3))
    _, grad = loss_and_gradient(KernelSeries(1.0, k), ts, cfg)
    h = 1e-6
    fd = np.zeros_like(k)
    for idx in np.ndindex(k.shape):
        kp, km = k.copy(), k.copy()
        kp[idx] += h
        km[idx] -= h
        fd[idx] = (loss_and_gradient(KernelSeries(1.0, kp), ts, cfg)[0]
                   - loss_and_gradient(KernelSeries(1.0, km), ts, cfg)[0]) / (2 * h)
    assert np.abs(grad - fd).max() / np.abs(fd).max() <= 1e-6


def test_fitted_kernels_are_stationary(rng):
    ts = random_series(rng, 3, 10)
    for lam in [0.0, 0.05]:
        cfg = FitConfig(3.0, 10.0, lam)
        cs = build_correlation_system(ts, cfg)
        ks = fit_kernels(cs, cfg)
        loss, grad = loss_and_gradient(ks, ts, cfg)
        assert np.abs(grad).max() <= 1e-8 * max(1.0, np.abs(cs.rhs).max())
        assert ks.loss == pytest.approx(loss - lam * np.sum(ks.kernels**2), rel=1e-8, abs=1e-12)


def test_singular_gram_falls_back():
    cs = CorrelationSystem(1.0, 2, np.ones((2, 2)), np.array([[1.0, 1.0]]), 1.0)
    with pytest.warns(UserWarning, match="minimum-norm"):
        ks = fit_kernels(cs, FitConfig(2.0, 2.0, 0.0))
    assert ks.diagnostics["fallback"] is True
    np.testing.assert_allclose(ks.kernels.ravel(), [0.5, 0.5])


def test_missing_rows_are_zeroed_with_warning(rng):
    ts = random_series(rng, 2, 6)
    ts.matrices[3, 1] = np.nan
    with pytest.warns(UserWarning, match="excluded"):
        build_correlation_system(ts, FitConfig(1.0, 6.0))


def test_inference_single_kernel():
    ks = KernelSeries(1.0, [[[0.9, 0.1], [0.2, 0.8]]])
    out = infer_transitions(ks, 2.0)
    np.testing.assert_allclose(out.matrices[2], [[0.83, 0.17], [0.34, 0.66]], atol=1e-15)
    assert infer_transitions(ks, 0.0).matrices.tolist() == [[[1.0, 0.0], [0.0, 1.0]]]


def test_inference_divergence():
    ks = KernelSeries(1.0, [[[2.0, 0.0], [0.0, 1.0]]])
    with pytest.raises(NumericalDiagnosticError, match="diverge"):
        infer_transitions(ks, 10.0)


def test_inference_reports_row_sum_deviation():
    ks = KernelSeries(1.0, [[[0.8, 0.1], [0.2, 0.8]]])
    out = infer_transitions(ks, 2.0)
    assert out.diagnostics["row_sum_deviation"][1] == pytest.approx(0.1)


def test_kernel_json_round_trip(tmp_path, rng):
    ts = random_series(rng, 2, 6)
    cfg = FitConfig(2.0, 6.0)
    ks = fit_kernels(build_correlation_system(ts, cfg), cfg)
    ks.to_json(tmp_path / "k.json")
    back = KernelSeries.from_json(tmp_path / "k.json")
    np.testing.assert_array_equal(back.kernels, ks.kernels)
    assert back.lam == ks.lam and back.tau == ks.tau
