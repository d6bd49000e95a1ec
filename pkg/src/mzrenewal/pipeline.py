"""End-to-end coarse-graining runs shared by the CLI and the acceptance suite."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalDiagnosticError
from .estimate import estimate_jump_distribution, estimate_transitions
from .jumpproc import DecorrelationConfig, build_jump_process
from .metrics import cvm_error, markov_baseline, series_distance
from .mzkernel import FitConfig, build_correlation_system, fit_kernels, infer_transitions
from .renewal import renewal_invert
from .trajio import LabeledTrajectory

__all__ = ["PipelineSettings", "kernel_count_study", "baseline_comparison"]


@dataclass
class PipelineSettings:
    """Times in physical units; all must be multiples of `tau` (itself a multiple of the fine step).

    ``t_trunc`` and ``horizon`` default to `t_max`. Inversion of inferred
    (noisy) transition matrices clamps negative masses up to
    `invert_tol` and tolerates row-sum and diagonal deviations up to
    `invert_consistency`.
    """

    tau: float
    tau_I: object = None
    t_max: float | None = None
    t_mem: float | None = None
    lam: float | None = None
    t_trunc: float | None = None
    horizon: float | None = None
    invert_tol: float = np.inf
    invert_consistency: float = np.inf
    shared_normalization: bool = False
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.t_max is None:
            self.t_max = 30 * self.tau
        if self.t_mem is None:
            self.t_mem = 0.5 * self.t_max
        if self.t_trunc is None:
            self.t_trunc = self.t_max
        if self.horizon is None:
            self.horizon = self.t_trunc

    @property
    def decorrelation(self):
        return DecorrelationConfig(self.tau, self.tau_I)


def _fit_and_invert(ts_train, settings, t_mem):
    cfg = FitConfig(t_mem, settings.t_max, settings.lam)
    kernels = fit_kernels(build_correlation_system(ts_train, cfg), cfg)
    inferred = infer_transitions(kernels, settings.horizon)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        p_hat = renewal_invert(
            inferred,
            tol=settings.invert_tol,
            consistency_bound=settings.invert_consistency,
            stochastic_tol=settings.invert_consistency,
        )
    return kernels, inferred, p_hat


def kernel_count_study(train: LabeledTrajectory, test: LabeledTrajectory,
                       settings: PipelineSettings, kernel_counts) -> dict:
    """Error of the memory-kernel model against reference counts, per kernel count.

    Fits on `train`, builds the reference jump distribution by simple
    counts on `test`, and for each kernel count ``m`` (``t_mem = m tau``)
    infers transition matrices, inverts the renewal equation and scores the
    result with `cvm_error`. Returns a summary with one row per count.
    """
    dec = settings.decorrelation
    jp_train = build_jump_process(train, dec)
    jp_test = build_jump_process(test, dec)
    ts_train = estimate_transitions(jp_train, settings.t_max)
    ts_test = estimate_transitions(jp_test, settings.t_max)
    p_ref = estimate_jump_distribution(jp_test, settings.t_trunc)
    rows = []
    for m in kernel_counts:
        t_mem = m * settings.tau
        try:
            kernels, inferred, p_hat = _fit_and_invert(ts_train, settings, t_mem)
        except NumericalDiagnosticError as exc:
            rows.append({"kernels": int(m), "t_mem": t_mem, "error": float("nan"), "failure": str(exc)})
            continue
        report = cvm_error(p_ref, p_hat, settings.shared_normalization)
        dist = series_distance(inferred, ts_test)
        rows.append({
            "kernels": int(m),
            "t_mem": t_mem,
            "error": report.total,
            "fit_loss": kernels.loss,
            "lambda": kernels.lam,
            "condition": kernels.diagnostics["condition"],
            "fit": kernels.diagnostics,
            "max_abs_vs_test": max(dist["max_abs"]),
            "inversion": p_hat.diagnostics,
            "max_row_sum_deviation": max(inferred.diagnostics["row_sum_deviation"]),
        })
    return {
        "tau": settings.tau,
        "t_max": settings.t_max,
        "t_trunc": settings.t_trunc,
        "horizon": settings.horizon,
        "train_entries": int(jp_train.entries.shape[0]),
        "test_entries": int(jp_test.entries.shape[0]),
        "train_burn_in": jp_train.burn_in,
        "test_burn_in": jp_test.burn_in,
        "train_transitions": ts_train.diagnostics,
        "test_transitions": ts_test.diagnostics,
        "reference_tail": p_ref.tail.tolist(),
        "reference_censored": p_ref.censored.tolist(),
        "rows": rows,
    }


def baseline_comparison(train: LabeledTrajectory, test: LabeledTrajectory,
                        settings: PipelineSettings, n_kernels: int, n_lags: int) -> dict:
    """Per-lag deviation from the test reference of a lag-tau Markov model and of the memory model.

    The Markov model counts transitions of the raw macrostate sequence
    sampled every tau (the jump process with zero decorrelation times).
    """
    dec = settings.decorrelation
    jp_train = build_jump_process(train, dec)
    ts_train = estimate_transitions(jp_train, settings.t_max)
    reference = estimate_transitions(build_jump_process(test, dec), n_lags * settings.tau)
    raw = build_jump_process(train, DecorrelationConfig(settings.tau, 0.0))
    baseline = markov_baseline(raw, settings.tau, n_lags * settings.tau)
    cfg = FitConfig(n_kernels * settings.tau, settings.t_max, settings.lam)
    kernels = fit_kernels(build_correlation_system(ts_train, cfg), cfg)
    inferred = infer_transitions(kernels, n_lags * settings.tau)
    d_base = series_distance(baseline, reference)["max_abs"]
    d_mz = series_distance(inferred, reference)["max_abs"]
    return {
        "lag": [n * settings.tau for n in range(n_lags + 1)],
        "markov_max_abs": d_base,
        "mz_max_abs": d_mz,
        "ratio": [b / m if m > 0 else float("inf") for b, m in zip(d_base, d_mz)],
    }
