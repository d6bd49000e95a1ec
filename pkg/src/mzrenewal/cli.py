"""Command-line interface.

Every subcommand reads and writes the package's CSV/JSON formats. Defaults
come from a JSON config file (``--config`` or ``$MZRENEWAL_CONFIG``) and
are overridden by flags. Exit status: 0 success, 1 invalid input or
configuration, 2 numerical diagnostic failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import oracle
from .errors import ConfigurationError, NumericalDiagnosticError
from .estimate import (
    JumpDistribution,
    TransitionSeries,
    estimate_jump_distribution,
    estimate_transitions,
)
from .jumpproc import DecorrelationConfig, JumpProcess, build_jump_process, steps_of
from .metrics import cvm_error, markov_baseline
from .mrpsim import expand_to_grid, simulate_mrp
from .mzkernel import FitConfig, KernelSeries, build_correlation_system, fit_kernels, infer_transitions
from .pipeline import PipelineSettings, baseline_comparison, kernel_count_study
from .renewal import renewal_invert
from .trajio import (
    FiniteChainSpec,
    LangevinPotential,
    MacrostateGeometry,
    label_coordinates,
    read_trajectory_csv,
    sample_finite_chain,
    sample_langevin,
    write_labels_csv,
    write_points_csv,
)

log = logging.getLogger("mzrenewal")

CONFIG_ENV = "MZRENEWAL_CONFIG"


@dataclass
class RunConfig:
    """Physical-time parameters shared by the subcommands."""

    fine_step: float = 1.0
    tau: float = 30.0
    tau_I: object = None
    t_max: float = 900.0
    t_mem: float = 450.0
    lam: float | None = None
    t_trunc: float | None = None
    horizon: float | None = None
    seed: int = 0
    n_macrostates: int | None = None
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)


def validate_config(cfg: RunConfig):
    """Check grid multiplicities and fill defaults.

    Returns ``(cfg, warnings)``; raises `ConfigurationError` listing every
    offending field at once.
    """
    errors, notes = [], []

    def check(name, fn):
        try:
            return fn()
        except ConfigurationError as exc:
            errors.append(f"{name}: {exc}")
            return None

    if not (isinstance(cfg.fine_step, (int, float)) and cfg.fine_step > 0):
        raise ConfigurationError(f"fine_step: must be positive, got {cfg.fine_step}")
    check("tau", lambda: steps_of(cfg.tau, cfg.fine_step, "tau", minimum=1))
    if cfg.tau_I is None:
        cfg.tau_I = cfg.tau
    if cfg.tau > 0:
        tau_i = cfg.tau_I.values() if isinstance(cfg.tau_I, dict) else np.atleast_1d(cfg.tau_I)
        for t in tau_i:
            check("tau_I", lambda t=t: steps_of(float(t), cfg.fine_step, "tau_I"))
        m = check("t_mem", lambda: steps_of(cfg.t_mem, cfg.tau, "t_mem", minimum=1))
        n = check("t_max", lambda: steps_of(cfg.t_max, cfg.tau, "t_max", minimum=1))
        if m is not None and n is not None:
            if m > n:
                errors.append(f"t_mem: {cfg.t_mem:g} exceeds t_max={cfg.t_max:g}")
            elif cfg.t_mem > 0.6 * cfg.t_max:
                notes.append(
                    f"t_mem={cfg.t_mem:g} is close to t_max={cfg.t_max:g}: fewer terms to"
                    " optimize over in the loss, expect noisier kernels (t_mem ~ 0.5 t_max works well)"
                )
            elif cfg.t_mem < 0.2 * cfg.t_max:
                notes.append(
                    f"t_mem={cfg.t_mem:g} is far below t_max={cfg.t_max:g};"
                    " t_mem ~ 0.5 t_max works well"
                )
        if cfg.t_trunc is None:
            cfg.t_trunc = cfg.t_max
        if cfg.horizon is None:
            cfg.horizon = cfg.t_trunc
        check("t_trunc", lambda: steps_of(cfg.t_trunc, cfg.tau, "t_trunc"))
        check("horizon", lambda: steps_of(cfg.horizon, cfg.tau, "horizon"))
    if cfg.lam is not None and cfg.lam < 0:
        errors.append(f"lambda: must be >= 0, got {cfg.lam}")
    for key, path in cfg.outputs.items():
        parent = Path(path).parent
        if parent and not parent.exists():
            try:
                parent.mkdir(parents=True, exist_ok=True)
            except OSError as exc:
                errors.append(f"{key}: cannot create {parent} ({exc})")
    for key, path in cfg.inputs.items():
        if path is not None and not Path(path).exists():
            errors.append(f"{key}: input file not found: {path}")
    if errors:
        raise ConfigurationError("; ".join(errors))
    return cfg, notes


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


_CONFIG_FIELDS = {f.name for f in dataclasses.fields(RunConfig)} - {"inputs", "outputs"}


def _load_config(args) -> RunConfig:
    path = args.config or os.environ.get(CONFIG_ENV)
    values = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigurationError(f"config file not found: {p}")
        doc = json.loads(p.read_text())
        if "lambda" in doc:
            doc["lam"] = doc.pop("lambda")
        unknown = set(doc) - _CONFIG_FIELDS
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        values.update(doc)
    for name in _CONFIG_FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    cfg = RunConfig(**values)
    cfg.inputs = {k: getattr(args, k) for k in getattr(args, "_inputs", []) if getattr(args, k, None)}
    cfg.outputs = {k: getattr(args, k) for k in getattr(args, "_outputs", []) if getattr(args, k, None)}
    cfg, notes = validate_config(cfg)
    for note in notes:
        log.warning(note)
    return cfg


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _load_labels(cfg, path):
    return read_trajectory_csv(path, cfg.fine_step, cfg.n_macrostates)


def _load_jump_process(path):
    return JumpProcess.from_files(path)


# subcommands -------------------------------------------------------------


def cmd_gen_langevin(args, cfg):
    pts = sample_langevin(LangevinPotential(args.coupling), args.beta, args.dt, args.steps,
                          cfg.seed, bound=args.bound)
    write_points_csv(args.out, pts)


def cmd_gen_chain(args, cfg):
    spec = FiniteChainSpec.from_json(args.chain)
    traj = sample_finite_chain(spec, args.steps, args.start, cfg.seed, cfg.fine_step)
    write_labels_csv(args.out, traj)


def _geometry(args):
    if args.geometry:
        return MacrostateGeometry.from_json(args.geometry)
    b = args.bound
    return MacrostateGeometry.grid([-b, 0.0, b], [-b, 0.0, b])


def cmd_label(args, cfg):
    pts = read_trajectory_csv(args.points)
    if not isinstance(pts, np.ndarray):
        raise ConfigurationError(f"{args.points} is not a step,x,y file")
    write_labels_csv(args.out, label_coordinates(pts, _geometry(args), cfg.fine_step))


def cmd_build_jump(args, cfg):
    traj = _load_labels(cfg, args.traj)
    jp = build_jump_process(traj, DecorrelationConfig(cfg.tau, cfg.tau_I))
    jp.to_files(args.out)


def cmd_estimate(args, cfg):
    jp = _load_jump_process(args.jump)
    include_first = not args.exclude_first
    if args.out_transitions:
        estimate_transitions(jp, cfg.t_max, include_first).to_json(args.out_transitions)
    if args.out_jumps:
        estimate_jump_distribution(jp, cfg.t_trunc, include_first).to_json(args.out_jumps)


def cmd_fit(args, cfg):
    ts = TransitionSeries.from_json(args.transitions)
    fit = FitConfig(cfg.t_mem, cfg.t_max, cfg.lam, args.min_count)
    fit_kernels(build_correlation_system(ts, fit), fit).to_json(args.out)


def cmd_infer(args, cfg):
    ks = KernelSeries.from_json(args.kernels)
    infer_transitions(ks, cfg.horizon).to_json(args.out)


def cmd_invert(args, cfg):
    ts = TransitionSeries.from_json(args.transitions)
    jd = renewal_invert(ts, tol=args.tol, consistency_bound=args.consistency,
                        stochastic_tol=args.stochastic_tol)
    jd.to_json(args.out)


def cmd_simulate(args, cfg):
    jd = JumpDistribution.from_json(args.jumps)
    mt = simulate_mrp(jd, args.start, cfg.horizon if args.max_jumps is None else None,
                      cfg.seed, max_jumps=args.max_jumps)
    expand_to_grid(mt).to_files(args.out)


def cmd_error(args, cfg):
    ref = JumpDistribution.from_json(args.reference)
    est = JumpDistribution.from_json(args.estimate)
    report = cvm_error(ref, est, args.shared_z)
    text = report.to_json(args.out)
    if not args.out:
        sys.stdout.write(text)


def cmd_baseline(args, cfg):
    jp = _load_jump_process(args.jump)
    markov_baseline(jp, args.lag if args.lag is not None else cfg.tau, cfg.horizon).to_json(args.out)


def _oracle_parts(args):
    spec = FiniteChainSpec.from_json(args.chain)
    q = args.q if len(args.q) > 1 else args.q[0]
    ac = oracle.build_augmented_chain(spec, q, tau=args.tau_oracle)
    qsds = oracle.compute_qsds(spec)
    return spec, ac, qsds


def cmd_oracle(args, cfg):
    spec, ac, qsds = _oracle_parts(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    proj = oracle.build_projector(ac, qsds)
    oracle.exact_transitions(ac, qsds, args.n_max).to_json(out / "transitions.json")
    oracle.operator_kernels(ac, proj, args.n_max).to_json(out / "kernels.json")
    oracle.exact_jump_distribution(ac, qsds, args.n_max).to_json(out / "jumps.json")
    _write_json(out / "qsd.json", {
        "augmented_states": ac.n_states,
        "qsd": [
            {"macrostate": s.macrostate, "microstates": s.microstates.tolist(), "eta": s.eta.tolist(),
             "eigenvalue": s.eigenvalue, "delta": s.delta}
            for s in qsds
        ],
    })


def cmd_convergence(args, cfg):
    spec = FiniteChainSpec.from_json(args.chain)
    report = oracle.convergence_study(spec, args.q, args.n_max)
    _write_json(args.out, report)


def cmd_pipeline(args, cfg):
    if args.points:
        pts = read_trajectory_csv(args.points)
        traj = label_coordinates(pts, _geometry(args), cfg.fine_step)
    else:
        traj = _load_labels(cfg, args.traj)
    train, test = traj.split(args.train_fraction)
    settings = PipelineSettings(
        tau=cfg.tau, tau_I=cfg.tau_I, t_max=cfg.t_max, t_mem=cfg.t_mem, lam=cfg.lam,
        t_trunc=cfg.t_trunc, horizon=cfg.horizon, shared_normalization=args.shared_z,
    )
    m_max = steps_of(cfg.t_mem, cfg.tau, "t_mem", minimum=1)
    counts = args.kernel_counts or list(range(1, m_max + 1))
    study = kernel_count_study(train, test, settings, counts)
    comparison = baseline_comparison(train, test, settings, m_max, min(10, steps_of(cfg.t_max, cfg.tau, "t_max")))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "error_vs_kernels.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kernels", "t_mem", "error"])
        for row in study["rows"]:
            w.writerow([row["kernels"], row["t_mem"], repr(row["error"])])
    with open(out / "baseline_comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lag", "markov_max_abs", "mz_max_abs"])
        for row in zip(comparison["lag"], comparison["markov_max_abs"], comparison["mz_max_abs"]):
            w.writerow([repr(float(v)) for v in row])
    summary = {
        "config": {k: getattr(cfg, k) for k in sorted(_CONFIG_FIELDS)},
        "kernel_study": study,
        "baseline_comparison": comparison,
    }
    _write_json(out / "summary.json", summary)
    failed = [r for r in study["rows"] if "failure" in r]
    if failed and len(failed) == len(study["rows"]):
        raise NumericalDiagnosticError(f"every kernel fit failed: {failed[0]['failure']}")


# parser ------------------------------------------------------------------


def _common(p, inputs=(), outputs=()):
    p.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV})")
    p.add_argument("--fine-step", dest="fine_step", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--tau-I", dest="tau_I", type=float, help="decorrelation time shared by all macrostates")
    p.add_argument("--t-max", dest="t_max", type=float)
    p.add_argument("--t-mem", dest="t_mem", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--t-trunc", dest="t_trunc", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-macrostates", dest="n_macrostates", type=int)
    p.set_defaults(_inputs=list(inputs), _outputs=list(outputs))


def build_parser():
    parser = _Parser(prog="mzrenewal", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-langevin", help="sample the four-well Langevin model")
    _common(p, outputs=["out"])
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--beta", type=float, default=3.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--coupling", type=float, default=0.3)
    p.add_argument("--bound", type=float, default=10.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_langevin)

    p = sub.add_parser("gen-chain", help="sample a finite microstate chain")
    _common(p, inputs=["chain"], outputs=["out"])
    p.add_argument("--chain", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_chain)

    p = sub.add_parser("label", help="label 2D points by rectangular macrostates")
    _common(p, inputs=["points", "geometry"], outputs=["out"])
    p.add_argument("--points", required=True)
    p.add_argument("--geometry", help="geometry JSON (default: quadrants of [-bound, bound]^2)")
    p.add_argument("--bound", type=float, default=10.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("build-jump", help="build the decorrelated jump process")
    _common(p, inputs=["traj"], outputs=["out"])
    p.add_argument("--traj", required=True)
    p.add_argument("--out", required=True, help="CSV path; the JSON sidecar goes next to it")
    p.set_defaults(func=cmd_build_jump)

    p = sub.add_parser("estimate", help="count transition matrices and jump distribution")
    _common(p, inputs=["jump"], outputs=["out_transitions", "out_jumps"])
    p.add_argument("--jump", required=True)
    p.add_argument("--out-transitions")
    p.add_argument("--out-jumps")
    p.add_argument("--exclude-first", action="store_true", help="drop the first entry event")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("fit", help="fit memory kernels")
    _common(p, inputs=["transitions"], outputs=["out"])
    p.add_argument("--transitions", required=True)
    p.add_argument("--min-count", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("infer", help="extend transition matrices with fitted kernels")
    _common(p, inputs=["kernels"], outputs=["out"])
    p.add_argument("--kernels", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("invert", help="recover the jump distribution from transition matrices")
    _common(p, inputs=["transitions"], outputs=["out"])
    p.add_argument("--transitions", required=True)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--consistency", type=float, default=1e-6)
    p.add_argument("--stochastic-tol", type=float, default=1e-6)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("simulate", help="simulate the renewal process of a jump distribution")
    _common(p, inputs=["jumps"], outputs=["out"])
    p.add_argument("--jumps", required=True)
    p.add_argument("--start", type=int, default=1)
    p.add_argument("--max-jumps", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("error", help="Cramer-von Mises style error between jump distributions")
    _common(p, inputs=["reference", "estimate"], outputs=["out"])
    p.add_argument("--reference", required=True)
    p.add_argument("--estimate", required=True)
    p.add_argument("--shared-z", action="store_true", help="normalize both by the reference mass")
    p.add_argument("--out")
    p.set_defaults(func=cmd_error)

    p = sub.add_parser("baseline", help="single-lag Markov model extended by matrix powers")
    _common(p, inputs=["jump"], outputs=["out"])
    p.add_argument("--jump", required=True)
    p.add_argument("--lag", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    for name, func, helptext in (
        ("oracle", cmd_oracle, "exact transitions, kernels and jump law of a finite chain"),
        ("convergence", cmd_convergence, "renewal approximation error versus counter cap"),
    ):
        p = sub.add_parser(name, help=helptext)
        _common(p, inputs=["chain"])
        p.add_argument("--chain", required=True)
        p.add_argument("--q", type=int, nargs="+", default=[1, 2, 4, 8],
                       help="counter caps (tau_I / tau); one per macrostate or one shared")
        p.add_argument("--n-max", type=int, default=30)
        p.add_argument("--tau-oracle", type=float, default=1.0, help="time unit of oracle output")
        if name == "oracle":
            p.add_argument("--out-dir", required=True)
        else:
            p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("pipeline", help="build-jump, estimate, fit, infer, invert and score")
    _common(p, inputs=["traj", "points", "geometry"])
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--traj", help="step,label CSV")
    src.add_argument("--points", help="step,x,y CSV (labeled with --geometry)")
    p.add_argument("--geometry")
    p.add_argument("--bound", type=float, default=10.0)
    p.add_argument("--train-fraction", type=float, default=0.5)
    p.add_argument("--kernel-counts", type=int, nargs="+")
    p.add_argument("--shared-z", action="store_true")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            cfg = _load_config(args)
            args.func(args, cfg)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 1
    except NumericalDiagnosticError as exc:
        print(f"numerical diagnostic failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
