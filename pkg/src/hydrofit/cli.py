"""Command-line interface: ``hydrofit <command> [options]``.

Every command writes into its own output directory (``--out``) together with
a ``manifest.json`` recording the command, resolved flags, input dataset
fingerprints, tool version and a UTC timestamp.  Exit codes: 0 success,
1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .applications import chow_test, estimate_force, force_series, stiffness_damping
from .core import Family, FittedModel, ModelSpec, dataset_fingerprint
from .dataset import load_csv, write_csv
from .errors import HydrofitError
from .fitting import FitConfig, fit
from .io import atomic_write_json, atomic_write_text
from .selection import Weights, evaluate, flops_estimate, grid_search
from .simulator import ActuatorTruth, Protocol, concatenate, generate
from .stats import build_data_matrix, correlations, pca

FAMILIES = [f.value for f in Family]


def parse_range(text: str) -> list:
    """``"3"`` -> [3]; ``"1..4"`` -> [1, 2, 3, 4]; ``"1,3,5"`` -> [1, 3, 5]."""
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid range {text!r}; use N, A..B or A,B,C") from None


def parse_floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid number list {text!r}") from None


def _spec_from_args(args) -> ModelSpec:
    fam = Family(args.family)
    hp = {}
    if fam is Family.EXPONENTIAL:
        hp["k"] = args.k if args.k is not None else 3
    elif fam.is_poly:
        hp["n"] = args.n if args.n is not None else 3
        hp["m"] = args.m if args.m is not None else 2
    else:
        hp["d"] = args.d if args.d is not None else 8
    if fam.is_autoregressive:
        hp["p"] = args.p if args.p is not None else 1
    return ModelSpec(family=fam, **hp)


def _fit_config(args) -> FitConfig:
    kw = {"seed": args.seed}
    if getattr(args, "epochs", None) is not None:
        kw["nn_epochs"] = args.epochs
    return FitConfig(**kw)


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def _write_manifest(out: Path, command: str, args, inputs: dict) -> None:
    config = {k: v for k, v in vars(args).items() if k not in ("func", "command")}
    atomic_write_json(out / "manifest.json", {
        "command": command,
        "config": {k: _jsonable(v) for k, v in config.items()},
        "input_hashes": inputs,
        "tool_version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    })


def _load(path, args=None):
    return load_csv(path, derivatives=getattr(args, "derivatives", "file"))


# ------------------------------------------------------------------ commands

def cmd_simulate(args) -> int:
    truth = ActuatorTruth(noise_sigma=args.noise, air_volume=args.air, hysteresis_gain=args.hysteresis)
    proto = Protocol(v_max=args.v_max, flow_rates=tuple(args.flow_rates), cycles_per_rate=args.cycles,
                     sample_rate_hz=args.rate, seed=args.seed)
    ds = generate(truth, proto)
    write_csv(ds, args.out / "data.csv")
    atomic_write_json(args.out / "truth.json", {"truth": truth.to_dict(), "protocol": proto.to_dict()})
    _write_manifest(args.out, "simulate", args, {"data.csv": dataset_fingerprint(ds)})
    print(f"wrote {len(ds)} trajectories, {ds.n_samples} samples to {args.out / 'data.csv'}")
    return 0


def _report_table(spec, report) -> str:
    rows = [("model", f"{spec.family.value} {spec.label}"), ("nu", str(report.nu)), ("N", str(report.n_samples)),
            ("RMSE", f"{report.rmse:.6g}"), ("R2_adj", f"{report.r2_adj:.6f}"), ("AICc", f"{report.aicc:.6g}"),
            ("BIC", f"{report.bic:.6g}"), ("joint cost", f"{report.joint_cost:.6g}")]
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def cmd_fit(args) -> int:
    ds = _load(args.input, args)
    spec = _spec_from_args(args)
    model = fit(ds, spec, _fit_config(args))
    report = evaluate(model, ds, Weights(*args.weights))
    model.save(args.out / "model.json")
    cost = flops_estimate(spec, report.n_samples)
    atomic_write_json(args.out / "report.json", {
        "family": spec.family.value, "hyperparameters": spec.hyperparameters, "report": report.to_dict(),
        "cost": {"class": cost.kind, "n": cost.n, "nu": cost.nu, "epochs": cost.epochs, "estimate": cost.cost},
    })
    _write_manifest(args.out, "fit", args, {str(args.input): dataset_fingerprint(ds)})
    print(_report_table(spec, report))
    return 0


def cmd_select(args) -> int:
    ds = _load(args.input, args)
    fam = Family(args.family)
    ranges = {}
    if fam is Family.EXPONENTIAL:
        ranges["k"] = args.k or [1, 2, 3, 4, 5]
    elif fam.is_poly:
        ranges["n"] = args.n or list(range(1, 8))
        ranges["m"] = args.m or list(range(1, 8))
    else:
        ranges["d"] = args.d or [1, 2, 4, 8]
    if fam.is_autoregressive:
        ranges["p"] = args.p or [1]
    result = grid_search(ds, fam, ranges, Weights(*args.weights), _fit_config(args), holdout=args.holdout)
    atomic_write_json(args.out / "grid.json", result.to_dict())
    table = result.table()
    atomic_write_text(args.out / "table.txt", table + "\n")
    _write_manifest(args.out, "select", args, {str(args.input): dataset_fingerprint(ds)})
    print(table)
    return 0


def cmd_pca(args) -> int:
    ds = _load(args.input, args)
    X = build_data_matrix(ds)
    res = pca(X)
    payload = res.to_dict()
    payload["correlations"] = correlations(X)
    atomic_write_json(args.out / "pca.json", payload)
    atomic_write_text(args.out / "table.txt", res.table() + "\n")
    _write_manifest(args.out, "pca", args, {str(args.input): dataset_fingerprint(ds)})
    print(res.table())
    return 0


def cmd_diagnose(args) -> int:
    model = FittedModel.load(args.model)
    ds = _load(args.input, args)
    rep = stiffness_damping(model, ds)
    atomic_write_json(args.out / "stiffness.json", rep.to_dict())
    lines = ["v,vdot,k,c"] + [",".join(repr(float(x)) for x in row) for row in rep.pointwise]
    atomic_write_text(args.out / "pointwise.csv", "\n".join(lines) + "\n")
    _write_manifest(args.out, "diagnose", args, {str(args.input): dataset_fingerprint(ds)})
    print(f"k_bar = {rep.k_bar:.6g} kPa/mm^3, c_bar = {rep.c_bar:.6g} kPa*s/mm^3")
    return 0


def cmd_chow(args) -> int:
    a = _load(args.first, args)
    b = _load(args.second, args)
    spec = _spec_from_args(args)
    rep = chow_test(a, b, spec, alpha=args.alpha, cfg=_fit_config(args))
    atomic_write_json(args.out / "chow.json", rep.to_dict())
    _write_manifest(args.out, "chow", args, {str(args.first): dataset_fingerprint(a),
                                              str(args.second): dataset_fingerprint(b)})
    verdict = "different" if rep.reject else "not distinguishable"
    print(f"F = {rep.f_stat:.6g} (critical {rep.critical_value:.6g} at alpha {rep.alpha:g}): {verdict}")
    return 0


def cmd_force(args) -> int:
    if not (len(args.models) == len(args.streams) == len(args.areas)):
        raise HydrofitError("--models, --streams and --areas need one entry per chamber")
    models = [FittedModel.load(p) for p in args.models]
    datasets = [_load(p, args) for p in args.streams]
    streams = [concatenate(ds) for ds in datasets]
    est = estimate_force(models, streams, args.areas)
    t, f = force_series(est)
    lines = ["t,force," + ",".join(f"r{i + 1}" for i in range(len(models)))]
    for e in est:
        lines.append(",".join(repr(float(x)) for x in (e.t, e.force, *e.per_chamber_residual)))
    atomic_write_text(args.out / "force.csv", "\n".join(lines) + "\n")
    summary = {"n": int(f.size), "mean_force": float(np.mean(f)), "std_force": float(np.std(f)),
               "mean_magnitude": float(np.mean(np.abs(f)))}
    atomic_write_json(args.out / "force.json", summary)
    _write_manifest(args.out, "force", args, {str(p): dataset_fingerprint(d) for p, d in zip(args.streams, datasets)})
    print(f"mean force {summary['mean_force']:.4g} mN, std {summary['std_force']:.4g} mN over {summary['n']} samples")
    return 0


# ------------------------------------------------------------------ parser

def _add_common(p, command):
    p.add_argument("--out", type=Path, default=None, help=f"output directory (default hydrofit_{command})")
    p.add_argument("--seed", type=int, default=0)


def _add_spec_flags(p, ranged=False):
    kind = parse_range if ranged else int
    p.add_argument("--family", choices=FAMILIES, default="poly")
    for name, helptext in (("k", "exponential terms"), ("n", "max power of v"), ("m", "max power of vdot"),
                           ("p", "autoregressive order"), ("d", "network depth")):
        p.add_argument(f"--{name}", type=kind, default=None, help=helptext)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hydrofit", description="Volume-pressure model fitting for fluidic actuators.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    _add_common(p, "simulate")
    p.add_argument("--noise", type=float, default=0.3, help="pressure noise sigma, kPa")
    p.add_argument("--air", type=float, default=0.0, help="air pocket volume, mm^3")
    p.add_argument("--hysteresis", type=float, default=0.0, help="sign(vdot) pressure offset, kPa")
    p.add_argument("--v-max", type=float, default=550.0)
    p.add_argument("--flow-rates", type=parse_floats, default=[20.0, 40.0, 60.0, 80.0, 100.0])
    p.add_argument("--cycles", type=int, default=20, help="cycles per flow rate")
    p.add_argument("--rate", type=float, default=25.0, help="sample rate, Hz")
    p.set_defaults(func=cmd_simulate)

    def data_flags(q):
        q.add_argument("--derivatives", choices=("file", "differentiate"), default="file")

    p = sub.add_parser("fit", help="fit one model")
    p.add_argument("input", type=Path)
    _add_common(p, "fit")
    _add_spec_flags(p)
    data_flags(p)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--weights", type=parse_floats, default=[1.0, 1.0, 1e-5])
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="grid search over hyperparameters")
    p.add_argument("input", type=Path)
    _add_common(p, "select")
    _add_spec_flags(p, ranged=True)
    data_flags(p)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--weights", type=parse_floats, default=[1.0, 1.0, 1e-5])
    p.add_argument("--holdout", type=float, default=None, help="score on this fraction of held-out trajectories")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("pca", help="correlation and PCA of (v, vdot, vddot, P)")
    p.add_argument("input", type=Path)
    _add_common(p, "pca")
    data_flags(p)
    p.set_defaults(func=cmd_pca)

    p = sub.add_parser("diagnose", help="pointwise stiffness and damping of a polynomial model")
    p.add_argument("model", type=Path)
    p.add_argument("input", type=Path)
    _add_common(p, "diagnose")
    data_flags(p)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("chow", help="Chow test between two datasets")
    p.add_argument("first", type=Path)
    p.add_argument("second", type=Path)
    _add_common(p, "chow")
    _add_spec_flags(p)
    data_flags(p)
    p.add_argument("--alpha", type=float, default=0.0005)
    p.set_defaults(func=cmd_chow)

    p = sub.add_parser("force", help="external force from pressure residuals")
    _add_common(p, "force")
    p.add_argument("--models", type=Path, nargs="+", required=True)
    p.add_argument("--streams", type=Path, nargs="+", required=True)
    p.add_argument("--areas", type=parse_floats, default=[22.0, 22.0, 22.0], help="effective areas, mm^2")
    data_flags(p)
    p.set_defaults(func=cmd_force)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.out is None:
        args.out = Path(f"hydrofit_{args.command}")
    if getattr(args, "weights", None) is not None and len(args.weights) != 3:
        parser.error("--weights needs three values w1,w2,w3")
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        return args.func(args)
    except (HydrofitError, OSError, ValueError) as exc:
        print(f"hydrofit {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
