"""Command-line entry point: ``selectcf <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from typing import Optional, Sequence

from . import evaluation, harness
from .core import Aggregate, ConfigError, FittedPredictor, GenConfig, SelectCFError, read_study, write_study
from .learners import LEARNER_NAMES, estimate_dual_labels, fit_dr, fit_learner
from .synthgen import generate_study

def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value file; flags given on the command line win")
    p.add_argument("--setting", choices=["A", "B", "C", "CUSTOM"])
    p.add_argument("--fast", action="store_true", default=None,
                   help="desk-scale profile: d=50, k_x=k_z=10, n=250, 5 replicates")
    p.add_argument("--L", type=int, dest="L")
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--kx", type=int, dest="k_x")
    p.add_argument("--kz", type=int, dest="k_z")
    p.add_argument("--rho", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--ar-lo", type=float, dest="ar_lo")
    p.add_argument("--ar-hi", type=float, dest="ar_hi")
    p.add_argument("--seed", type=int)


def _merge_config(args: argparse.Namespace) -> argparse.Namespace:
    if not getattr(args, "config", None):
        return args
    for key, raw in harness.read_config_file(args.config).items():
        key = {"kx": "k_x", "kz": "k_z"}.get(key, key)
        if not hasattr(args, key):
            raise ConfigError(f"{args.config}: unknown key {key!r}")
        if getattr(args, key) is not None:
            continue
        if key in ("fast", "dr_mse"):
            value = raw.lower() in ("1", "true", "yes", "on")
        elif key in ("L", "n", "d", "k_x", "k_z", "seed", "replicates"):
            value = int(raw)
        elif key in ("rho", "tau", "ar_lo", "ar_hi"):
            value = float(raw)
        else:
            value = raw
        setattr(args, key, value)
    return args


def _gen_config(args: argparse.Namespace) -> GenConfig:
    setting = args.setting or "CUSTOM"
    if setting in harness.SETTINGS:
        base = dict(harness.SETTINGS[setting]["base"])
    else:
        base = {f: getattr(GenConfig, f) for f in ("d", "k_x", "k_z", "rho", "tau")}
    if args.fast:
        base.update(harness.FAST_PROFILE)
    for key in ("L", "n", "d", "k_x", "k_z", "rho", "tau"):
        if getattr(args, key, None) is not None:
            base[key] = getattr(args, key)
    lo = args.ar_lo if args.ar_lo is not None else 0.3
    hi = args.ar_hi if args.ar_hi is not None else 0.5
    return GenConfig(ar_range=(lo, hi), seed=args.seed or 0, **base)


def cmd_generate(args) -> int:
    study = generate_study(_gen_config(args), workers=harness.pool_size())
    path, truth_path = write_study(study, args.out)
    print(f"wrote {len(study)} samples to {path} and {truth_path}")
    return 0


def cmd_fit(args) -> int:
    study = read_study(args.study)
    predictor = fit_learner(args.learner, study, args.seed or 0, aggregate=Aggregate(args.aggregate))
    predictor.save(args.out)
    print(f"wrote {args.learner} predictor to {args.out}")
    return 0


def cmd_eval(args) -> int:
    study = read_study(args.study)
    predictor = FittedPredictor.load(args.predictor)
    seed = args.seed or 0
    rows = []
    if study.truth is not None:
        rows.append(("mse", evaluation.mse_vs_truth(predictor, study)))
    labels = estimate_dual_labels(study)
    pi = predictor.nuisance_pi if predictor.nuisance_pi and all(predictor.nuisance_pi) \
        else fit_dr(study, seed=seed).nuisance_pi
    rows.append(("dr_mse", evaluation.dr_mse_estimate(predictor, study, labels, pi=pi, seed=seed)))
    if study.truth is not None:
        rows.append(("truth_mse", evaluation.truth_side_mse(predictor, study)))
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(harness.RESULT_HEADER)
    for metric, value in rows:
        w.writerow([seed, "CUSTOM", "", predictor.learner.value, metric, repr(value)])
    return 0


def cmd_swap(args) -> int:
    study = read_study(args.study)
    predictor = FittedPredictor.load(args.predictor)
    outcomes = evaluation.policy_swap_fr(predictor, study, threshold=args.threshold)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["location", "selected", "fr_historical", "fr_swapped"])
        for o in outcomes:
            w.writerow([o.location, o.selected, repr(o.fr_historical), repr(o.fr_swapped)])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def cmd_run(args) -> int:
    setting = args.setting or "A"
    if setting == "CUSTOM":
        raise ConfigError("run needs --setting A, B or C")
    learners = tuple(args.learners.split(",")) if args.learners else ("SP", "RA", "DR")
    overrides = {k: getattr(args, k) for k in ("L", "n", "d", "k_x", "k_z", "rho", "tau")}
    if args.ar_lo is not None or args.ar_hi is not None:
        overrides["ar_range"] = (args.ar_lo or 0.3, args.ar_hi or 0.5)
    spec = harness.setting_spec(
        setting, fast=bool(args.fast),
        sweep_values=_floats(args.sweep) if args.sweep else None,
        replicates=args.replicates, learners=learners, out_path=args.out,
        root_seed=args.seed or 0, dr_mse=bool(args.dr_mse), **overrides,
    )
    rows = harness.run_experiment(spec)
    print(f"wrote {len(rows)} result rows to {args.out}")
    return 0


def cmd_sweep_summary(args) -> int:
    summary = harness.sweep_summary(harness.read_results(args.input))
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["setting", "param", "learner", "metric", "n", "mean", "stderr"])
        for s in summary:
            w.writerow([s["setting"], repr(s["param"]), s["learner"], s["metric"], s["n"],
                        repr(s["mean"]), repr(s["stderr"])])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selectcf", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic study and its truth file")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="fit a learner on a stored study and save it as JSON")
    p.add_argument("--study", required=True)
    p.add_argument("--learner", choices=LEARNER_NAMES, default="DR")
    p.add_argument("--aggregate", choices=["mean", "sum"], default="mean")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("run", help="run a setting sweep over seeded replicates")
    _add_config_flags(p)
    p.add_argument("--sweep", help="comma-separated sweep values")
    p.add_argument("--replicates", type=int)
    p.add_argument("--learners", help=f"comma-separated subset of {','.join(LEARNER_NAMES)}")
    p.add_argument("--dr-mse", action="store_true", default=None, dest="dr_mse")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="metrics for a stored study and predictor")
    p.add_argument("--study", required=True)
    p.add_argument("--predictor", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("swap", help="per-location failure rate after a risk-ranked swap")
    p.add_argument("--study", required=True)
    p.add_argument("--predictor", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_swap)

    p = sub.add_parser("sweep-summary", help="mean and stderr per sweep value and learner")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep_summary)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        args = _merge_config(args)
        return args.func(args)
    except (SelectCFError, OSError, ValueError) as exc:
        parser.print_usage(sys.stderr)
        print(f"selectcf: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
