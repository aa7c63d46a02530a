"""Experiment orchestration: settings, seeded replicates, sweeps and result tables."""
from __future__ import annotations

import csv
import io
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import Aggregate, ConfigError, GenConfig, Study
from .evaluation import dr_mse_estimate, heldout_dual_labels, mse_vs_truth, truth_side_mse
from .learners import LEARNER_NAMES, fit_dr, fit_learner
from .synthgen import generate_study

logger = logging.getLogger(__name__)

SWEEP_PARAMS = {"tau": "tau", "rho": "rho", "k_z": "k_z"}

# Fixed parameters per setting; the swept one keeps its own default.
SETTINGS = {
    "A": dict(sweep="tau", base=dict(d=250, k_x=25, k_z=25, rho=0.25, tau=0.5),
              grid=(0.0, 0.25, 0.5, 0.75, 1.0)),
    "B": dict(sweep="rho", base=dict(d=250, k_x=25, k_z=25, rho=0.25, tau=0.5),
              grid=(0.1, 0.3, 0.5, 0.7, 0.9)),
    "C": dict(sweep="k_z", base=dict(d=250, k_x=25, k_z=25, rho=0.25, tau=0.5),
              grid=(0, 5, 10, 15, 20, 25)),
}
FAST_PROFILE = dict(d=50, k_x=10, k_z=10, n=250)
FAST_REPLICATES = 5
DEFAULT_REPLICATES = 20
RESULT_HEADER = ("seed", "setting", "param", "learner", "metric", "value")


@dataclass(frozen=True)
class ExperimentSpec:
    setting: str
    sweep_param: str
    sweep_values: tuple
    replicates: int = DEFAULT_REPLICATES
    learners: tuple = ("SP", "RA", "DR")
    base: GenConfig = field(default_factory=GenConfig)
    out_path: Optional[str] = None
    root_seed: int = 0
    dr_mse: bool = False
    train_fraction: float = 0.7
    aggregate: Aggregate = Aggregate.MEAN

    def validate(self) -> None:
        if self.setting not in (*SETTINGS, "CUSTOM"):
            raise ConfigError(f"unknown setting {self.setting!r}")
        if self.sweep_param not in SWEEP_PARAMS:
            raise ConfigError(f"sweep_param must be one of {sorted(SWEEP_PARAMS)}")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        unknown = set(self.learners) - set(LEARNER_NAMES)
        if unknown:
            raise ConfigError(f"unknown learners {sorted(unknown)}")
        if not self.sweep_values:
            raise ConfigError("empty sweep")
        for v in self.sweep_values:
            self.config_for(v, 0)
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")

    def config_for(self, value, seed: int) -> GenConfig:
        if self.sweep_param == "k_z":
            value = int(round(value))
        return self.base.replace(**{self.sweep_param: value, "seed": seed})


def setting_spec(setting: str, *, fast: bool = False, sweep_values: Optional[Sequence] = None,
                 replicates: Optional[int] = None, **overrides) -> ExperimentSpec:
    """Build an :class:`ExperimentSpec` for one of the settings A/B/C."""
    if setting not in SETTINGS:
        raise ConfigError(f"unknown setting {setting!r}; expected A, B or C")
    s = SETTINGS[setting]
    base = dict(s["base"])
    if fast:
        base.update(FAST_PROFILE)
    cfg_keys = {"L", "n", "d", "k_x", "k_z", "rho", "tau", "ar_range"}
    base.update({k: v for k, v in overrides.items() if k in cfg_keys and v is not None})
    rest = {k: v for k, v in overrides.items() if k not in cfg_keys and v is not None}
    values = tuple(sweep_values if sweep_values is not None else s["grid"])
    if s["sweep"] == "k_z":
        values = tuple(int(round(v)) for v in values)
    if values:
        # the swept field is overwritten per cell; keep the base valid alongside overrides
        base[s["sweep"]] = values[0]
    if replicates is None:
        replicates = FAST_REPLICATES if fast else DEFAULT_REPLICATES
    return ExperimentSpec(
        setting=setting, sweep_param=s["sweep"],
        sweep_values=values,
        replicates=replicates, base=GenConfig(**base), **rest,
    )


def replicate_seed(root: int, replicate: int) -> int:
    """64-bit study seed for one replicate.

    Independent of the sweep value, so every point of a sweep sees the same
    underlying random draws.
    """
    lo, hi = np.random.SeedSequence([root, replicate]).generate_state(2, np.uint32)
    return int(lo) | (int(hi) << 32)


def stratified_split(study: Study, train_fraction: float, seed: int) -> np.ndarray:
    """Boolean train marker, ``train_fraction`` of each location rounded to a count."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(99,))))
    train = np.zeros(len(study), dtype=bool)
    for loc in study.locations:
        idx = np.flatnonzero(study.location == loc)
        k = int(round(train_fraction * len(idx)))
        train[rng.permutation(idx)[:k]] = True
    return train


def prepare_replicate(spec: ExperimentSpec, value, replicate: int) -> tuple[int, Study, Study]:
    seed = replicate_seed(spec.root_seed, replicate)
    study = generate_study(spec.config_for(value, seed))
    study = study.with_split(stratified_split(study, spec.train_fraction, seed))
    return seed, study.train_part(), study.test_part()


def _run_task(args) -> list[tuple]:
    spec, value, replicate = args
    seed, train, test = prepare_replicate(spec, value, replicate)
    rows = []
    pi_models = labels = None
    if spec.dr_mse:
        labels = heldout_dual_labels(train, test)
        pi_models = fit_dr(train, seed=seed).nuisance_pi
    for name in spec.learners:
        predictor = fit_learner(name, train, seed, aggregate=spec.aggregate)
        rows.append((seed, spec.setting, value, name, "mse", mse_vs_truth(predictor, test)))
        if spec.dr_mse:
            est = dr_mse_estimate(predictor, test, labels, pi=pi_models, seed=seed)
            rows.append((seed, spec.setting, value, name, "dr_mse", est))
            rows.append((seed, spec.setting, value, name, "truth_mse", truth_side_mse(predictor, test)))
    return [(replicate, r) for r in rows]


def pool_size() -> int:
    raw = os.environ.get("SELECTCF_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            logger.warning("ignoring non-integer SELECTCF_THREADS=%r", raw)
    return 1


def _fmt_value(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def run_experiment(spec: ExperimentSpec, workers: Optional[int] = None) -> list[dict]:
    """Run every (sweep value, replicate, learner) cell and return result rows.

    Rows are sorted by (value, replicate, learner order, metric) regardless
    of scheduling. When ``spec.out_path`` is set the CSV is written too.
    """
    spec.validate()
    if spec.out_path is not None:
        out = Path(spec.out_path)
        if out.parent and not out.parent.exists():
            raise ConfigError(f"output directory {out.parent} does not exist")
    tasks = [(spec, v, r) for v in spec.sweep_values for r in range(spec.replicates)]
    workers = workers or pool_size()
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            chunks = list(pool.map(_run_task, tasks))
    else:
        chunks = [_run_task(t) for t in tasks]
    order = {name: i for i, name in enumerate(spec.learners)}
    metric_order = {"mse": 0, "dr_mse": 1, "truth_mse": 2}
    flat = [item for chunk in chunks for item in chunk]
    flat.sort(key=lambda it: (spec.sweep_values.index(it[1][2]), it[0], order[it[1][3]],
                              metric_order[it[1][4]]))
    rows = [dict(zip(RESULT_HEADER, r)) for _, r in flat]
    if spec.out_path is not None:
        write_results(rows, spec.out_path)
    return rows


def results_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_HEADER)
    for r in rows:
        w.writerow([str(r["seed"]), r["setting"], _fmt_value(r["param"]), r["learner"],
                    r["metric"], repr(float(r["value"]))])
    return buf.getvalue()


def write_results(rows: Sequence[dict], path) -> None:
    Path(path).write_text(results_csv(rows))


def read_results(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["value"] = float(r["value"])
        r["param"] = float(r["param"])
    return rows


def sweep_summary(rows: Sequence[dict]) -> list[dict]:
    """Mean and standard error per (setting, param, learner, metric)."""
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        key = (r["setting"], float(r["param"]), r["learner"], r["metric"])
        groups.setdefault(key, []).append(float(r["value"]))
    out = []
    for key in sorted(groups, key=lambda k: (k[0], k[1], k[2], k[3])):
        v = np.asarray(groups[key])
        se = float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else float("nan")
        out.append(dict(setting=key[0], param=key[1], learner=key[2], metric=key[3],
                        n=len(v), mean=float(v.mean()), stderr=se))
    return out


def summary_means(rows: Sequence[dict], metric: str = "mse") -> dict:
    """``{(param, learner): mean}`` convenience view over raw result rows."""
    return {(s["param"], s["learner"]): s["mean"]
            for s in sweep_summary(rows) if s["metric"] == metric}


def read_config_file(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values
