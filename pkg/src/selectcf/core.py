"""Domain types shared across the package.

A :class:`Study` keeps its samples column-wise as numpy arrays; the
per-sample :class:`ObservedSample` view is what a single case looks like to
a learner. Hidden confounders are only reported for samples that did not
receive the desired treatment, so ``ObservedSample.z`` is ``None`` for A1.
"""
from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np


class SelectCFError(Exception):
    """Base class for package errors."""


class ConfigError(SelectCFError, ValueError):
    pass


class InvalidModelError(SelectCFError, ValueError):
    pass


class RankDeficiencyError(SelectCFError, np.linalg.LinAlgError):
    pass


class DegenerateLabelsError(SelectCFError, ValueError):
    pass


class DegenerateStudyError(SelectCFError, ValueError):
    pass


class FoldPlanError(SelectCFError, ValueError):
    pass


class Treatment(enum.IntEnum):
    """Observed treatment.

    A1 is the desired treatment, A2 the alternative and A3 a dual-treatment
    case (initially A2, later reverted to A1).
    """

    A1 = 1
    A2 = 2
    A3 = 3

    @classmethod
    def parse(cls, token: str) -> "Treatment":
        return cls[token.strip().upper()]


class FeatureMode(enum.Enum):
    X_ONLY = "x_only"
    X_AND_Z = "x_and_z"


class Learner(enum.Enum):
    SP = "SP"
    RA = "RA"
    DR = "DR"


class Aggregate(enum.Enum):
    MEAN = "mean"
    SUM = "sum"


@dataclass(frozen=True)
class GenConfig:
    """Generator settings for a multi-location study."""

    L: int = 20
    n: int = 1000
    d: int = 250
    k_x: int = 25
    k_z: int = 25
    rho: float = 0.25
    tau: float = 0.5
    ar_range: tuple[float, float] = (0.3, 0.5)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "ar_range", tuple(float(v) for v in self.ar_range))
        self.validate()

    def validate(self) -> None:
        if self.L < 1 or self.n < 1 or self.d < 1:
            raise ConfigError(f"L, n and d must be positive, got L={self.L} n={self.n} d={self.d}")
        if not 0 < self.k_x <= self.d:
            raise ConfigError(f"k_x must lie in (0, d], got {self.k_x}")
        if not 0 <= self.k_z <= self.d:
            raise ConfigError(f"k_z must lie in [0, d], got {self.k_z}")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError(f"rho must lie in [0, 1), got {self.rho}")
        if self.tau < 0:
            raise ConfigError(f"tau must be non-negative, got {self.tau}")
        lo, hi = self.ar_range
        if not (0.0 < lo <= hi < 1.0):
            raise ConfigError(f"ar_range must satisfy 0 < lo <= hi < 1, got {self.ar_range}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    def replace(self, **changes) -> "GenConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "L": self.L, "n": self.n, "d": self.d, "k_x": self.k_x, "k_z": self.k_z,
            "rho": self.rho, "tau": self.tau, "ar_range": list(self.ar_range), "seed": self.seed,
        }


@dataclass(frozen=True)
class ObservedSample:
    x: np.ndarray
    z: Optional[np.ndarray]
    t: Treatment
    y: float
    location: int


@dataclass(frozen=True)
class TruthRecord:
    nu: float
    mu_a1: float
    mu_a3: float
    y_a1: float
    pi: float
    z_full: np.ndarray


@dataclass(frozen=True)
class Truth:
    """Sealed generator-side ground truth, index-aligned with a study."""

    nu: np.ndarray
    mu_a1: np.ndarray
    mu_a3: np.ndarray
    y_a1: np.ndarray
    pi: np.ndarray
    z_full: np.ndarray

    def __len__(self) -> int:
        return len(self.nu)

    def record(self, i: int) -> TruthRecord:
        return TruthRecord(
            float(self.nu[i]), float(self.mu_a1[i]), float(self.mu_a3[i]),
            float(self.y_a1[i]), float(self.pi[i]), self.z_full[i].copy(),
        )

    def take(self, idx: np.ndarray) -> "Truth":
        return Truth(self.nu[idx], self.mu_a1[idx], self.mu_a3[idx],
                     self.y_a1[idx], self.pi[idx], self.z_full[idx])


def mask_selective(z_full: Optional[np.ndarray], t: Treatment) -> Optional[np.ndarray]:
    """Hide confounders for desired-treatment samples; pass them through otherwise."""
    if Treatment(t) is Treatment.A1:
        return None
    return z_full


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Study:
    """Location-tagged observational samples plus optional sealed truth.

    ``z`` is stored as an ``(N, d)`` block for vectorised fitting, but rows
    belonging to A1 samples hold zeros and carry no information: learners
    only ever read ``z[has_z]``. Use :meth:`sample` for the per-case view
    where the absence is explicit.
    """

    x: np.ndarray
    z: np.ndarray
    t: np.ndarray
    y: np.ndarray
    location: np.ndarray
    truth: Optional[Truth] = None
    config: Optional[GenConfig] = None
    train: Optional[np.ndarray] = None
    ar: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.int8))
        object.__setattr__(self, "location", np.asarray(self.location, dtype=np.int64))
        n = len(self.y)
        if self.x.ndim != 2 or self.z.shape != self.x.shape:
            raise ValueError("x and z must be (N, d) arrays of equal shape")
        for name in ("x", "t", "location"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        if self.truth is not None and len(self.truth) != n:
            raise ValueError("truth must be index-aligned with samples")
        if self.train is not None and len(self.train) != n:
            raise ValueError("train marker must be index-aligned with samples")
        z = np.where((self.t == Treatment.A1)[:, None], 0.0, self.z)
        object.__setattr__(self, "z", z)
        for name in ("x", "z", "t", "y", "location", "train"):
            if getattr(self, name) is not None:
                object.__setattr__(self, name, _readonly(getattr(self, name)))

    def __len__(self) -> int:
        return len(self.y)

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def has_z(self) -> np.ndarray:
        return self.t != Treatment.A1

    @property
    def xz(self) -> np.ndarray:
        return np.hstack([self.x, self.z])

    def mask(self, *treatments: Treatment) -> np.ndarray:
        return np.isin(self.t, [int(t) for t in treatments])

    def index_of(self, *treatments: Treatment) -> np.ndarray:
        return np.flatnonzero(self.mask(*treatments))

    @property
    def locations(self) -> np.ndarray:
        return np.unique(self.location)

    def sample(self, i: int) -> ObservedSample:
        t = Treatment(int(self.t[i]))
        z = mask_selective(self.z[i].copy(), t)
        return ObservedSample(self.x[i].copy(), z, t, float(self.y[i]), int(self.location[i]))

    def samples(self) -> Iterator[ObservedSample]:
        for i in range(len(self)):
            yield self.sample(i)

    def take(self, idx) -> "Study":
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return Study(
            x=self.x[idx], z=self.z[idx], t=self.t[idx], y=self.y[idx],
            location=self.location[idx],
            truth=None if self.truth is None else self.truth.take(idx),
            config=self.config,
            train=None if self.train is None else self.train[idx],
            ar=self.ar,
        )

    def with_split(self, train: np.ndarray) -> "Study":
        return replace(self, train=np.asarray(train, dtype=bool))

    def train_part(self) -> "Study":
        if self.train is None:
            raise ValueError("study has no train/test split")
        return self.take(self.train)

    def test_part(self) -> "Study":
        if self.train is None:
            raise ValueError("study has no train/test split")
        return self.take(~self.train)


@dataclass(frozen=True)
class LinearModel:
    coefficients: np.ndarray
    intercept: float
    feature_mode: FeatureMode = FeatureMode.X_ONLY

    def __post_init__(self):
        object.__setattr__(self, "coefficients", _readonly(np.array(self.coefficients, dtype=float)))
        object.__setattr__(self, "intercept", float(self.intercept))

    def check_dim(self, d: int) -> None:
        want = d if self.feature_mode is FeatureMode.X_ONLY else 2 * d
        if len(self.coefficients) != want:
            raise InvalidModelError(
                f"{self.feature_mode.value} model over d={d} needs {want} coefficients, "
                f"has {len(self.coefficients)}"
            )

    def to_dict(self) -> dict:
        return {"coefficients": self.coefficients.tolist(), "intercept": self.intercept,
                "feature_mode": self.feature_mode.value}

    @classmethod
    def from_dict(cls, data: dict) -> "LinearModel":
        return cls(np.asarray(data["coefficients"], dtype=float), data["intercept"],
                   FeatureMode(data["feature_mode"]))


@dataclass(frozen=True)
class LogitModel:
    coefficients: np.ndarray
    intercept: float
    clip_epsilon: float = 0.01
    n_iter: int = 0
    converged: bool = True
    objective_trace: tuple = ()

    def __post_init__(self):
        if not 0.0 < self.clip_epsilon < 0.5:
            raise InvalidModelError(f"clip_epsilon must lie in (0, 0.5), got {self.clip_epsilon}")
        object.__setattr__(self, "coefficients", _readonly(np.array(self.coefficients, dtype=float)))
        object.__setattr__(self, "intercept", float(self.intercept))

    def to_dict(self) -> dict:
        return {"coefficients": self.coefficients.tolist(), "intercept": self.intercept,
                "clip_epsilon": self.clip_epsilon, "n_iter": self.n_iter,
                "converged": self.converged}

    @classmethod
    def from_dict(cls, data: dict) -> "LogitModel":
        return cls(np.asarray(data["coefficients"], dtype=float), data["intercept"],
                   data["clip_epsilon"], data.get("n_iter", 0), data.get("converged", True))


@dataclass(frozen=True)
class FittedPredictor:
    """Target estimator assembled from per-fold second-stage models.

    ``rotations`` records, per fold model, which fold trained each stage as
    ``{"mu": i, "pi": j, "target": k}`` so cross-fitting can be audited.
    """

    learner: Learner
    fold_models: tuple
    nuisance_mu: Optional[tuple] = None
    nuisance_pi: Optional[tuple] = None
    aggregate: Aggregate = Aggregate.MEAN
    rotations: tuple = ()
    diagnostic: bool = False

    def __post_init__(self):
        object.__setattr__(self, "fold_models", tuple(self.fold_models))
        if self.nuisance_mu is not None:
            object.__setattr__(self, "nuisance_mu", tuple(self.nuisance_mu))
        if self.nuisance_pi is not None:
            object.__setattr__(self, "nuisance_pi", tuple(self.nuisance_pi))
        self._check_shape()

    def _check_shape(self) -> None:
        k = len(self.fold_models)
        if k == 0:
            return  # caught by predict()
        if self.learner is Learner.SP and (k != 1 or self.nuisance_mu or self.nuisance_pi):
            raise InvalidModelError("SP carries exactly one fold model and no nuisances")
        if self.learner is Learner.RA and (k < 2 or self.nuisance_mu is None):
            raise InvalidModelError("RA needs >= 2 fold models and mu nuisances")
        if self.learner is Learner.DR and (k < 3 or self.nuisance_mu is None or self.nuisance_pi is None):
            raise InvalidModelError("DR needs >= 3 fold models and both nuisances")

    def to_dict(self) -> dict:
        return {
            "learner": self.learner.value,
            "aggregate": self.aggregate.value,
            "fold_models": [m.to_dict() for m in self.fold_models],
            "nuisance_mu": None if self.nuisance_mu is None else
            [None if m is None else m.to_dict() for m in self.nuisance_mu],
            "nuisance_pi": None if self.nuisance_pi is None else
            [None if m is None else m.to_dict() for m in self.nuisance_pi],
            "rotations": [dict(r) for r in self.rotations],
            "diagnostic": self.diagnostic,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FittedPredictor":
        def models(key, kind):
            if data.get(key) is None:
                return None
            return tuple(None if m is None else kind.from_dict(m) for m in data[key])

        return cls(
            learner=Learner(data["learner"]),
            fold_models=tuple(LinearModel.from_dict(m) for m in data["fold_models"]),
            nuisance_mu=models("nuisance_mu", LinearModel),
            nuisance_pi=models("nuisance_pi", LogitModel),
            aggregate=Aggregate(data.get("aggregate", "mean")),
            rotations=tuple(data.get("rotations", ())),
            diagnostic=data.get("diagnostic", False),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "FittedPredictor":
        return cls.from_dict(json.loads(Path(path).read_text()))


def predict(p: FittedPredictor, x: np.ndarray):
    """Evaluate the target estimator at one point ``(d,)`` or a batch ``(N, d)``."""
    if not p.fold_models:
        raise InvalidModelError("predictor has no fold models")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    outs = []
    for m in p.fold_models:
        if X.shape[1] != len(m.coefficients):
            raise InvalidModelError(
                f"feature length {X.shape[1]} does not match model width {len(m.coefficients)}")
        outs.append(X @ m.coefficients + m.intercept)
    stacked = np.vstack(outs)
    out = stacked.mean(axis=0) if p.aggregate is Aggregate.MEAN else stacked.sum(axis=0)
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# CSV serialization


def _fmt(v: float) -> str:
    return repr(float(v))


def write_study(study: Study, path, truth_path=None) -> tuple[Path, Optional[Path]]:
    """Write ``path`` and, when the study carries truth, the companion truth CSV.

    The truth file defaults to ``<stem>.truth.csv`` next to ``path``.
    """
    path = Path(path)
    d = study.d
    header = ["location", "t", "y"] + [f"x_{i}" for i in range(d)] + [f"z_{i}" for i in range(d)]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(study)):
            t = Treatment(int(study.t[i]))
            row = [str(int(study.location[i])), t.name.lower(), _fmt(study.y[i])]
            row += [_fmt(v) for v in study.x[i]]
            row += [""] * d if t is Treatment.A1 else [_fmt(v) for v in study.z[i]]
            w.writerow(row)
    if study.truth is None:
        return path, None
    truth_path = Path(truth_path) if truth_path else path.with_name(path.stem + ".truth.csv")
    tr = study.truth
    with truth_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["nu", "mu_a1", "mu_a3", "y_a1", "pi"] + [f"z_{i}" for i in range(d)])
        for i in range(len(tr)):
            w.writerow([_fmt(tr.nu[i]), _fmt(tr.mu_a1[i]), _fmt(tr.mu_a3[i]),
                        _fmt(tr.y_a1[i]), _fmt(tr.pi[i])] + [_fmt(v) for v in tr.z_full[i]])
    return path, truth_path


def read_study(path, truth_path=None, config: Optional[GenConfig] = None) -> Study:
    """Inverse of :func:`write_study`; picks up ``<stem>.truth.csv`` if present."""
    path = Path(path)
    with path.open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        d = sum(1 for h in header if h.startswith("x_"))
        if header[:3] != ["location", "t", "y"] or len(header) != 3 + 2 * d:
            raise ValueError(f"{path}: unexpected header")
        rows = list(r)
    n = len(rows)
    x = np.empty((n, d))
    z = np.zeros((n, d))
    t = np.empty(n, dtype=np.int8)
    y = np.empty(n)
    loc = np.empty(n, dtype=np.int64)
    for i, row in enumerate(rows):
        loc[i] = int(row[0])
        t[i] = Treatment.parse(row[1])
        y[i] = float(row[2])
        x[i] = [float(v) for v in row[3:3 + d]]
        zs = row[3 + d:]
        if t[i] == Treatment.A1:
            if any(zs):
                raise ValueError(f"{path}:{i + 2}: A1 row reports hidden confounders")
        else:
            z[i] = [float(v) for v in zs]
    truth = None
    truth_path = Path(truth_path) if truth_path else path.with_name(path.stem + ".truth.csv")
    if truth_path.exists():
        data = np.loadtxt(truth_path, delimiter=",", skiprows=1, ndmin=2)
        if len(data) != n:
            raise ValueError(f"{truth_path}: {len(data)} rows, study has {n}")
        truth = Truth(data[:, 0], data[:, 1], data[:, 2], data[:, 3], data[:, 4], data[:, 5:])
    return Study(x=x, z=z, t=t, y=y, location=loc, truth=truth, config=config)


def stack_studies(parts: Sequence[Study]) -> Study:
    first = parts[0]
    truth = None
    if all(p.truth is not None for p in parts):
        truth = Truth(*(np.concatenate([getattr(p.truth, f) for p in parts])
                        for f in ("nu", "mu_a1", "mu_a3", "y_a1", "pi", "z_full")))
    train = None
    if all(p.train is not None for p in parts):
        train = np.concatenate([p.train for p in parts])
    return Study(
        x=np.vstack([p.x for p in parts]), z=np.vstack([p.z for p in parts]),
        t=np.concatenate([p.t for p in parts]), y=np.concatenate([p.y for p in parts]),
        location=np.concatenate([p.location for p in parts]),
        truth=truth, config=first.config, train=train, ar=first.ar,
    )
