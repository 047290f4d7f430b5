"""Domain types shared across hydrofit.

Units are fixed library-wide: volume in mm^3, flow in mm^3/s, pressure in kPa,
time in s, force in mN.  Trajectories are stored column-wise as read-only
numpy arrays; ``Trajectory.samples`` materialises per-row :class:`Sample`
records when needed.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Iterator, Mapping, Optional, Sequence

import numpy as np

from .errors import HydrofitError, InvariantError, MissingDerivatives

MODEL_FORMAT = "hydrofit-model/1"
DEFAULT_SAMPLE_RATE = 25.0
DT_TOLERANCE = 0.10


class Family(str, Enum):
    EXPONENTIAL = "exp"
    POLY = "poly"
    POLY_AR = "polyar"
    NN = "nn"
    NN_AR = "nnar"

    @property
    def is_poly(self) -> bool:
        return self in (Family.POLY, Family.POLY_AR)

    @property
    def is_nn(self) -> bool:
        return self in (Family.NN, Family.NN_AR)

    @property
    def is_autoregressive(self) -> bool:
        return self in (Family.POLY_AR, Family.NN_AR)


class Phase(str, Enum):
    INFLATION = "inflation"
    DEFLATION = "deflation"
    MIXED = "mixed"


@dataclass(frozen=True)
class Sample:
    t: float
    v: float
    v_dot: float
    v_ddot: float
    p: float

    def __post_init__(self):
        for name in ("t", "v", "v_dot", "v_ddot", "p"):
            if not math.isfinite(getattr(self, name)):
                raise InvariantError(f"sample field {name} is not finite")
        if self.v < 0:
            raise InvariantError(f"negative volume {self.v}")


def _frozen(a, name) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True).reshape(-1)
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise InvariantError(f"{name} is not finite", row=bad)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Ordered samples of one chamber, uniformly sampled in time.

    ``v_dot`` and ``v_ddot`` may be ``None`` until :func:`hydrofit.dataset.differentiate`
    fills them.
    """

    t: np.ndarray
    v: np.ndarray
    p: np.ndarray
    v_dot: Optional[np.ndarray] = None
    v_ddot: Optional[np.ndarray] = None
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE
    cycle_id: int = 0
    phase: Phase = Phase.MIXED

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "t", _frozen(self.t, "t"))
        n = self.t.size
        if n == 0:
            raise InvariantError("trajectory has no samples")
        for name in ("v", "p", "v_dot", "v_ddot"):
            col = getattr(self, name)
            if col is None:
                continue
            col = _frozen(col, name)
            if col.size != n:
                raise InvariantError(f"column {name} has {col.size} rows, expected {n}")
            set_(self, name, col)
        set_(self, "phase", Phase(self.phase))
        if self.sample_rate_hz <= 0:
            raise InvariantError("sample_rate_hz must be positive")
        if np.any(self.v < 0):
            raise InvariantError("negative volume", row=int(np.flatnonzero(self.v < 0)[0]))
        if n > 1:
            dt = np.diff(self.t)
            if np.any(dt <= 0):
                raise InvariantError("time not strictly increasing", row=int(np.flatnonzero(dt <= 0)[0]) + 1)
            nominal = 1.0 / self.sample_rate_hz
            off = np.abs(dt - nominal) > DT_TOLERANCE * nominal
            if np.any(off):
                raise InvariantError(
                    f"sample spacing deviates more than 10% from 1/{self.sample_rate_hz} s",
                    row=int(np.flatnonzero(off)[0]) + 1,
                )

    def __len__(self) -> int:
        return self.t.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return _trajectory_bytes(self) == _trajectory_bytes(other)

    @property
    def has_derivatives(self) -> bool:
        return self.v_dot is not None and self.v_ddot is not None

    @property
    def samples(self) -> list[Sample]:
        if not self.has_derivatives:
            raise MissingDerivatives("trajectory has no v_dot/v_ddot columns")
        return [
            Sample(float(a), float(b), float(c), float(d), float(e))
            for a, b, c, d, e in zip(self.t, self.v, self.v_dot, self.v_ddot, self.p)
        ]

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], **kwargs) -> "Trajectory":
        cols = np.array([[s.t, s.v, s.v_dot, s.v_ddot, s.p] for s in samples], dtype=float).reshape(-1, 5)
        return cls(t=cols[:, 0], v=cols[:, 1], v_dot=cols[:, 2], v_ddot=cols[:, 3], p=cols[:, 4], **kwargs)

    def replace(self, **changes) -> "Trajectory":
        fields = dict(
            t=self.t, v=self.v, p=self.p, v_dot=self.v_dot, v_ddot=self.v_ddot,
            sample_rate_hz=self.sample_rate_hz, cycle_id=self.cycle_id, phase=self.phase,
        )
        fields.update(changes)
        return Trajectory(**fields)

    def slice(self, start: int, stop: int, **changes) -> "Trajectory":
        cols = {
            name: (None if getattr(self, name) is None else getattr(self, name)[start:stop])
            for name in ("t", "v", "p", "v_dot", "v_ddot")
        }
        cols.update(changes)
        return self.replace(**cols)


@dataclass(frozen=True, eq=False)
class Dataset:
    trajectories: tuple
    chamber_id: int = 0
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        if not trajs:
            raise InvariantError("dataset has no trajectories")
        if not all(isinstance(tr, Trajectory) for tr in trajs):
            raise InvariantError("dataset entries must be Trajectory instances")
        object.__setattr__(self, "trajectories", trajs)
        object.__setattr__(self, "metadata", MappingProxyType({str(k): str(v) for k, v in dict(self.metadata).items()}))

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self) -> Iterator[Trajectory]:
        return iter(self.trajectories)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return dataset_fingerprint(self) == dataset_fingerprint(other)

    @property
    def n_samples(self) -> int:
        return sum(len(tr) for tr in self.trajectories)

    @property
    def has_derivatives(self) -> bool:
        return all(tr.has_derivatives for tr in self.trajectories)

    def column(self, name: str) -> np.ndarray:
        cols = [getattr(tr, name) for tr in self.trajectories]
        if any(c is None for c in cols):
            raise MissingDerivatives(f"column {name} is not populated")
        return np.concatenate(cols)

    def replace(self, **changes) -> "Dataset":
        fields = dict(trajectories=self.trajectories, chamber_id=self.chamber_id, metadata=dict(self.metadata))
        fields.update(changes)
        return Dataset(**fields)


def _trajectory_bytes(tr: Trajectory) -> bytes:
    parts = [
        struct.pack("<qd", int(tr.cycle_id), float(tr.sample_rate_hz)),
        tr.phase.value.encode(),
        struct.pack("<q", len(tr)),
    ]
    for name in ("t", "v", "v_dot", "v_ddot", "p"):
        col = getattr(tr, name)
        parts.append(name.encode())
        parts.append(b"\x00" if col is None else np.ascontiguousarray(col, dtype="<f8").tobytes())
    return b"".join(parts)


def dataset_fingerprint(ds: Dataset) -> str:
    """SHA-256 of a canonical little-endian serialisation of ``ds``."""
    h = hashlib.sha256()
    h.update(b"hydrofit-dataset/1")
    h.update(struct.pack("<q", int(ds.chamber_id)))
    h.update(json.dumps(sorted(ds.metadata.items())).encode())
    for tr in ds.trajectories:
        h.update(_trajectory_bytes(tr))
    return h.hexdigest()


def _positive(name, value, allow_zero=False):
    if value is None:
        raise InvariantError(f"hyperparameter {name} is required")
    if int(value) != value:
        raise InvariantError(f"hyperparameter {name} must be an integer")
    if value < 0 or (value == 0 and not allow_zero):
        raise InvariantError(f"hyperparameter {name} must be {'non-negative' if allow_zero else 'positive'}")
    return int(value)


@dataclass(frozen=True)
class ModelSpec:
    """Model family plus hyperparameters.

    Only the hyperparameters of the chosen family are kept; the rest are
    normalised to ``None`` (or 0 for ``p``) so equal specs compare equal.

    ``k``: exponential-term count; ``n``, ``m``: highest exponents of v and
    v_dot; ``p``: autoregressive order; ``d``: network depth; ``term_mask``:
    excluded (i, j) monomials of the polynomial families.
    """

    family: Family
    k: Optional[int] = None
    n: Optional[int] = None
    m: Optional[int] = None
    p: int = 0
    d: Optional[int] = None
    term_mask: frozenset = frozenset()

    def __post_init__(self):
        set_ = object.__setattr__
        fam = Family(self.family)
        set_(self, "family", fam)
        k = n = m = d = None
        p = 0
        mask = frozenset()
        if fam is Family.EXPONENTIAL:
            k = _positive("k", self.k)
        elif fam.is_poly:
            n = _positive("n", self.n, allow_zero=True)
            m = _positive("m", self.m, allow_zero=True)
            mask = frozenset((int(i), int(j)) for i, j in self.term_mask)
            for i, j in mask:
                if not (0 <= i <= n and 0 <= j <= m):
                    raise InvariantError(f"masked term ({i},{j}) outside the (n, m) grid")
            if (n, m) in mask:
                raise InvariantError("term_mask may not exclude the highest-degree term (n, m)")
        else:
            d = _positive("d", self.d)
        if fam.is_autoregressive:
            p = _positive("p", self.p, allow_zero=True)
        elif self.p:
            raise InvariantError(f"family {fam.value} takes no autoregressive order")
        set_(self, "k", k)
        set_(self, "n", n)
        set_(self, "m", m)
        set_(self, "d", d)
        set_(self, "p", p)
        set_(self, "term_mask", mask)

    @property
    def terms(self) -> list[tuple[int, int]]:
        """Unmasked monomials (i, j) of v^i v_dot^j in row-major order."""
        if not self.family.is_poly:
            return []
        return [(i, j) for i in range(self.n + 1) for j in range(self.m + 1) if (i, j) not in self.term_mask]

    @property
    def nu(self) -> int:
        fam = self.family
        if fam is Family.EXPONENTIAL:
            return 2 * self.k + 2
        if fam.is_poly:
            return len(self.terms) + 2 * self.p
        # cascade: first neuron (2 + 2p inputs, bias), later neurons also see the
        # previous activation, affine output on the last activation.
        lag = 2 * self.p
        return (3 + lag) + (self.d - 1) * (4 + lag) + 2

    @property
    def has_intercept(self) -> bool:
        if self.family.is_poly:
            return (0, 0) not in self.term_mask
        return True

    @property
    def hyperparameters(self) -> dict:
        fam = self.family
        if fam is Family.EXPONENTIAL:
            return {"k": self.k}
        if fam.is_poly:
            out = {"n": self.n, "m": self.m}
            if fam is Family.POLY_AR:
                out["p"] = self.p
            if self.term_mask:
                out["term_mask"] = sorted([list(t) for t in self.term_mask])
            return out
        out = {"d": self.d}
        if fam is Family.NN_AR:
            out["p"] = self.p
        return out

    @property
    def label(self) -> str:
        fam = self.family
        if fam is Family.EXPONENTIAL:
            return f"k={self.k}"
        if fam is Family.POLY:
            base = f"({self.n}, {self.m})"
        elif fam is Family.POLY_AR:
            base = f"({self.p}, {self.n}, {self.m})"
        elif fam is Family.NN:
            base = f"d={self.d}"
        else:
            base = f"({self.p}, {self.d})"
        if self.term_mask:
            base += " -" + ",".join(f"v{i}vd{j}" for i, j in sorted(self.term_mask))
        return base

    def sort_key(self) -> tuple:
        return (
            self.family.value, self.k or 0, self.n or 0, self.m or 0, self.p, self.d or 0,
            tuple(sorted(self.term_mask)),
        )

    @classmethod
    def from_hyperparameters(cls, family, hp: Mapping) -> "ModelSpec":
        hp = dict(hp)
        mask = frozenset(tuple(t) for t in hp.pop("term_mask", []))
        return cls(family=Family(family), term_mask=mask, **hp)


@dataclass(frozen=True, eq=False)
class FittedModel:
    """A spec with learned flat parameters.

    ``normalization`` holds (mean, std) for the columns (v, v_dot, p); it is
    ``None`` (identity) for the exponential and polynomial families.
    """

    spec: ModelSpec
    params: np.ndarray
    trained_on: str = ""
    normalization: Optional[tuple] = None

    def __post_init__(self):
        params = np.array(self.params, dtype=np.float64, copy=True).reshape(-1)
        if params.size != self.spec.nu:
            raise InvariantError(f"expected {self.spec.nu} parameters for {self.spec.label}, got {params.size}")
        params.flags.writeable = False
        object.__setattr__(self, "params", params)
        if self.normalization is not None:
            norm = tuple((float(mu), float(sd)) for mu, sd in self.normalization)
            if len(norm) != 3 or any(sd <= 0 for _, sd in norm):
                raise InvariantError("normalization needs positive (mean, std) for v, v_dot, p")
            object.__setattr__(self, "normalization", norm)

    @property
    def nu(self) -> int:
        return self.spec.nu

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "family": self.spec.family.value,
            "hyperparameters": self.spec.hyperparameters,
            "params": [float(x) for x in self.params],
            "normalization": None if self.normalization is None else [list(pair) for pair in self.normalization],
            "nu": self.nu,
            "trained_on": self.trained_on,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "FittedModel":
        if data.get("format") != MODEL_FORMAT:
            raise HydrofitError(f"unsupported model format {data.get('format')!r}")
        spec = ModelSpec.from_hyperparameters(data["family"], data["hyperparameters"])
        model = cls(spec=spec, params=data["params"], trained_on=data.get("trained_on", ""),
                    normalization=data.get("normalization"))
        if int(data["nu"]) != model.nu:
            raise InvariantError(f"model file declares nu={data['nu']} but the spec implies {model.nu}")
        return model

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "FittedModel":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        from .io import atomic_write_text

        atomic_write_text(Path(path), self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "FittedModel":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class FitReport:
    rmse: float
    r2_adj: float
    aicc: float
    bic: float
    joint_cost: float
    nu: int
    n_samples: int
    daicc_dnu: float = float("nan")
    dbic_dnu: float = float("nan")

    def __post_init__(self):
        if not self.rmse >= 0:
            raise InvariantError(f"rmse must be non-negative, got {self.rmse}")
        if self.r2_adj > 1 + 1e-12:
            raise InvariantError(f"adjusted R^2 cannot exceed 1, got {self.r2_adj}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}
