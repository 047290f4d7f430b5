"""Synthetic hydraulic actuator used as ground truth for tests and demos.

Pressure follows a (3, 2) volume/flow polynomial (by default the benchmark
actuator's published fit), optionally seen through an isothermal air pocket in
series with the chamber, plus a sign(v_dot) hysteresis offset and Gaussian
sensor noise.  Volume follows trapezoidal cycles: ramp up at +q, dwell, ramp
down at -q.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import DEFAULT_SAMPLE_RATE, Dataset, Family, ModelSpec, Trajectory
from .dataset import smoothed_derivative
from .errors import InvariantError, LengthMismatch, NoFixedPoint
from .models import PolyParams, monomials

# rows: power of v (0..3); columns: power of v_dot (0..2)
REFERENCE_COEFFS = np.array([
    [0.0, 1.7660e-1, 2.3010e-4],
    [1.2695e-2, -1.3896e-4, -3.0150e-6],
    [-8.0664e-5, 6.6527e-7, 1.3800e-8],
    [4.1269e-7, -7.3542e-10, -1.3773e-11],
])
REFERENCE_COEFFS.flags.writeable = False

AIR_MAX_ITER = 50
AIR_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ActuatorTruth:
    poly_coeffs: np.ndarray = field(default_factory=lambda: REFERENCE_COEFFS.copy())
    hysteresis_gain: float = 0.0
    air_volume: float = 0.0
    noise_sigma: float = 0.3
    atm_pressure: float = 101.325

    def __post_init__(self):
        coeffs = np.array(self.poly_coeffs, dtype=float)
        if coeffs.ndim != 2:
            raise InvariantError("poly_coeffs must be a 2-D (n+1) x (m+1) table")
        coeffs.flags.writeable = False
        object.__setattr__(self, "poly_coeffs", coeffs)
        if self.noise_sigma < 0:
            raise InvariantError("noise_sigma must be >= 0")
        if self.air_volume < 0:
            raise InvariantError("air_volume must be >= 0")
        if self.atm_pressure <= 0:
            raise InvariantError("atm_pressure must be positive")

    @property
    def spec(self) -> ModelSpec:
        n, m = self.poly_coeffs.shape
        return ModelSpec(Family.POLY, n=n - 1, m=m - 1)

    @property
    def params(self) -> PolyParams:
        return PolyParams.from_table(self.poly_coeffs, self.spec)

    def with_(self, **changes) -> "ActuatorTruth":
        fields = {k: getattr(self, k) for k in self.__dataclass_fields__}
        fields.update(changes)
        return ActuatorTruth(**fields)

    def to_dict(self) -> dict:
        return {
            "poly_coeffs": self.poly_coeffs.tolist(),
            "hysteresis_gain": self.hysteresis_gain,
            "air_volume": self.air_volume,
            "noise_sigma": self.noise_sigma,
            "atm_pressure": self.atm_pressure,
        }


@dataclass(frozen=True)
class Protocol:
    v_max: float = 550.0
    flow_rates: tuple = (20.0, 40.0, 60.0, 80.0, 100.0)
    cycles_per_rate: int = 20
    sample_rate_hz: float = DEFAULT_SAMPLE_RATE
    seed: int = 0
    dwell_s: float = 0.5

    def __post_init__(self):
        rates = tuple(float(q) for q in self.flow_rates)
        object.__setattr__(self, "flow_rates", rates)
        if not rates or any(q <= 0 for q in rates):
            raise InvariantError("flow rates must be positive")
        if self.v_max <= 0:
            raise InvariantError("v_max must be positive")
        if self.cycles_per_rate < 1:
            raise InvariantError("cycles_per_rate must be >= 1")
        if self.sample_rate_hz <= 0 or self.dwell_s < 0:
            raise InvariantError("sample_rate_hz must be positive and dwell_s non-negative")

    def to_dict(self) -> dict:
        return {
            "v_max": self.v_max, "flow_rates": list(self.flow_rates), "cycles_per_rate": self.cycles_per_rate,
            "sample_rate_hz": self.sample_rate_hz, "seed": self.seed, "dwell_s": self.dwell_s,
        }


def ramp_samples(v_max: float, q: float, fs: float) -> int:
    """Samples on one ramp: local times k/fs with k/fs < v_max/q, i.e. floor(fs*v_max/q) + 1
    unless fs*v_max/q is an integer."""
    return math.ceil(fs * v_max / q - 1e-12)


def cycle_profile(v_max: float, q: float, fs: float, dwell_s: float):
    """Commanded (v, v_dot) over one trapezoid cycle sampled at local times k/fs.

    The cycle lasts 2*v_max/q + dwell_s; samples run k = 0..floor(duration*fs).
    """
    t_ramp = v_max / q
    duration = 2 * t_ramp + dwell_s
    k = np.arange(math.floor(duration * fs + 1e-9) + 1)
    t = k / fs
    up = t < t_ramp
    down = t >= t_ramp + dwell_s
    v = np.where(up, q * t, v_max)
    v = np.where(down, np.maximum(v_max - q * (t - t_ramp - dwell_s), 0.0), v)
    v_dot = np.where(up, q, np.where(down, -q, 0.0))
    return v, v_dot


def command_trajectories(proto: Protocol) -> list[Trajectory]:
    """Noise-free commanded trajectories with p = 0, on one uniform global time grid."""
    fs = proto.sample_rate_hz
    out = []
    offset = 0
    cycle_id = 0
    for q in proto.flow_rates:
        v, v_dot = cycle_profile(proto.v_max, q, fs, proto.dwell_s)
        v_ddot = smoothed_derivative(v_dot, 1.0 / fs, 1)
        n = v.size
        for _ in range(proto.cycles_per_rate):
            t = (offset + np.arange(n)) / fs
            out.append(Trajectory(t=t, v=v, v_dot=v_dot, v_ddot=v_ddot, p=np.zeros(n),
                                  sample_rate_hz=fs, cycle_id=cycle_id))
            offset += n
            cycle_id += 1
    return out


def _stiffness(coeffs: np.ndarray, v, v_dot):
    n = coeffs.shape[0] - 1
    m = coeffs.shape[1] - 1
    terms = [(i, j) for i in range(1, n + 1) for j in range(m + 1)]
    if not terms:
        return np.zeros_like(v)
    weights = np.array([i * coeffs[i, j] for i, j in terms])
    return monomials([(i - 1, j) for i, j in terms], v, v_dot) @ weights


def air_pocket_transform(truth: ActuatorTruth, v_injected, pressure):
    """Chamber volume left after isothermal compression of the air pocket.

    V_air(P) = a * atm / (atm + P);  v_eff = v_injected - (a - V_air(P)).
    """
    # a - a*atm/(atm + P) rewritten as a*P/(atm + P): exact zero at P = 0
    v = np.asarray(v_injected, dtype=float)
    P = np.asarray(pressure, dtype=float)
    a, atm = truth.air_volume, truth.atm_pressure
    out = v - a * P / (atm + P) if a else v + 0.0 * P
    return float(out) if np.ndim(out) == 0 else out


def true_pressure(truth: ActuatorTruth, v, v_dot):
    """Noise-free chamber pressure for commanded (v, v_dot) including the air pocket.

    With an air pocket the chamber sees (v_eff, v_dot_eff), solved jointly with
    the pressure law by fixed-point iteration.  The flow reaching the chamber
    is reduced by the air spring's quasi-static compliance:
    v_dot_eff = v_dot / (1 + a*atm/(atm + P)^2 * dP/dv).
    """
    coeffs = truth.poly_coeffs
    terms = [(i, j) for i in range(coeffs.shape[0]) for j in range(coeffs.shape[1])]
    alpha = np.array([coeffs[i, j] for i, j in terms])
    v = np.asarray(v, dtype=float)
    v_dot = np.asarray(v_dot, dtype=float)
    law = lambda x, xd: monomials(terms, x, xd) @ alpha  # noqa: E731
    if truth.air_volume == 0:
        return law(v, v_dot)

    a, atm = truth.air_volume, truth.atm_pressure
    v_e, vd_e = v.copy(), v_dot.copy()
    for _ in range(AIR_MAX_ITER):
        P = law(v_e, vd_e)
        if np.any(atm + P <= 0):
            raise NoFixedPoint("absolute pressure dropped to zero inside the air pocket")
        v_new = air_pocket_transform(truth, v, P)
        compliance = a * atm / (atm + P) ** 2
        vd_new = v_dot / (1.0 + compliance * _stiffness(coeffs, v_e, vd_e))
        step = max(np.max(np.abs(v_new - v_e)), np.max(np.abs(vd_new - vd_e)))
        v_e, vd_e = v_new, vd_new
        if step < AIR_TOL:
            return law(v_e, vd_e)
    raise NoFixedPoint(f"air-pocket iteration did not settle within {AIR_MAX_ITER} iterations")


def _noise_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def generate(truth: ActuatorTruth, proto: Protocol) -> Dataset:
    """One trajectory per cycle; 5 rates x 20 cycles = 100 trajectories by default.

    Noise for trajectory ``i`` is drawn from a generator seeded by
    ``(proto.seed, i)``, so output is bit-identical for equal inputs.
    """
    trajs = []
    for idx, tr in enumerate(command_trajectories(proto)):
        P = true_pressure(truth, tr.v, tr.v_dot)
        if truth.hysteresis_gain:
            P = P + truth.hysteresis_gain * np.sign(tr.v_dot)
        if truth.noise_sigma:
            P = P + _noise_rng(proto.seed, idx).normal(0.0, truth.noise_sigma, size=len(tr))
        trajs.append(tr.replace(p=P))
    meta = {
        "actuator": "simulated",
        "flow_rates": ",".join(f"{q:g}" for q in proto.flow_rates),
        "air_volume": f"{truth.air_volume:g}",
    }
    return Dataset(trajectories=tuple(trajs), chamber_id=0, metadata=meta)


def concatenate(ds: Dataset, max_samples=None) -> Trajectory:
    """Join trajectories that share one uniform time grid into a single stream."""
    cols = {name: ds.column(name) for name in ("t", "v", "v_dot", "v_ddot", "p")}
    if max_samples is not None:
        cols = {k: c[:max_samples] for k, c in cols.items()}
    first = ds.trajectories[0]
    return Trajectory(sample_rate_hz=first.sample_rate_hz, cycle_id=first.cycle_id, **cols)


def generate_stream(truth: ActuatorTruth, proto: Protocol, duration_s: float) -> Trajectory:
    """A continuous stream of ``round(duration_s * fs)`` samples, cycling through the protocol."""
    n = int(round(duration_s * proto.sample_rate_hz))
    per_pass = sum(len(tr) for tr in command_trajectories(Protocol(
        v_max=proto.v_max, flow_rates=proto.flow_rates, cycles_per_rate=1,
        sample_rate_hz=proto.sample_rate_hz, dwell_s=proto.dwell_s)))
    cycles = max(1, math.ceil(n / per_pass))
    full = Protocol(v_max=proto.v_max, flow_rates=proto.flow_rates, cycles_per_rate=cycles,
                    sample_rate_hz=proto.sample_rate_hz, seed=proto.seed, dwell_s=proto.dwell_s)
    return concatenate(generate(truth, full), max_samples=n)


def inject_external_load(ds: Dataset, offsets) -> Dataset:
    """Add a pressure offset series (kPa, one value per sample in dataset order) to measured P."""
    offsets = np.asarray(offsets, dtype=float).reshape(-1)
    if offsets.size != ds.n_samples:
        raise LengthMismatch(f"{offsets.size} offsets for {ds.n_samples} samples")
    out = []
    pos = 0
    for tr in ds.trajectories:
        n = len(tr)
        out.append(tr.replace(p=tr.p + offsets[pos:pos + n]))
        pos += n
    return ds.replace(trajectories=tuple(out))
