"""Analyses built on fitted models: stiffness/damping, Chow test, force estimation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats as sps

from .core import Dataset, FittedModel, ModelSpec, Phase, Trajectory, dataset_fingerprint
from .dataset import segment_cycles
from .errors import InvariantError, LengthMismatch, TooFewSamples, UnsupportedFamily
from .fitting import FitConfig, fit
from .models import PolyParams, lagged_rows, model_inputs, predict, predict_dataset


def _poly_params(model: FittedModel) -> PolyParams:
    if not model.spec.family.is_poly:
        raise UnsupportedFamily(f"analytic partials need a polynomial model, got {model.spec.family.value}")
    return PolyParams.from_flat(model.spec, model.params)


def poly_partials(model: FittedModel, v, v_dot):
    """(dP/dv, dP/dv_dot) of a polynomial model; lag terms do not depend on the current sample."""
    pp = _poly_params(model)
    v = np.asarray(v, dtype=float)
    vd = np.asarray(v_dot, dtype=float)
    k = np.zeros(np.broadcast(v, vd).shape)
    c = np.zeros_like(k)
    for (i, j), a in zip(pp.spec.terms, pp.alpha):
        if i:
            k = k + i * a * v ** (i - 1) * vd ** j
        if j:
            c = c + j * a * v ** i * vd ** (j - 1)
    return k, c


@dataclass(frozen=True, eq=False)
class StiffnessDampingReport:
    k_bar: float
    c_bar: float
    k_bar_inflation: float
    k_bar_deflation: float
    c_bar_inflation: float
    c_bar_deflation: float
    pointwise: np.ndarray  # columns v, v_dot, k, c

    def to_dict(self) -> dict:
        out = {name: getattr(self, name) for name in (
            "k_bar", "c_bar", "k_bar_inflation", "k_bar_deflation", "c_bar_inflation", "c_bar_deflation")}
        out["n_points"] = int(self.pointwise.shape[0])
        return out


def _mean(x) -> float:
    return float(np.mean(x)) if np.size(x) else math.nan


def stiffness_damping(model: FittedModel, ds: Dataset) -> StiffnessDampingReport:
    """Pointwise k = dP/dv and c = dP/dv_dot over every modelled sample, with per-phase means.

    Phases come from :func:`segment_cycles`; a phase that never occurs has mean NaN.
    """
    _poly_params(model)
    p = model.spec.p
    rows = {Phase.INFLATION: [], Phase.DEFLATION: []}
    all_rows = []
    for tr in ds.trajectories:
        v, vd, _, _ = lagged_rows(tr, p)
        for seg_start, seg in _segments_with_offsets(tr):
            # row r of the lagged arrays is sample r + p
            lo, hi = max(seg_start - p, 0), max(seg_start + len(seg) - p, 0)
            block = np.column_stack([v[lo:hi], vd[lo:hi]])
            all_rows.append(block)
            if seg.phase in rows:
                rows[seg.phase].append(block)
    pts = np.concatenate(all_rows, axis=0) if all_rows else np.zeros((0, 2))
    if pts.shape[0] == 0:
        raise TooFewSamples("no samples to evaluate")
    k, c = poly_partials(model, pts[:, 0], pts[:, 1])
    pointwise = np.column_stack([pts, k, c])

    def phase_means(phase):
        blocks = rows[phase]
        if not blocks:
            return math.nan, math.nan
        q = np.concatenate(blocks, axis=0)
        kk, cc = poly_partials(model, q[:, 0], q[:, 1])
        return _mean(kk), _mean(cc)

    ki, ci = phase_means(Phase.INFLATION)
    kd, cd = phase_means(Phase.DEFLATION)
    return StiffnessDampingReport(
        k_bar=_mean(k), c_bar=_mean(c), k_bar_inflation=ki, k_bar_deflation=kd,
        c_bar_inflation=ci, c_bar_deflation=cd, pointwise=pointwise,
    )


def _segments_with_offsets(tr: Trajectory):
    pos = 0
    for seg in segment_cycles(tr):
        yield pos, seg
        pos += len(seg)


# ------------------------------------------------------------------ Chow test

@dataclass(frozen=True)
class ChowReport:
    f_stat: float
    df1: int
    df2: int
    p_value: float
    critical_value: float
    alpha: float
    reject: bool
    ssr_pooled: float
    ssr_1: float
    ssr_2: float

    def __post_init__(self):
        if not self.f_stat >= 0:
            raise InvariantError(f"F statistic must be non-negative, got {self.f_stat}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _ssr(model: FittedModel, ds: Dataset) -> float:
    y, yhat = predict_dataset(model, ds)
    r = y - yhat
    return float(r @ r)


def chow_test(ds1: Dataset, ds2: Dataset, spec: ModelSpec, alpha: float = 0.0005,
              cfg: FitConfig | None = None) -> ChowReport:
    """Pooled-versus-split F test of whether one model describes both datasets.

    F = [(SSR_p - SSR_1 - SSR_2) / nu] / [(SSR_1 + SSR_2) / (N_1 + N_2 - 2 nu)].
    The inputs are put in a canonical order first, so swapping them gives a
    bit-identical report.
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if dataset_fingerprint(ds2) < dataset_fingerprint(ds1):
        ds1, ds2 = ds2, ds1
    pooled = Dataset(trajectories=ds1.trajectories + ds2.trajectories, chamber_id=ds1.chamber_id)
    s1 = _ssr(fit(ds1, spec, cfg), ds1)
    s2 = _ssr(fit(ds2, spec, cfg), ds2)
    sp = _ssr(fit(pooled, spec, cfg), pooled)
    nu = spec.nu
    n1 = model_inputs(ds1, spec.p)[3].size
    n2 = model_inputs(ds2, spec.p)[3].size
    df2 = n1 + n2 - 2 * nu
    if df2 <= 0:
        raise TooFewSamples(f"Chow test needs N1 + N2 > 2 nu (N1={n1}, N2={n2}, nu={nu})")
    num = sp - s1 - s2
    # the pooled fit can only be worse; differences at rounding level count as zero
    if num <= 1e-12 * max(sp, 1e-300):
        num = 0.0
    den = s1 + s2
    if den == 0:
        f = 0.0 if num == 0 else math.inf
    else:
        f = (num / nu) / (den / df2)
    crit = float(sps.f.isf(alpha, nu, df2))
    p_value = float(sps.f.sf(f, nu, df2))
    return ChowReport(f_stat=float(f), df1=nu, df2=df2, p_value=p_value, critical_value=crit, alpha=alpha,
                      reject=bool(f > crit), ssr_pooled=sp, ssr_1=s1, ssr_2=s2)


# ------------------------------------------------------------------ force estimation

@dataclass(frozen=True)
class ForceEstimate:
    t: float
    per_chamber_residual: tuple
    force: float

    @property
    def magnitude(self) -> float:
        return abs(self.force)


def force_residuals(models: Sequence[FittedModel], streams: Sequence[Trajectory]) -> np.ndarray:
    """(N, chambers) array of measured minus predicted pressure."""
    if len(models) != len(streams):
        raise LengthMismatch(f"{len(models)} models for {len(streams)} streams")
    n = len(streams[0])
    if any(len(s) != n for s in streams):
        raise LengthMismatch("streams must have equal length")
    cols = []
    for model, s in zip(models, streams):
        if model.spec.family.is_autoregressive:
            raise UnsupportedFamily("force estimation needs a memoryless (non-AR) model")
        if s.v_dot is None:
            raise InvariantError("streams need v_dot; differentiate them first")
        cols.append(s.p - np.asarray(predict(model, s.v, s.v_dot), dtype=float))
    return np.column_stack(cols)


def estimate_force(models: Sequence[FittedModel], streams: Sequence[Trajectory],
                   areas: Sequence[float]) -> list:
    """Instantaneous force sum_i residual_i * area_i (kPa * mm^2 = mN) at each sample.

    ``force`` keeps the sign of the sum; only ``magnitude`` is meaningful as a
    physical estimate because the load direction is not resolved.
    """
    areas = np.asarray(areas, dtype=float)
    if areas.shape != (len(models),):
        raise LengthMismatch(f"{areas.size} areas for {len(models)} chambers")
    res = force_residuals(models, streams)
    force = res @ areas
    t = streams[0].t
    return [ForceEstimate(t=float(t[i]), per_chamber_residual=tuple(float(x) for x in res[i]), force=float(force[i]))
            for i in range(res.shape[0])]


def force_series(estimates: Sequence[ForceEstimate]):
    """(t, force) arrays from a list of estimates."""
    t = np.array([e.t for e in estimates])
    f = np.array([e.force for e in estimates])
    return t, f


# ------------------------------------------------------------------ equation of motion

def decompose_eom(model: FittedModel):
    """Split a polynomial model into P = C(v, v_dot) * v_dot + K(v) (+ AR terms).

    Returns ``(C, K)``: ``C[i, j]`` multiplies v^i v_dot^j inside C, so it holds
    alpha_{i, j+1}; ``K[i]`` = alpha_{i, 0}.
    """
    table = _poly_params(model).table()
    return table[:, 1:].copy(), table[:, 0].copy()


def eom_eval(C: np.ndarray, K: np.ndarray, v, v_dot):
    v = np.asarray(v, dtype=float)
    vd = np.asarray(v_dot, dtype=float)
    kv = sum(K[i] * v ** i for i in range(K.size))
    cv = sum(C[i, j] * v ** i * vd ** j for i in range(C.shape[0]) for j in range(C.shape[1]))
    return cv * vd + kv
