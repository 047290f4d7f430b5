"""The five pressure-model families and their flat parameter layouts.

Flat parameter ordering per family:

* Exponential: ``[alpha_1..alpha_k, beta_1..beta_k, gamma, delta]``.
* Poly / PolyAR: one alpha per unmasked monomial v^i v_dot^j in row-major
  (i, j) order, then ``[beta_11, beta_12, beta_21, beta_22, ...]`` where
  ``beta_k1`` multiplies v(t - k dt) and ``beta_k2`` multiplies v_dot(t - k dt).
* NN / NNAR: a cascade of ``d`` single ReLU neurons.  Every neuron sees the
  current (v, v_dot) and, for NNAR, the 2p lagged inputs; neurons after the
  first also see the previous activation.  Neuron blocks are laid out as
  ``[input weights..., (cascade weight), bias]`` followed by the output
  ``[weight, bias]``.  This gives ``nu = 4d + 1`` without lags.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Dataset, Family, FittedModel, ModelSpec, Trajectory
from .errors import ExpOverflow, MissingDerivatives, MissingLags, ShapeMismatch, UnsupportedFamily

EXP_GUARD = 700.0


def count_params(spec: ModelSpec) -> int:
    return spec.nu


# ---------------------------------------------------------------- exponential

@dataclass(frozen=True, eq=False)
class ExpParams:
    alpha: np.ndarray
    beta: np.ndarray
    gamma: float
    delta: float

    @classmethod
    def from_flat(cls, spec: ModelSpec, flat) -> "ExpParams":
        flat = np.asarray(flat, dtype=float)
        k = spec.k
        return cls(alpha=flat[:k], beta=flat[k:2 * k], gamma=float(flat[2 * k]), delta=float(flat[2 * k + 1]))

    def to_flat(self) -> np.ndarray:
        return np.concatenate([self.alpha, self.beta, [self.gamma, self.delta]])


def exp_basis(beta, v) -> np.ndarray:
    """Columns exp(beta_i * v), guarded against overflow."""
    v = np.asarray(v, dtype=float)
    expo = np.multiply.outer(v, np.asarray(beta, dtype=float))
    if expo.size and np.max(expo) > EXP_GUARD:
        raise ExpOverflow(f"beta*v reaches {np.max(expo):.1f} (> {EXP_GUARD})")
    return np.exp(expo)


def predict_exp(params: ExpParams, v, v_dot):
    out = exp_basis(params.beta, v) @ np.asarray(params.alpha, dtype=float) + params.gamma * np.asarray(v_dot) + params.delta
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------- polynomial

@dataclass(frozen=True, eq=False)
class PolyParams:
    spec: ModelSpec
    alpha: np.ndarray
    beta: np.ndarray  # shape (p, 2)

    @classmethod
    def from_flat(cls, spec: ModelSpec, flat) -> "PolyParams":
        flat = np.asarray(flat, dtype=float)
        nt = len(spec.terms)
        return cls(spec=spec, alpha=flat[:nt], beta=flat[nt:].reshape(spec.p, 2))

    @classmethod
    def from_table(cls, table, spec: Optional[ModelSpec] = None) -> "PolyParams":
        """Build from an (n+1) x (m+1) coefficient table (masked entries ignored)."""
        table = np.asarray(table, dtype=float)
        if spec is None:
            spec = ModelSpec(Family.POLY, n=table.shape[0] - 1, m=table.shape[1] - 1)
        alpha = np.array([table[i, j] for i, j in spec.terms])
        return cls(spec=spec, alpha=alpha, beta=np.zeros((spec.p, 2)))

    def to_flat(self) -> np.ndarray:
        return np.concatenate([self.alpha, self.beta.reshape(-1)])

    def table(self) -> np.ndarray:
        out = np.zeros((self.spec.n + 1, self.spec.m + 1))
        for (i, j), a in zip(self.spec.terms, self.alpha):
            out[i, j] = a
        return out


def monomials(terms, v, v_dot) -> np.ndarray:
    """Matrix with one column v^i * v_dot^j per term."""
    v = np.asarray(v, dtype=float)
    vd = np.asarray(v_dot, dtype=float)
    if not terms:
        return np.zeros(v.shape + (0,))
    n = max(i for i, _ in terms)
    m = max(j for _, j in terms)
    vp = [np.ones_like(v)]
    for _ in range(n):
        vp.append(vp[-1] * v)
    dp = [np.ones_like(vd)]
    for _ in range(m):
        dp.append(dp[-1] * vd)
    return np.stack([vp[i] * dp[j] for i, j in terms], axis=-1)


def _check_lags(lags, p, lead_shape):
    if p == 0:
        if lags is not None and np.size(lags):
            raise MissingLags("model has no autoregressive terms but lags were given")
        return None
    if lags is None:
        raise MissingLags(f"model needs {p} lagged (v, v_dot) pairs")
    lags = np.asarray(lags, dtype=float)
    if lags.shape != tuple(lead_shape) + (p, 2):
        raise MissingLags(f"lags must have shape {tuple(lead_shape) + (p, 2)}, got {lags.shape}")
    return lags


def predict_poly(params: PolyParams, v, v_dot, lags=None):
    """Monomial sum plus linear AR terms.

    ``lags[..., k-1, :]`` holds (v, v_dot) at ``t - k dt``.
    """
    spec = params.spec
    lead = np.shape(v)
    lags = _check_lags(lags, spec.p, lead)
    out = monomials(spec.terms, v, v_dot) @ params.alpha
    if lags is not None:
        out = out + np.einsum("...kc,kc->...", lags, params.beta)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------- cascade NN

@dataclass(frozen=True, eq=False)
class NnParams:
    W: np.ndarray      # (d, 2 + 2p) input weights per neuron
    u: np.ndarray      # (d - 1,) weight of the previous activation
    b: np.ndarray      # (d,) biases
    w_out: float
    b_out: float

    @property
    def depth(self) -> int:
        return self.W.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.W.shape[1]

    @classmethod
    def from_flat(cls, spec: ModelSpec, flat) -> "NnParams":
        flat = np.asarray(flat, dtype=float)
        d, ni = spec.d, 2 + 2 * spec.p
        if flat.size != spec.nu:
            raise ShapeMismatch(f"expected {spec.nu} NN parameters, got {flat.size}")
        W = np.empty((d, ni))
        u = np.empty(d - 1)
        b = np.empty(d)
        pos = 0
        for layer in range(d):
            W[layer] = flat[pos:pos + ni]
            pos += ni
            if layer:
                u[layer - 1] = flat[pos]
                pos += 1
            b[layer] = flat[pos]
            pos += 1
        return cls(W=W, u=u, b=b, w_out=float(flat[pos]), b_out=float(flat[pos + 1]))

    def to_flat(self) -> np.ndarray:
        parts = []
        for layer in range(self.depth):
            parts.append(self.W[layer])
            if layer:
                parts.append([self.u[layer - 1]])
            parts.append([self.b[layer]])
        parts.append([self.w_out, self.b_out])
        return np.concatenate(parts)


def init_nn(spec: ModelSpec, seed: int) -> NnParams:
    """He-scaled random weights; cascade weights start near 1 and biases positive
    so that the chain starts out active."""
    rng = np.random.default_rng(seed)
    d, ni = spec.d, 2 + 2 * spec.p
    W = rng.normal(0.0, np.sqrt(2.0 / (ni + 1)), size=(d, ni))
    u = 1.0 + 0.1 * rng.normal(size=d - 1)
    b = np.full(d, 0.5) + 0.1 * rng.normal(size=d)
    w_out = float(rng.normal(0.0, 1.0))
    return NnParams(W=W, u=u, b=b, w_out=w_out, b_out=0.0)


def nn_inputs(v, v_dot, lags=None, p=0) -> np.ndarray:
    v = np.atleast_1d(np.asarray(v, dtype=float))
    vd = np.atleast_1d(np.asarray(v_dot, dtype=float))
    lags = _check_lags(lags, p, v.shape) if p else None
    cols = [v[:, None], vd[:, None]]
    if lags is not None:
        cols.append(lags.reshape(v.shape[0], 2 * p))
    return np.concatenate(cols, axis=1)


def nn_forward(params: NnParams, X: np.ndarray, keep=False):
    """Forward pass on normalised inputs ``X`` (N x (2 + 2p)).

    Returns the output and, with ``keep``, the pre-activations for backprop.
    """
    if X.ndim != 2 or X.shape[1] != params.n_inputs:
        raise ShapeMismatch(f"expected inputs with {params.n_inputs} columns, got shape {X.shape}")
    lin = X @ params.W.T + params.b
    zs = []
    a = None
    for layer in range(params.depth):
        z = lin[:, layer] if a is None else lin[:, layer] + params.u[layer - 1] * a
        a = np.maximum(z, 0.0)
        zs.append(z)
    y = params.w_out * a + params.b_out
    return (y, zs) if keep else y


def nn_backward(params: NnParams, X: np.ndarray, zs, dy: np.ndarray) -> np.ndarray:
    """Gradient of ``sum(dy * y)`` with respect to the flat parameter vector."""
    d = params.depth
    gW = np.empty_like(params.W)
    gu = np.empty(d - 1)
    gb = np.empty(d)
    acts = [np.maximum(z, 0.0) for z in zs]
    g_w_out = float(dy @ acts[-1])
    g_b_out = float(dy.sum())
    da = params.w_out * dy
    for layer in range(d - 1, -1, -1):
        dz = da * (zs[layer] > 0)
        gW[layer] = dz @ X
        gb[layer] = dz.sum()
        if layer:
            gu[layer - 1] = dz @ acts[layer - 1]
            da = params.u[layer - 1] * dz
    return NnParams(W=gW, u=gu, b=gb, w_out=g_w_out, b_out=g_b_out).to_flat()


def predict_nn(params: NnParams, v, v_dot, lags=None, normalization=None):
    """Cascade prediction in kPa.

    Raw inputs are z-scored with ``normalization`` = ((mu_v, sd_v),
    (mu_vdot, sd_vdot), (mu_p, sd_p)); ``None`` means identity.
    """
    scalar = np.ndim(v) == 0
    p = (params.n_inputs - 2) // 2
    if scalar and lags is not None:
        lags = np.asarray(lags, dtype=float)[None]
    X = nn_inputs(v, v_dot, lags, p)
    if normalization is not None:
        (mv, sv), (md, sd), (mp, sp) = normalization
        mu = np.array([mv, md] * (1 + p))
        sg = np.array([sv, sd] * (1 + p))
        X = (X - mu) / sg
    y = nn_forward(params, X)
    if normalization is not None:
        y = y * sp + mp
    return float(y[0]) if scalar else y


# ---------------------------------------------------------------- data plumbing

def lagged_rows(traj: Trajectory, p: int):
    """Current (v, v_dot), lag tensor (N-p, p, 2) and targets for one trajectory."""
    v, vd, P = traj.v, traj.v_dot, traj.p
    n = len(traj)
    if n <= p:
        empty = np.zeros(0)
        return empty, empty, np.zeros((0, p, 2)), empty
    lags = np.empty((n - p, p, 2))
    for k in range(1, p + 1):
        lags[:, k - 1, 0] = v[p - k:n - k]
        lags[:, k - 1, 1] = vd[p - k:n - k]
    return v[p:], vd[p:], lags, P[p:]


def model_inputs(ds: Dataset, p: int = 0):
    """Stack (v, v_dot, lags, P) over trajectories, dropping rows without full lag history."""
    if not ds.has_derivatives:
        raise MissingDerivatives("dataset has no v_dot column; differentiate it first")
    parts = [lagged_rows(tr, p) for tr in ds.trajectories]
    v = np.concatenate([x[0] for x in parts])
    vd = np.concatenate([x[1] for x in parts])
    lags = np.concatenate([x[2] for x in parts], axis=0)
    P = np.concatenate([x[3] for x in parts])
    return v, vd, lags, P


def design_matrix_poly(ds: Dataset, spec: ModelSpec):
    """(X, y) for the polynomial families: monomial columns, then 2p lag columns."""
    if not spec.family.is_poly:
        raise UnsupportedFamily(f"design_matrix_poly needs a polynomial spec, got {spec.family.value}")
    v, vd, lags, P = model_inputs(ds, spec.p)
    X = monomials(spec.terms, v, vd)
    if spec.p:
        X = np.concatenate([X, lags.reshape(len(v), 2 * spec.p)], axis=1)
    return X, P


def family_params(model: FittedModel):
    spec = model.spec
    if spec.family is Family.EXPONENTIAL:
        return ExpParams.from_flat(spec, model.params)
    if spec.family.is_poly:
        return PolyParams.from_flat(spec, model.params)
    return NnParams.from_flat(spec, model.params)


def predict(model: FittedModel, v, v_dot, lags=None):
    spec = model.spec
    params = family_params(model)
    if spec.family is Family.EXPONENTIAL:
        _check_lags(lags, 0, np.shape(v))
        return predict_exp(params, v, v_dot)
    if spec.family.is_poly:
        return predict_poly(params, v, v_dot, lags)
    return predict_nn(params, v, v_dot, lags, model.normalization)


def predict_dataset(model: FittedModel, ds: Dataset):
    """Measured and predicted pressure over every row the model can score."""
    v, vd, lags, P = model_inputs(ds, model.spec.p)
    yhat = predict(model, v, vd, lags if model.spec.p else None)
    return P, np.asarray(yhat, dtype=float)
