"""Parameter estimation for every model family.

* Poly / PolyAR: column-scaled QR least squares.
* Exponential: Levenberg-Marquardt over the exponents only; for fixed
  exponents the linear parameters (alpha, gamma, delta) are eliminated by
  least squares (variable projection, Kaufman Jacobian).
* NN / NNAR: mini-batch Adam on z-scored data with best-validation snapshot.

The NN optimiser, learning rate and batch size are not taken from any
published setup; FitConfig's defaults are this package's choices.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .core import Dataset, Family, FittedModel, ModelSpec, dataset_fingerprint
from .dataset import split
from .errors import (
    Diverged,
    HighestTermWarning,
    InsufficientTrajectories,
    InvariantError,
    NoConvergence,
    NoConvergenceWarning,
    RankDeficient,
    UnsupportedFamily,
)
from .models import (
    ExpParams,
    NnParams,
    design_matrix_poly,
    exp_basis,
    init_nn,
    model_inputs,
    nn_backward,
    nn_forward,
    nn_inputs,
)
from .parallel import parallel_map

COND_LIMIT = 1e12
BETA_BOUND = 0.1
BETA_GRID = (0.002, 0.005, 0.01, 0.02, -0.002, -0.005, -0.01, -0.02)
NN_VALIDATION_FRACTION = 0.1
INIT_ACTIVE = (0.3, 0.9)
INIT_ACTIVE_LAST = 0.999
LR_FLOOR = 0.01


@dataclass(frozen=True)
class FitConfig:
    lm_max_iter: int = 200
    lm_lambda0: float = 1e-3
    lm_tol: float = 1e-10
    nn_epochs: int = 3000
    nn_lr: float = 1e-3
    nn_batch: int = 256
    seed: int = 0
    multistart: int = 8
    nn_restarts: int = 12

    def __post_init__(self):
        for name in ("lm_max_iter", "lm_lambda0", "lm_tol", "nn_lr", "nn_batch", "multistart", "nn_restarts"):
            if not getattr(self, name) > 0:
                raise InvariantError(f"FitConfig.{name} must be positive")
        if self.nn_epochs < 0:
            raise InvariantError("FitConfig.nn_epochs must be >= 0")


# ------------------------------------------------------------------ linear

def _scaled_lstsq(X: np.ndarray, y: np.ndarray):
    """Least squares on max-abs scaled columns; returns (theta, scales, cond)."""
    scale = np.max(np.abs(X), axis=0) if X.shape[0] else np.ones(X.shape[1])
    scale = np.where(scale > 0, scale, 1.0)
    Xs = X / scale
    Q, R = np.linalg.qr(Xs)
    sv = np.linalg.svd(R, compute_uv=False)
    cond = math.inf if sv[-1] == 0 else float(sv[0] / sv[-1])
    if not math.isfinite(cond) or cond > COND_LIMIT:
        return None, scale, cond
    theta_s = solve_triangular(R, Q.T @ y)
    return theta_s / scale, scale, cond


def fit_linear(X, y) -> np.ndarray:
    """argmin ||X theta - y|| via QR of the column-scaled design."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError(f"shape mismatch: X {X.shape}, y {y.shape}")
    if X.shape[0] < X.shape[1]:
        raise RankDeficient(f"{X.shape[0]} rows cannot determine {X.shape[1]} parameters")
    theta, _, cond = _scaled_lstsq(X, y)
    if theta is None:
        raise RankDeficient(f"design matrix is rank deficient (condition number {cond:.3g})", cond=cond)
    return theta


def fit_poly(ds: Dataset, spec: ModelSpec, cfg: Optional[FitConfig] = None) -> FittedModel:
    if not spec.family.is_poly:
        raise UnsupportedFamily(f"fit_poly cannot fit family {spec.family.value}")
    X, y = design_matrix_poly(ds, spec)
    theta = fit_linear(X, y)
    # the highest-degree monomial is the last alpha in row-major order
    top = len(spec.terms) - 1
    scaled_top = abs(theta[top]) * np.max(np.abs(X[:, top]))
    if scaled_top <= 1e-15:
        warnings.warn(f"highest-degree coefficient of {spec.label} is numerically zero ({theta[top]:.3g})",
                      HighestTermWarning, stacklevel=2)
    return FittedModel(spec=spec, params=theta, trained_on=dataset_fingerprint(ds))


# ------------------------------------------------------------------ exponential

class _VarPro:
    """Residuals of the exponential model with the linear parameters projected out."""

    def __init__(self, v, v_dot, P):
        self.v, self.v_dot, self.P = v, v_dot, P

    def design(self, beta):
        return np.column_stack([exp_basis(beta, self.v), self.v_dot, np.ones_like(self.v)])

    def solve(self, beta):
        Phi = self.design(beta)
        theta, scale, _ = _scaled_lstsq(Phi, self.P)
        if theta is None:
            return None
        r = self.P - Phi @ theta
        return {"beta": np.array(beta, dtype=float), "theta": theta, "r": r, "cost": float(r @ r),
                "Phi": Phi, "scale": scale}

    def jacobian(self, state):
        """Kaufman approximation: J_i = -(I - P_Phi) d(Phi theta)/d beta_i."""
        beta, theta, Phi = state["beta"], state["theta"], state["Phi"]
        k = beta.size
        G = Phi[:, :k] * self.v[:, None] * theta[:k]
        Q, _ = np.linalg.qr(Phi / state["scale"])
        return -(G - Q @ (Q.T @ G))


def _lm(problem: _VarPro, beta0, cfg: FitConfig):
    """Levenberg-Marquardt on the exponents; returns (state, converged)."""
    state = problem.solve(np.clip(beta0, -BETA_BOUND, BETA_BOUND))
    if state is None:
        return None, False
    lam = cfg.lm_lambda0
    for _ in range(cfg.lm_max_iter):
        if state["cost"] == 0.0:
            return state, True
        J = problem.jacobian(state)
        g = J.T @ state["r"]
        A = J.T @ J
        diag = np.maximum(np.diag(A), 1e-300)
        improved = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = problem.solve(np.clip(state["beta"] + step, -BETA_BOUND, BETA_BOUND))
            if trial is not None and trial["cost"] < state["cost"]:
                rel = (state["cost"] - trial["cost"]) / state["cost"]
                state = trial
                lam = max(lam / 10.0, 1e-12)
                improved = True
                if rel < cfg.lm_tol:
                    return state, True
                break
            lam *= 10.0
        if not improved:
            # no descent direction left at any damping: a stationary point
            return state, True
    return state, False


def _beta_starts(k: int, v_max: float, cfg: FitConfig, warm: Optional[np.ndarray]):
    scale = 550.0 / v_max if v_max > 0 else 1.0
    grid = [b * scale for b in BETA_GRID]
    while len(grid) < k:
        # more terms than grid points: add geometric midpoints
        grid += [math.copysign(math.sqrt(abs(a * b)), a) for a, b in zip(grid, grid[1:]) if a * b > 0]
        grid = list(dict.fromkeys(grid))
    rng = np.random.default_rng(cfg.seed)
    starts = []
    if warm is not None:
        # keep the smaller model's exponents, add the grid value farthest from them
        new = max(grid, key=lambda g: min(abs(g - w) for w in warm))
        starts.append(np.concatenate([warm, [new]]))
    if k == 1:
        starts += [np.array([g]) for g in grid[:cfg.multistart]]
    else:
        starts.append(np.array(grid[:k]))
        while len(starts) < cfg.multistart + (warm is not None):
            starts.append(np.array(rng.choice(grid, size=k, replace=False)))
    return starts


def fit_exponential(
    ds: Dataset,
    spec: ModelSpec,
    cfg: Optional[FitConfig] = None,
    warm_start: Optional[FittedModel] = None,
    strict: bool = False,
) -> FittedModel:
    """Multistart LM fit of sum_i alpha_i exp(beta_i v) + gamma v_dot + delta.

    ``warm_start`` (a fit with k-1 terms) seeds one restart, which makes the
    achieved cost non-increasing in k.  If no restart meets the tolerance the
    best iterate is returned with a :class:`NoConvergenceWarning`, or
    :class:`NoConvergence` is raised when ``strict``.
    """
    if spec.family is not Family.EXPONENTIAL:
        raise UnsupportedFamily(f"fit_exponential cannot fit family {spec.family.value}")
    cfg = cfg or FitConfig()
    v, vd, _, P = model_inputs(ds, 0)
    problem = _VarPro(v, vd, P)
    warm = None
    if warm_start is not None:
        if warm_start.spec.family is not Family.EXPONENTIAL or warm_start.spec.k != spec.k - 1:
            raise InvariantError("warm_start must be an exponential fit with k - 1 terms")
        warm = ExpParams.from_flat(warm_start.spec, warm_start.params).beta
    starts = _beta_starts(spec.k, float(np.max(v)), cfg, warm)
    results = parallel_map(lambda b0: _lm(problem, b0, cfg), starts)
    finished = [(s, ok) for s, ok in results if s is not None]
    if not finished:
        raise RankDeficient("every exponential start produced a rank-deficient basis")
    best, ok = min(finished, key=lambda item: item[0]["cost"])
    if not any(ok for _, ok in finished):
        msg = f"no LM restart met lm_tol within {cfg.lm_max_iter} iterations (best cost {best['cost']:.6g})"
        if strict:
            raise NoConvergence(msg)
        warnings.warn(msg, NoConvergenceWarning, stacklevel=2)
    k = spec.k
    params = ExpParams(alpha=best["theta"][:k], beta=best["beta"], gamma=best["theta"][k], delta=best["theta"][k + 1])
    return FittedModel(spec=spec, params=params.to_flat(), trained_on=dataset_fingerprint(ds))


def exp_cost(model: FittedModel, ds: Dataset) -> float:
    from .models import predict_dataset

    y, yhat = predict_dataset(model, ds)
    r = y - yhat
    return float(r @ r)


# ------------------------------------------------------------------ neural net

def _zscore(x):
    mu = float(np.mean(x))
    sd = float(np.std(x))
    return mu, (sd if sd > 0 else 1.0)


def nn_loss_and_grad(flat, spec: ModelSpec, X: np.ndarray, y: np.ndarray):
    """Half mean squared error on normalised data and its gradient."""
    params = NnParams.from_flat(spec, flat)
    out, zs = nn_forward(params, X, keep=True)
    r = out - y
    loss = 0.5 * float(r @ r) / y.size
    return loss, nn_backward(params, X, zs, r / y.size)


def _nn_arrays(ds: Dataset, spec: ModelSpec, norm):
    v, vd, lags, P = model_inputs(ds, spec.p)
    X = nn_inputs(v, vd, lags if spec.p else None, spec.p)
    (mv, sv), (md, sd), (mp, sp) = norm
    mu = np.array([mv, md] * (1 + spec.p))
    sg = np.array([sv, sd] * (1 + spec.p))
    return (X - mu) / sg, (P - mp) / sp


def data_init(spec: ModelSpec, X: np.ndarray, seed: int, orientation: float = 1.0) -> NnParams:
    """Random cascade whose kinks fall inside the data.

    Weights come from :func:`init_nn`; each hidden bias is then set so the
    neuron is active on a random fraction (0.3 to 0.9) of the rows of ``X``,
    and the last neuron on nearly all of them.  With positive cascade weights
    the network is convex in its inputs times sign(w_out), so ``orientation``
    fixes the sign of the output weight.
    """
    p = init_nn(spec, seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    b = p.b.copy()
    a = None
    for layer in range(spec.d):
        z = X @ p.W[layer] + (0.0 if a is None else p.u[layer - 1] * a)
        active = rng.uniform(*INIT_ACTIVE) if layer < spec.d - 1 else INIT_ACTIVE_LAST
        b[layer] = -np.quantile(z, 1.0 - active)
        a = np.maximum(z + b[layer], 0.0)
    return NnParams(W=p.W, u=p.u, b=b, w_out=math.copysign(abs(p.w_out), orientation), b_out=p.b_out)


class _AdamRun:
    """Adam with cosine learning-rate decay; tracks the best validation snapshot."""

    B1, B2, EPS = 0.9, 0.999, 1e-8

    def __init__(self, spec, theta, seed, cfg: FitConfig, data):
        self.spec, self.theta, self.cfg = spec, theta, cfg
        self.X, self.y, self.Xv, self.yv = data
        self.rng = np.random.default_rng(seed)
        self.m1 = np.zeros_like(theta)
        self.m2 = np.zeros_like(theta)
        self.step = 0
        self.epoch = 0
        self.best = theta.copy()
        self.best_rmse = self.val_rmse(theta)

    def val_rmse(self, theta) -> float:
        r = nn_forward(NnParams.from_flat(self.spec, theta), self.Xv) - self.yv
        return float(np.sqrt(np.mean(r * r)))

    def lr(self) -> float:
        cfg = self.cfg
        lo = cfg.nn_lr * LR_FLOOR
        return lo + 0.5 * (cfg.nn_lr - lo) * (1.0 + math.cos(math.pi * self.epoch / max(cfg.nn_epochs, 1)))

    def run(self, until: int):
        cfg, n = self.cfg, self.X.shape[0]
        while self.epoch < until:
            lr = self.lr()
            order = self.rng.permutation(n)
            for start in range(0, n, cfg.nn_batch):
                idx = order[start:start + cfg.nn_batch]
                loss, g = nn_loss_and_grad(self.theta, self.spec, self.X[idx], self.y[idx])
                if not math.isfinite(loss):
                    raise Diverged(f"training loss became non-finite in epoch {self.epoch}")
                self.step += 1
                self.m1 = self.B1 * self.m1 + (1 - self.B1) * g
                self.m2 = self.B2 * self.m2 + (1 - self.B2) * g * g
                mhat = self.m1 / (1 - self.B1 ** self.step)
                vhat = self.m2 / (1 - self.B2 ** self.step)
                self.theta = self.theta - lr * mhat / (np.sqrt(vhat) + self.EPS)
            self.epoch += 1
            rmse = self.val_rmse(self.theta)
            if not math.isfinite(rmse):
                raise Diverged("validation error became non-finite")
            if rmse < self.best_rmse:
                self.best_rmse, self.best = rmse, self.theta.copy()
        return self


def fit_nn(ds: Dataset, spec: ModelSpec, cfg: Optional[FitConfig] = None) -> FittedModel:
    """Mini-batch Adam on z-scored data; keeps the parameters with the best validation RMSE.

    10% of trajectories (at least one) are held out for that choice when the
    dataset has two or more; otherwise training RMSE decides.  With
    ``cfg.nn_restarts > 1`` several initialisations, alternating the output
    orientation, compete by successive halving: all train for a twentieth of
    the epochs, the better half (by validation RMSE) continues to twice that,
    and so on until one run remains and is trained on to ``cfg.nn_epochs``.
    """
    if not spec.family.is_nn:
        raise UnsupportedFamily(f"fit_nn cannot fit family {spec.family.value}")
    cfg = cfg or FitConfig()
    try:
        train, val = split(ds, 1.0 - NN_VALIDATION_FRACTION, cfg.seed)
    except InsufficientTrajectories:
        train, val = ds, None
    v, vd, _, P = model_inputs(train, spec.p)
    norm = (_zscore(v), _zscore(vd), _zscore(P))
    X, y = _nn_arrays(train, spec, norm)
    Xv, yv = _nn_arrays(val, spec, norm) if val is not None else (X, y)
    if Xv.shape[0] == 0:
        Xv, yv = X, y
    data = (X, y, Xv, yv)

    seeds = np.random.SeedSequence(cfg.seed).generate_state(cfg.nn_restarts)
    runs = []
    for r, s in enumerate(seeds):
        theta = data_init(spec, X, int(s), 1.0 if r % 2 == 0 else -1.0).to_flat()
        runs.append(_AdamRun(spec, theta, int(s), cfg, data))
    # successive halving: train all runs briefly, keep the better half, double the horizon
    horizon = max(cfg.nn_epochs // 20, 1)
    while len(runs) > 1 and horizon < cfg.nn_epochs:
        parallel_map(lambda run: run.run(horizon), runs)
        runs = sorted(runs, key=lambda run: run.best_rmse)[:(len(runs) + 1) // 2]
        horizon *= 2
    winner = min(runs, key=lambda run: run.best_rmse)
    winner.run(cfg.nn_epochs)
    return FittedModel(spec=spec, params=winner.best, trained_on=dataset_fingerprint(ds), normalization=norm)


# ------------------------------------------------------------------ dispatch

def fit(ds: Dataset, spec: ModelSpec, cfg: Optional[FitConfig] = None) -> FittedModel:
    fam = spec.family
    if fam.is_poly:
        return fit_poly(ds, spec, cfg)
    if fam is Family.EXPONENTIAL:
        return fit_exponential(ds, spec, cfg)
    return fit_nn(ds, spec, cfg)
