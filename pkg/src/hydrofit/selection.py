"""Fit-quality metrics, the weighted joint cost and hyperparameter grid search.

Information criteria use the Gaussian log-likelihood

    ln L = -N/2 * (ln(2*pi*SSR/N) + 1)

so a perfect fit (SSR = 0) has ln L = +inf and AICc = BIC = -inf.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .core import Dataset, Family, FitReport, FittedModel, ModelSpec
from .dataset import split
from .errors import DegenerateTarget, HydrofitError, InvariantError, LengthMismatch, TooFewSamples
from .fitting import FitConfig, fit
from .models import predict_dataset
from .parallel import parallel_map


def _pair(y, yhat):
    y = np.asarray(y, dtype=float).reshape(-1)
    yhat = np.asarray(yhat, dtype=float).reshape(-1)
    if y.shape != yhat.shape:
        raise LengthMismatch(f"y has {y.size} values but yhat has {yhat.size}")
    if y.size == 0:
        raise TooFewSamples("need at least one sample")
    return y, yhat


def ssr(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    r = y - yhat
    return float(r @ r)


def rmse(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return math.sqrt(ssr(y, yhat) / y.size)


def r2_adj(y, yhat, k: int) -> float:
    """1 - (SSR/SST) * (N-1)/(N-k-1) with k predictors."""
    y, yhat = _pair(y, yhat)
    n = y.size
    if n <= k + 1:
        raise TooFewSamples(f"adjusted R^2 needs N > k + 1 (N={n}, k={k})")
    d = y - y.mean()
    sst = float(d @ d)
    if sst == 0:
        raise DegenerateTarget("target has zero variance")
    return 1.0 - ssr(y, yhat) / sst * (n - 1) / (n - k - 1)


def predictor_count(spec: ModelSpec) -> int:
    """Parameters excluding the intercept, when the model has one."""
    return spec.nu - 1 if spec.has_intercept else spec.nu


def log_likelihood_from_ssr(n: int, s: float) -> float:
    if s == 0:
        return math.inf
    return -0.5 * n * (math.log(2 * math.pi * s / n) + 1.0)


def _check_n(n, nu):
    if n <= nu + 1:
        raise TooFewSamples(f"information criteria need N > nu + 1 (N={n}, nu={nu})")


def aicc_from_ssr(n: int, s: float, nu: int) -> float:
    _check_n(n, nu)
    return 2 * nu - 2 * log_likelihood_from_ssr(n, s) + 2 * nu * (nu + 1) / (n - nu - 1)


def bic_from_ssr(n: int, s: float, nu: int) -> float:
    _check_n(n, nu)
    return nu * math.log(n) - 2 * log_likelihood_from_ssr(n, s)


def log_likelihood(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return log_likelihood_from_ssr(y.size, ssr(y, yhat))


def aic(y, yhat, nu: int) -> float:
    y, yhat = _pair(y, yhat)
    _check_n(y.size, nu)
    return 2 * nu - 2 * log_likelihood(y, yhat)


def aicc(y, yhat, nu: int) -> float:
    """Small-sample AIC; ``-inf`` when the residuals are exactly zero."""
    y, yhat = _pair(y, yhat)
    return aicc_from_ssr(y.size, ssr(y, yhat), nu)


def bic(y, yhat, nu: int) -> float:
    """Bayesian information criterion; ``-inf`` when the residuals are exactly zero."""
    y, yhat = _pair(y, yhat)
    return bic_from_ssr(y.size, ssr(y, yhat), nu)


def daicc_dnu(n: int, nu: int) -> float:
    """Sensitivity of AICc to one more parameter (continuous in nu)."""
    q = n - nu - 1
    return 2.0 + ((4 * nu + 2) * q + 2 * nu * (nu + 1)) / q ** 2


def dbic_dnu(n: int) -> float:
    return math.log(n)


@dataclass(frozen=True)
class Weights:
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 1e-5

    def __post_init__(self):
        ws = (self.w1, self.w2, self.w3)
        if any(w < 0 or not math.isfinite(w) for w in ws):
            raise InvariantError("weights must be finite and non-negative")
        if not any(w > 0 for w in ws):
            raise InvariantError("at least one weight must be positive")


def joint_cost(report: FitReport, w: Weights) -> float:
    """w1*RMSE + w2*(1 - R2_adj) + w3*AICc; zero-weighted terms are skipped."""
    total = 0.0
    for wi, term in ((w.w1, report.rmse), (w.w2, 1.0 - report.r2_adj), (w.w3, report.aicc)):
        if wi:
            total += wi * term
    return total


def report_from_predictions(y, yhat, spec: ModelSpec, w: Optional[Weights] = None) -> FitReport:
    y, yhat = _pair(y, yhat)
    n, nu = y.size, spec.nu
    s = ssr(y, yhat)
    partial = FitReport(
        rmse=math.sqrt(s / n), r2_adj=r2_adj(y, yhat, predictor_count(spec)),
        aicc=aicc_from_ssr(n, s, nu), bic=bic_from_ssr(n, s, nu), joint_cost=math.nan,
        nu=nu, n_samples=n, daicc_dnu=daicc_dnu(n, nu), dbic_dnu=dbic_dnu(n),
    )
    cost = joint_cost(partial, w or Weights())
    return FitReport(**{**partial.to_dict(), "joint_cost": cost})


def evaluate(model: FittedModel, ds: Dataset, w: Optional[Weights] = None) -> FitReport:
    y, yhat = predict_dataset(model, ds)
    return report_from_predictions(y, yhat, model.spec, w)


# ------------------------------------------------------------------ grid search

@dataclass(frozen=True)
class GridEntry:
    spec: ModelSpec
    report: Optional[FitReport]
    error: Optional[str] = None
    model: Optional[FittedModel] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class GridResult:
    entries: tuple
    best: int

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if not 0 <= self.best < len(self.entries) or self.entries[self.best].report is None:
            raise InvariantError("best must index a successfully scored entry")

    @property
    def best_entry(self) -> GridEntry:
        return self.entries[self.best]

    def ranked(self) -> list:
        ok = [i for i, e in enumerate(self.entries) if e.report is not None]
        return sorted(ok, key=lambda i: _rank_key(self.entries[i]))

    def to_dict(self) -> dict:
        return {
            "best": self.best,
            "entries": [
                {
                    "family": e.spec.family.value,
                    "hyperparameters": e.spec.hyperparameters,
                    "label": e.spec.label,
                    "report": None if e.report is None else e.report.to_dict(),
                    "error": e.error,
                }
                for e in self.entries
            ],
        }

    def table(self) -> str:
        head = f"{'model':<14}{'nu':>5}{'RMSE':>12}{'R2_adj':>10}{'AICc':>14}{'BIC':>14}{'cost':>12}"
        lines = [head, "-" * len(head)]
        for i in self.ranked():
            e = self.entries[i]
            r = e.report
            mark = "*" if i == self.best else ""
            lines.append(f"{e.spec.label + mark:<14}{r.nu:>5}{r.rmse:>12.4f}{r.r2_adj:>10.4f}"
                         f"{r.aicc:>14.6g}{r.bic:>14.6g}{r.joint_cost:>12.6g}")
        for e in self.entries:
            if e.report is None:
                lines.append(f"{e.spec.label:<14}  failed: {e.error}")
        return "\n".join(lines)


def _rank_key(entry: GridEntry):
    return (entry.report.joint_cost, entry.spec.nu, entry.spec.sort_key())


def grid_specs(family, ranges: Mapping) -> list:
    """Cartesian product of hyperparameter ranges, e.g. ``{"n": range(1, 8), "m": range(1, 8)}``."""
    family = Family(family)
    if not ranges or any(len(list(v)) == 0 for v in ranges.values()):
        raise InvariantError("every hyperparameter range must be non-empty")
    names = list(ranges)
    return [ModelSpec(family=family, **dict(zip(names, combo)))
            for combo in itertools.product(*(list(ranges[k]) for k in names))]


def grid_search(
    ds: Dataset,
    family,
    ranges: Mapping,
    w: Optional[Weights] = None,
    cfg: Optional[FitConfig] = None,
    holdout: Optional[float] = None,
    keep_models: bool = False,
) -> GridResult:
    """Fit every spec in the grid and pick the argmin of the joint cost.

    Scores are in-sample by default.  With ``holdout`` (a fraction of
    trajectories) each spec is fitted on the rest and scored on the held-out
    part.  Fits that raise are recorded with their error and never win.
    Ties go to the smaller nu, then the smaller ``spec.sort_key()``.
    """
    w = w or Weights()
    cfg = cfg or FitConfig()
    specs = grid_specs(family, ranges)
    train, test = (ds, ds) if holdout is None else split(ds, 1.0 - holdout, cfg.seed)

    def run(spec):
        try:
            model = fit(train, spec, cfg)
            report = evaluate(model, test, w)
        except HydrofitError as exc:
            return GridEntry(spec=spec, report=None, error=f"{type(exc).__name__}: {exc}")
        return GridEntry(spec=spec, report=report, model=model if keep_models else None)

    entries = parallel_map(run, specs)
    ok = [i for i, e in enumerate(entries) if e.report is not None and not math.isnan(e.report.joint_cost)]
    if not ok:
        raise HydrofitError("every spec in the grid failed to fit")
    best = min(ok, key=lambda i: _rank_key(entries[i]))
    return GridResult(entries=tuple(entries), best=best)


# ------------------------------------------------------------------ cost accounting

@dataclass(frozen=True)
class CostEstimate:
    kind: str        # "LSQ", "LM-LSQ" (per iteration) or "SGD"
    n: int
    nu: int
    epochs: Optional[int] = None

    @property
    def cost(self) -> float:
        if self.kind == "SGD":
            return float(self.epochs) * self.n * self.nu
        return float(self.n) * self.nu ** 2


def flops_estimate(spec: ModelSpec, n: int, epochs: Optional[int] = None) -> CostEstimate:
    """Leading-order work: N*nu^2 for least squares, epochs*N*nu for gradient training."""
    if spec.family.is_poly:
        return CostEstimate("LSQ", n, spec.nu)
    if spec.family is Family.EXPONENTIAL:
        return CostEstimate("LM-LSQ", n, spec.nu)
    return CostEstimate("SGD", n, spec.nu, FitConfig().nn_epochs if epochs is None else epochs)
