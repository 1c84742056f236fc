"""SMOTE, maximum-likelihood logistic regression and feature elimination."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

logger = logging.getLogger(__name__)

SEPARATION_LIMIT = 30.0
Z_975 = 1.959963984540054


class SeparationError(RuntimeError):
    pass


class SingularInformationError(RuntimeError):
    pass


class RFEError(RuntimeError):
    def __init__(self, message: str, trace: list[dict]):
        super().__init__(message)
        self.trace = trace


# ---------------------------------------------------------------- SMOTE


@dataclass(frozen=True)
class SmoteResult:
    synthetic: np.ndarray
    base: np.ndarray
    neighbor: np.ndarray
    gap: np.ndarray


def smote(minority: np.ndarray, n_new: int, k_neighbors: int = 5, seed: int = 0) -> SmoteResult:
    """Interpolate ``n_new`` points between minority rows and their nearest minority neighbours.

    Each synthetic row is ``x_i + u (x_nn - x_i)`` with ``x_i`` drawn uniformly,
    ``x_nn`` among its ``k`` Euclidean nearest neighbours and ``u ~ U(0, 1)``.
    """
    x = np.asarray(minority, dtype=float)
    if len(x) < 2:
        raise ValueError("SMOTE needs at least two minority rows")
    k = min(k_neighbors, len(x) - 1)
    d = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=2)
    np.fill_diagonal(d, np.inf)
    nn = np.argsort(d, axis=1, kind="stable")[:, :k]
    rng = np.random.default_rng(seed)
    base = rng.integers(0, len(x), size=n_new)
    neighbor = nn[base, rng.integers(0, k, size=n_new)]
    gap = rng.random(n_new)
    synthetic = x[base] + gap[:, None] * (x[neighbor] - x[base])
    return SmoteResult(synthetic, base, neighbor, gap)


def oversample(
    x: np.ndarray, y: np.ndarray, k_neighbors: int = 5, target_ratio: float = 1.0, seed: int = 0
) -> tuple[np.ndarray, np.ndarray, SmoteResult]:
    """Append SMOTE rows of the minority class until minority = ratio * majority."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    n1 = int(y.sum())
    n0 = len(y) - n1
    minority = 1 if n1 < n0 else 0
    n_min, n_maj = min(n0, n1), max(n0, n1)
    n_new = max(0, int(round(target_ratio * n_maj)) - n_min)
    res = smote(x[y == minority], n_new, k_neighbors, seed)
    x_out = np.vstack([x, res.synthetic])
    y_out = np.concatenate([y, np.full(n_new, minority)])
    return x_out, y_out, res


# ---------------------------------------------------------------- logit


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def log_likelihood(design: np.ndarray, y: np.ndarray, beta: np.ndarray) -> float:
    eta = design @ beta
    # log(1 + e^eta) computed stably
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def _as_2d(x, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return x.reshape(n, 0)
    return x.reshape(n, -1)


def _normal_two_sided(z: np.ndarray) -> np.ndarray:
    return np.array([math.erfc(abs(v) / math.sqrt(2.0)) for v in np.atleast_1d(z)])


@dataclass
class LogitModel:
    feature_names: tuple[str, ...]
    coefficients: np.ndarray  # intercept first
    standard_errors: np.ndarray
    log_likelihood: float
    null_log_likelihood: float
    n_obs: int
    n_iter: int
    ll_trace: list[float] = field(default_factory=list)

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0])

    @property
    def slopes(self) -> dict[str, float]:
        return dict(zip(self.feature_names, self.coefficients[1:].tolist()))

    @property
    def z_stats(self) -> np.ndarray:
        return self.coefficients / self.standard_errors

    @property
    def p_values(self) -> np.ndarray:
        return _normal_two_sided(self.z_stats)

    @property
    def conf_int(self) -> np.ndarray:
        return np.column_stack([self.coefficients - Z_975 * self.standard_errors, self.coefficients + Z_975 * self.standard_errors])

    @property
    def n_params(self) -> int:
        return len(self.coefficients)

    @property
    def df_model(self) -> int:
        return len(self.feature_names)

    @property
    def pseudo_r2(self) -> float:
        return 1.0 - self.log_likelihood / self.null_log_likelihood

    @property
    def aic(self) -> float:
        return 2.0 * self.n_params - 2.0 * self.log_likelihood

    @property
    def bic(self) -> float:
        return self.n_params * math.log(self.n_obs) - 2.0 * self.log_likelihood

    @property
    def llr_p_value(self) -> float:
        llr = 2.0 * (self.log_likelihood - self.null_log_likelihood)
        return float(stats.chi2.sf(llr, self.df_model)) if self.df_model else 1.0

    def slope_p_values(self) -> dict[str, float]:
        return dict(zip(self.feature_names, self.p_values[1:].tolist()))

    def to_json(self) -> dict:
        names = ("const",) + self.feature_names
        ci = self.conf_int
        return {
            "model": "Logit",
            "n_obs": self.n_obs,
            "df_model": self.df_model,
            "df_residuals": self.n_obs - self.n_params,
            "n_iter": self.n_iter,
            "log_likelihood": self.log_likelihood,
            "ll_null": self.null_log_likelihood,
            "pseudo_r2": self.pseudo_r2,
            "aic": self.aic,
            "bic": self.bic,
            "llr_p_value": self.llr_p_value,
            "coefficients": [
                {
                    "name": n,
                    "coef": float(b),
                    "std_err": float(se),
                    "z": float(z),
                    "p": float(p),
                    "ci_low": float(lo),
                    "ci_high": float(hi),
                }
                for n, b, se, z, p, (lo, hi) in zip(
                    names, self.coefficients, self.standard_errors, self.z_stats, self.p_values, ci
                )
            ],
        }


def _newton(design: np.ndarray, y: np.ndarray, names: Sequence[str], tol: float, max_iter: int):
    p = design.shape[1]
    beta = np.zeros(p)
    ll = log_likelihood(design, y, beta)
    trace = [ll]
    for it in range(1, max_iter + 1):
        mu = _sigmoid(design @ beta)
        grad = design.T @ (y - mu)
        info = design.T @ (design * (mu * (1.0 - mu))[:, None])
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            raise SingularInformationError("information matrix is singular") from None
        size = float(np.max(np.abs(step)))
        if size < 1e-6:
            # inside the quadratic region the likelihood is flat to rounding;
            # take the full step and keep the trace monotone
            beta = beta + step
            ll = max(ll, log_likelihood(design, y, beta))
            trace.append(ll)
            if size < tol:
                return beta, trace, it
            continue
        # halve the step until the likelihood does not decrease
        t = 1.0
        while t >= 1e-10:
            cand = beta + t * step
            ll_new = log_likelihood(design, y, cand)
            if ll_new >= ll:
                break
            t *= 0.5
        else:
            return beta, trace, it
        beta, ll = cand, ll_new
        trace.append(ll)
        slopes = np.abs(beta[1:])
        if slopes.size and slopes.max() > SEPARATION_LIMIT:
            culprit = names[int(np.argmax(slopes))]
            raise SeparationError(f"coefficients diverge beyond {SEPARATION_LIMIT:g}; separating feature {culprit!r}")
    logger.warning("IRLS reached %d iterations without converging", max_iter)
    return beta, trace, max_iter


def fit_logit(
    x: np.ndarray,
    y: np.ndarray,
    feature_names: Sequence[str] | None = None,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> LogitModel:
    """Logistic regression with intercept fitted by Newton-Raphson (IRLS).

    Standard errors come from the inverse information at the optimum and
    p-values from a two-sided normal test.
    """
    y = np.asarray(y, dtype=float)
    x = _as_2d(x, len(y))
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{i + 1}" for i in range(x.shape[1]))
    if len(names) != x.shape[1]:
        raise ValueError("feature_names does not match the number of columns")
    for j, n in enumerate(names):
        if np.ptp(x[:, j]) == 0:
            raise SingularInformationError(f"feature {n!r} is constant")
    if len(y) <= x.shape[1] + 1:
        raise SingularInformationError(f"{len(y)} rows cannot identify {x.shape[1] + 1} parameters")
    if y.min() == y.max():
        raise SeparationError("outcome has a single class")
    design = np.column_stack([np.ones(len(y)), x])
    beta, trace, n_iter = _newton(design, y, names, tol, max_iter)
    mu = _sigmoid(design @ beta)
    info = design.T @ (design * (mu * (1.0 - mu))[:, None])
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        raise SingularInformationError("information matrix is singular at the optimum") from None
    if np.any(np.diag(cov) <= 0) or not np.all(np.isfinite(cov)):
        raise SingularInformationError("information matrix is not positive definite at the optimum")
    p1 = y.mean()
    ll_null = float(len(y) * (p1 * math.log(p1) + (1 - p1) * math.log(1 - p1)))
    return LogitModel(
        feature_names=names,
        coefficients=beta,
        standard_errors=np.sqrt(np.diag(cov)),
        log_likelihood=log_likelihood(design, y, beta),
        null_log_likelihood=ll_null,
        n_obs=len(y),
        n_iter=n_iter,
        ll_trace=trace,
    )


def predict(model: LogitModel, x: np.ndarray, feature_names: Sequence[str] | None = None):
    """Probabilities and labels (1 iff probability > 0.5).

    When ``feature_names`` is given the columns of ``x`` are matched to the
    model's features by name.
    """
    x = _as_2d(x, len(x))
    if feature_names is not None:
        cols = {n: i for i, n in enumerate(feature_names)}
        unknown = [n for n in model.feature_names if n not in cols]
        if unknown:
            raise KeyError(f"unknown features {unknown}")
        x = x[:, [cols[n] for n in model.feature_names]]
    elif x.shape[1] != len(model.feature_names):
        raise ValueError(f"expected {len(model.feature_names)} columns, got {x.shape[1]}")
    prob = _sigmoid(model.coefficients[0] + x @ model.coefficients[1:])
    return prob, (prob > 0.5).astype(int)


# ---------------------------------------------------------------- RFE


@dataclass
class RFEResult:
    model: LogitModel
    trace: list[dict]


def rfe(
    x: np.ndarray,
    y: np.ndarray,
    feature_names: Sequence[str],
    alpha: float = 0.05,
    balance: bool = True,
    k_neighbors: int = 5,
    seed: int = 0,
) -> RFEResult:
    """Backward elimination by largest p-value until every slope has p < ``alpha``.

    With ``balance`` the data are SMOTE-oversampled once, on all candidate
    features, before the first fit. The intercept is never eliminated.
    """
    names = list(feature_names)
    if not names:
        raise ValueError("no candidate features")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    if balance:
        x, y, _ = oversample(x, y, k_neighbors=k_neighbors, seed=seed)
    cols = list(range(len(names)))
    trace: list[dict] = []
    while cols:
        current = [names[c] for c in cols]
        try:
            model = fit_logit(x[:, cols], y, current)
        except (SeparationError, SingularInformationError) as exc:
            # drop the named offender when the fit itself breaks down
            msg = str(exc)
            culprit = next((c for c in cols if repr(names[c]) in msg), cols[-1])
            trace.append({"features": current, "dropped": names[culprit], "p_value": None, "reason": msg})
            cols.remove(culprit)
            continue
        pvals = model.slope_p_values()
        worst = max(current, key=lambda n: (pvals[n], n))
        if pvals[worst] < alpha:
            trace.append({"features": current, "dropped": None, "p_value": pvals[worst]})
            return RFEResult(model, trace)
        trace.append({"features": current, "dropped": worst, "p_value": pvals[worst]})
        cols.remove(names.index(worst))
    raise RFEError("every feature was eliminated", trace)


# ---------------------------------------------------------------- evaluation


@dataclass(frozen=True)
class EvalReport:
    tn: int
    fp: int
    fn: int
    tp: int

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp

    @property
    def accuracy(self) -> float:
        return (self.tn + self.tp) / self.total if self.total else 0.0

    @staticmethod
    def _ratio(a: int, b: int) -> float:
        return a / b if b else 0.0

    def precision(self, cls: int = 1) -> float:
        return self._ratio(self.tp, self.tp + self.fp) if cls == 1 else self._ratio(self.tn, self.tn + self.fn)

    def recall(self, cls: int = 1) -> float:
        return self._ratio(self.tp, self.tp + self.fn) if cls == 1 else self._ratio(self.tn, self.tn + self.fp)

    def f1(self, cls: int = 1) -> float:
        p, r = self.precision(cls), self.recall(cls)
        return 2 * p * r / (p + r) if p + r else 0.0

    def to_json(self) -> dict:
        return {
            "confusion": {"tn": self.tn, "fp": self.fp, "fn": self.fn, "tp": self.tp},
            "classes": {
                str(c): {"precision": self.precision(c), "recall": self.recall(c), "f1": self.f1(c)} for c in (0, 1)
            },
            "accuracy": self.accuracy,
        }


def confusion(y_true: np.ndarray, y_pred: np.ndarray) -> EvalReport:
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    return EvalReport(
        tn=int(np.sum((y_true == 0) & (y_pred == 0))),
        fp=int(np.sum((y_true == 0) & (y_pred == 1))),
        fn=int(np.sum((y_true == 1) & (y_pred == 0))),
        tp=int(np.sum((y_true == 1) & (y_pred == 1))),
    )


def evaluate(model: LogitModel, x_raw: np.ndarray, y_raw: np.ndarray, feature_names: Sequence[str] | None = None) -> EvalReport:
    """Confusion counts and metrics on the original (not oversampled) rows."""
    _, labels = predict(model, x_raw, feature_names)
    return confusion(y_raw, labels)
