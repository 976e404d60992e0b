"""Downstream scorers and the AUC metric.

Contains a logistic regression with Wald inference (log odds, standard
errors, z, p-values and confidence intervals) and a brute-force KNN scorer.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize, stats
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import DataError, NumericalError, SingularMatrixError

GRAD_TOL = 1e-6
MAX_DENSE = 1000
WARM_START_ITER = 50
Z_95 = 1.96


# -- AUC ----------------------------------------------------------------------

def auc(scores, labels) -> float:
    """Area under the ROC curve from average ranks (Mann-Whitney U)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both classes in the labels")
    ranks = stats.rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# -- logistic regression -------------------------------------------------------

@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X, enabled: bool = True) -> "Standardizer":
        if not enabled:
            return cls(np.zeros(X.shape[1]), np.ones(X.shape[1]))
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale == 0] = 1.0
        return cls(mean, scale)

    def __call__(self, X):
        return (X - self.mean) / self.scale


@dataclass(frozen=True)
class LogisticModel:
    coefficients: np.ndarray  # intercept first
    covariance: np.ndarray | None
    penalty: str
    alpha: float
    standardizer: Standardizer
    feature_names: tuple[str, ...]
    n_iter: int
    grad_norm: float

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0])

    @property
    def coef(self) -> np.ndarray:
        return self.coefficients[1:]

    @property
    def converged(self) -> bool:
        return self.grad_norm <= GRAD_TOL


def _design(Z):
    return np.hstack([np.ones((Z.shape[0], 1)), Z])


def logistic_objective(beta, A, y, alpha):
    """Negative penalized log-likelihood and its gradient.

    ``A`` already contains the intercept column; the intercept is not penalized.
    """
    eta = A @ beta
    # log(1 + e^eta) - y * eta, summed
    value = np.sum(np.logaddexp(0.0, eta) - y * eta)
    prob = _sigmoid(eta)
    grad = A.T @ (prob - y)
    if alpha > 0:
        w = beta.copy()
        w[0] = 0.0
        value += 0.5 * alpha * w @ w
        grad = grad + alpha * w
    return value, grad


def _sigmoid(eta):
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _hessian(beta, A, alpha):
    prob = _sigmoid(A @ beta)
    H = (A * (prob * (1.0 - prob))[:, None]).T @ A
    if alpha > 0:
        H[np.diag_indices_from(H)] += alpha
        H[0, 0] -= alpha
    return H


def _newton_polish(beta, A, y, alpha, budget):
    """Damped Newton steps until the gradient max-norm meets GRAD_TOL."""
    used = 0
    value, grad = logistic_objective(beta, A, y, alpha)
    while used < budget and np.max(np.abs(grad)) > GRAD_TOL:
        H = _hessian(beta, A, alpha)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", linalg.LinAlgWarning)
                step = linalg.solve(H, grad, assume_a="pos")
        except (linalg.LinAlgError, linalg.LinAlgWarning, ValueError):
            # near-singular Hessian: minimum-norm step
            step = linalg.lstsq(H, grad)[0]
        t = 1.0
        while t > 1e-10:
            cand = beta - t * step
            new_value, new_grad = logistic_objective(cand, A, y, alpha)
            if new_value <= value + 1e-4 * t * (grad @ -step):
                break
            t *= 0.5
        else:
            break
        beta, value, grad = cand, new_value, new_grad
        used += 1
    return beta, used


def fit_logistic(X, y, penalty: str = "l2", alpha: float = 1.0, max_iter: int = 100,
                 standardize: bool = True, feature_names=None) -> LogisticModel:
    """Fit a (optionally L2-penalized) logistic regression with L-BFGS.

    The objective is the summed negative log-likelihood plus
    ``alpha / 2 * ||w||^2`` over the non-intercept weights.  Columns are
    standardized first when ``standardize`` is set; coefficients are reported
    on that scale.  If L-BFGS stops above the gradient tolerance with
    iterations to spare, damped Newton steps finish the job.  On problems
    narrow enough for a dense Hessian, L-BFGS runs at most 50 iterations
    before handing the remaining budget to Newton.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DataError("X and y shapes do not match")
    if not np.all(np.isfinite(X)):
        raise DataError("X contains non-finite values")
    if np.unique(y).size < 2:
        raise DataError("constant target: both classes are required")
    if penalty not in ("l2", "none"):
        raise ValueError(f"unsupported penalty {penalty!r}")
    alpha = alpha if penalty == "l2" else 0.0

    scaler = Standardizer.fit(X, standardize)
    A = _design(scaler(X))
    dense = A.shape[1] <= MAX_DENSE
    # with an affordable Hessian, L-BFGS only warm-starts Newton; ill-conditioned
    # designs otherwise burn hundreds of first-order steps
    budget = min(max_iter, WARM_START_ITER) if dense else max_iter
    res = optimize.minimize(logistic_objective, np.zeros(A.shape[1]), args=(A, y, alpha),
                            jac=True, method="L-BFGS-B",
                            options={"maxiter": budget, "gtol": GRAD_TOL, "ftol": 0.0,
                                     "maxcor": 10})
    beta, n_iter = res.x, int(res.nit)
    grad = logistic_objective(beta, A, y, alpha)[1]
    if np.max(np.abs(grad)) > GRAD_TOL and n_iter < max_iter and dense:
        beta, extra = _newton_polish(beta, A, y, alpha, max_iter - n_iter)
        n_iter += extra
        grad = logistic_objective(beta, A, y, alpha)[1]
    if not np.all(np.isfinite(beta)):
        raise NumericalError("logistic fit diverged")
    names = tuple(feature_names) if feature_names is not None else tuple(
        f"feature_{i}" for i in range(X.shape[1]))
    return LogisticModel(beta, None, penalty, alpha, scaler, names, n_iter,
                         float(np.max(np.abs(grad))))


def predict_proba(model: LogisticModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.coef.shape[0]:
        raise DataError(f"expected {model.coef.shape[0]} columns, got shape {X.shape}")
    return _sigmoid(model.intercept + model.standardizer(X) @ model.coef)


def collinear_columns(Z, names, tol=None) -> list[str]:
    """Names of columns that are linear combinations of earlier ones (intercept included)."""
    A = _design(Z)
    _, R, piv = linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if tol is None:
        tol = diag.max() * max(A.shape) * np.finfo(float).eps * 1e3
    rank = int((diag > tol).sum())
    labels = ("Intercept",) + tuple(names)
    return [labels[j] for j in sorted(piv[rank:])]


@dataclass(frozen=True)
class InferenceTable:
    names: tuple[str, ...]
    log_odds: np.ndarray
    std_err: np.ndarray
    z: np.ndarray
    p_value: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    odds: np.ndarray
    approximate: bool = False

    COLUMNS = ("log odds", "stde", "z", "P>|z|", "[0.025", "0.975]", "odds")

    def rows(self):
        for i, name in enumerate(self.names):
            yield name, (self.log_odds[i], self.std_err[i], self.z[i], self.p_value[i],
                         self.ci_low[i], self.ci_high[i], self.odds[i])

    def to_text(self) -> str:
        width = max(len(n) for n in self.names) + 2
        head = " " * width + "".join(f"{c:>11}" for c in self.COLUMNS)
        lines = [head]
        for name, vals in self.rows():
            lo, se, z, p, cl, ch, odds = vals
            lines.append(f"{name:<{width}}{lo:>11.4f}{se:>11.3f}{z:>11.3f}{p:>11.3f}"
                         f"{cl:>11.3f}{ch:>11.3f}{odds:>11.6f}")
        if self.approximate:
            lines.append("(approximate: fitted with an L2 penalty)")
        return "\n".join(lines)

    def to_csv(self, delimiter=",") -> str:
        head = delimiter.join(["feature", "log_odds", "std_err", "z", "p_value",
                               "ci_low", "ci_high", "odds"])
        out = [head]
        for name, vals in self.rows():
            out.append(delimiter.join([name] + [repr(float(v)) for v in vals]))
        return "\n".join(out) + "\n"


def inference_from_coefficients(names, log_odds, std_err, approximate=False) -> InferenceTable:
    log_odds = np.asarray(log_odds, dtype=np.float64)
    std_err = np.asarray(std_err, dtype=np.float64)
    z = log_odds / std_err
    p = 2.0 * stats.norm.sf(np.abs(z))
    return InferenceTable(tuple(names), log_odds, std_err, z, p,
                          log_odds - Z_95 * std_err, log_odds + Z_95 * std_err,
                          np.exp(log_odds), approximate)


def logistic_inference(model: LogisticModel, X, y=None) -> InferenceTable:
    """Wald table from the unpenalized observed information at the fitted optimum."""
    X = np.asarray(X, dtype=np.float64)
    Z = model.standardizer(X)
    A = _design(Z)
    dropped = collinear_columns(Z, model.feature_names)
    if dropped:
        raise SingularMatrixError(
            f"information matrix is singular; collinear columns: {', '.join(dropped)}", dropped)
    info = _hessian(model.coefficients, A, 0.0)
    try:
        cov = linalg.inv(info)
    except linalg.LinAlgError as exc:
        raise SingularMatrixError("information matrix is singular") from exc
    var = np.diag(cov)
    if np.any(var <= 0) or not np.all(np.isfinite(var)):
        raise SingularMatrixError("information matrix is not positive definite")
    return inference_from_coefficients(("Intercept",) + model.feature_names,
                                       model.coefficients, np.sqrt(var),
                                       approximate=model.penalty != "none")


class LogisticRegression(ClassifierMixin, BaseEstimator):
    def __init__(self, penalty="l2", alpha=1.0, max_iter=100, standardize=True):
        self.penalty = penalty
        self.alpha = alpha
        self.max_iter = max_iter
        self.standardize = standardize

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, y = np.unique(y, return_inverse=True)
        self.model_ = fit_logistic(X, y, self.penalty, self.alpha, self.max_iter,
                                   self.standardize)
        self.coef_ = self.model_.coef[None, :]
        self.intercept_ = np.array([self.model_.intercept])
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        pos = predict_proba(self.model_, check_array(X, dtype=np.float64))
        return np.column_stack([1.0 - pos, pos])

    def predict(self, X):
        return self.classes_[(self.predict_proba(X)[:, 1] > 0.5).astype(int)]


# -- KNN ----------------------------------------------------------------------

@dataclass(frozen=True)
class KnnModel:
    train: np.ndarray
    labels: np.ndarray
    k: int
    standardizer: Standardizer


def fit_knn(X, y, k_neighbors: int, standardize: bool = True) -> KnnModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if not 1 <= k_neighbors <= X.shape[0]:
        raise ValueError(f"k_neighbors must lie in [1, {X.shape[0]}]")
    scaler = Standardizer.fit(X, standardize)
    return KnnModel(scaler(X), y, int(k_neighbors), scaler)


def knn_neighbors(model: KnnModel, X, chunk: int = 512) -> np.ndarray:
    """Indices of the k nearest training rows; equal distances prefer lower indices."""
    Q = model.standardizer(np.asarray(X, dtype=np.float64))
    if Q.ndim != 2 or Q.shape[1] != model.train.shape[1]:
        raise DataError("query width does not match the training data")
    k, T = model.k, model.train
    t_sq = np.einsum("ij,ij->i", T, T)
    out = np.empty((Q.shape[0], k), dtype=np.int64)
    for start in range(0, Q.shape[0], chunk):
        q = Q[start: start + chunk]
        dist = np.einsum("ij,ij->i", q, q)[:, None] + t_sq[None, :] - 2.0 * q @ T.T
        np.maximum(dist, 0.0, out=dist)
        for r in range(dist.shape[0]):
            row = dist[r]
            if k < row.size:
                kth = np.partition(row, k - 1)[k - 1]
                cand = np.flatnonzero(row <= kth)
            else:
                cand = np.arange(row.size)
            order = np.lexsort((cand, row[cand]))
            out[start + r] = cand[order[:k]]
    return out


def knn_score(model: KnnModel, X) -> np.ndarray:
    """Fraction of positive labels among the k nearest training rows."""
    return model.labels[knn_neighbors(model, X)].mean(axis=1)


class KNNScorer(ClassifierMixin, BaseEstimator):
    def __init__(self, n_neighbors=5, standardize=True):
        self.n_neighbors = n_neighbors
        self.standardize = standardize

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, y = np.unique(y, return_inverse=True)
        self.model_ = fit_knn(X, y, self.n_neighbors, self.standardize)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        pos = knn_score(self.model_, check_array(X, dtype=np.float64))
        return np.column_stack([1.0 - pos, pos])

    def predict(self, X):
        return self.classes_[(self.predict_proba(X)[:, 1] > 0.5).astype(int)]
