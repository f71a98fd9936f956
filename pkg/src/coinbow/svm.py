"""RBF-kernel SVMs trained with SMO, one-vs-all multiclass, and CV grid search.

The solver works on the standard soft-margin dual

    min_a  0.5 a'Qa - sum(a)   s.t.  0 <= a_i <= C,  y'a = 0,   Q_ij = y_i y_j K_ij

and picks its working pair with the maximal-violating first index and the
second-order gain rule for the partner, as in LIBSVM.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np
from scipy.spatial.distance import cdist

from .core import ValidationError, atomic_write_text

log = logging.getLogger(__name__)

SVM_FORMAT_VERSION = 1
DEFAULT_C_GRID = tuple(2.0**e for e in range(-5, 16, 2))
DEFAULT_GAMMA_GRID = tuple(2.0**e for e in range(-15, 16, 2))
_TAU = 1e-12


@dataclass(frozen=True)
class SvmHyperParams:
    C: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        for name in ("C", "gamma"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValidationError(f"{name} must be finite and positive, got {v}")


@dataclass(frozen=True, eq=False)
class BinarySvmModel:
    """Decision function ``sum_i dual_coefs[i] * K(sv_i, x) + bias``.

    ``dual_coefs`` holds alpha_i * y_i for each retained support vector.
    ``alpha``, ``y`` and ``kkt_gap`` describe the full training problem and are
    kept for inspection only.
    """

    support_vectors: np.ndarray
    dual_coefs: np.ndarray
    bias: float
    hyperparams: SvmHyperParams
    alpha: np.ndarray | None = None
    y: np.ndarray | None = None
    kkt_gap: float = 0.0
    n_iter: int = 0

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]

    def to_json(self) -> dict:
        return {
            "bias": float(self.bias),
            "support_vectors": self.support_vectors.tolist(),
            "dual_coefs": self.dual_coefs.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict, hp: SvmHyperParams, dim: int) -> "BinarySvmModel":
        sv = np.asarray(doc["support_vectors"], dtype=np.float64).reshape(-1, dim)
        coefs = np.asarray(doc["dual_coefs"], dtype=np.float64)
        if len(coefs) != len(sv):
            raise ValidationError("support vector and coefficient counts differ")
        return cls(sv, coefs, float(doc["bias"]), hp)


def rbf_kernel(x, y, gamma: float) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValidationError(f"dimension mismatch: {x.shape} vs {y.shape}")
    d = x - y
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_kernel_matrix(A, B, gamma: float) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise ValidationError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    return np.exp(-gamma * cdist(A, B, "sqeuclidean"))


@numba.njit(cache=True)
def _smo(K, y, C, tol, max_iter, check_objective):
    n = K.shape[0]
    alpha = np.zeros(n)
    grad = -np.ones(n)
    it = 0
    gap = np.inf
    obj = 0.0
    while it < max_iter:
        # i: maximal violator in I_up
        gmax = -np.inf
        i = -1
        for t in range(n):
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                v = -y[t] * grad[t]
                if v > gmax:
                    gmax = v
                    i = t
        gmin = np.inf
        j = -1
        best = np.inf
        for t in range(n):
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                v = -y[t] * grad[t]
                if v < gmin:
                    gmin = v
                if i >= 0:
                    b = gmax - v
                    if b > 0:
                        a = K[i, i] + K[t, t] - 2.0 * K[i, t]
                        if a <= 0:
                            a = _TAU
                        score = -(b * b) / a
                        if score < best:
                            best = score
                            j = t
        gap = gmax - gmin
        if i < 0 or j < 0 or gap <= tol:
            break
        it += 1

        yi = y[i]
        yj = y[j]
        Kij = K[i, j]
        a_old_i = alpha[i]
        a_old_j = alpha[j]
        quad = K[i, i] + K[j, j] - 2.0 * Kij
        if quad <= 0:
            quad = _TAU
        if yi != yj:
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            ai = alpha[i] + delta
            aj = alpha[j] + delta
            if diff > 0:
                if aj < 0:
                    aj = 0.0
                    ai = diff
            else:
                if ai < 0:
                    ai = 0.0
                    aj = -diff
            if diff > 0:
                if ai > C:
                    ai = C
                    aj = C - diff
            else:
                if aj > C:
                    aj = C
                    ai = C + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            s = alpha[i] + alpha[j]
            ai = alpha[i] - delta
            aj = alpha[j] + delta
            if s > C:
                if ai > C:
                    ai = C
                    aj = s - C
            else:
                if aj < 0:
                    aj = 0.0
                    ai = s
            if s > C:
                if aj > C:
                    aj = C
                    ai = s - C
            else:
                if ai < 0:
                    ai = 0.0
                    aj = s
        alpha[i] = ai
        alpha[j] = aj
        di = ai - a_old_i
        dj = aj - a_old_j
        for t in range(n):
            grad[t] += y[t] * (yi * K[t, i] * di + yj * K[t, j] * dj)
        if check_objective:
            # dual objective sum(a) - 0.5 a'Qa = -0.5 * sum(a * (grad - 1))
            new_obj = 0.0
            for t in range(n):
                new_obj += alpha[t] * (1.0 - grad[t])
            new_obj *= 0.5
            if new_obj < obj - 1e-9 * max(1.0, abs(obj)):
                raise RuntimeError("dual objective decreased during SMO")
            obj = new_obj

    # bias: mean over free vectors, else midpoint of the feasible interval
    ub = np.inf
    lb = -np.inf
    total = 0.0
    nfree = 0
    for t in range(n):
        yg = y[t] * grad[t]
        if alpha[t] >= C:
            if y[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif alpha[t] <= 0:
            if y[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            nfree += 1
            total += yg
    if nfree > 0:
        rho = total / nfree
    else:
        rho = (ub + lb) / 2.0
    return alpha, -rho, gap, it


def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(X) != len(y):
        raise ValidationError("X and y lengths differ")
    if not np.all(np.isfinite(X)):
        raise ValidationError("features must be finite")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValidationError("labels must be +1 or -1")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise ValidationError("binary training needs examples of both classes")
    return X, y


def solve_dual(K, y, C: float, tol: float = 1e-3, max_iter: int | None = None, check_objective: bool = False):
    """Run SMO on a precomputed kernel matrix.

    Returns ``(alpha, bias, kkt_gap, iterations)`` where ``kkt_gap`` is the
    final maximal violation m(alpha) - M(alpha).
    """
    K = np.ascontiguousarray(K, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if max_iter is None:
        max_iter = max(10_000_000, 100 * len(y))
    alpha, bias, gap, it = _smo(K, y, float(C), float(tol), int(max_iter), bool(check_objective))
    if gap > tol:
        log.warning("SMO stopped after %d iterations with KKT gap %.3g > tol %.3g", it, gap, tol)
    return alpha, float(bias), float(gap), int(it)


def _binary_from_dual(X, y, alpha, bias, hp, gap, it) -> BinarySvmModel:
    sv = alpha > 0
    return BinarySvmModel(
        support_vectors=X[sv].copy(),
        dual_coefs=(alpha * y)[sv],
        bias=bias,
        hyperparams=hp,
        alpha=alpha,
        y=y,
        kkt_gap=gap,
        n_iter=it,
    )


def train_binary(
    X,
    y,
    hp: SvmHyperParams,
    tol: float = 1e-3,
    max_iter: int | None = None,
    check_objective: bool = False,
) -> BinarySvmModel:
    """Fit a soft-margin RBF SVM. ``check_objective`` asserts the dual
    objective never decreases between pair updates."""
    X, y = _check_xy(X, y)
    K = rbf_kernel_matrix(X, X, hp.gamma)
    alpha, bias, gap, it = solve_dual(K, y, hp.C, tol, max_iter, check_objective)
    return _binary_from_dual(X, y, alpha, bias, hp, gap, it)


def decision_value(model: BinarySvmModel, x) -> float:
    return float(decision_values(model, np.asarray(x, dtype=np.float64)[None, :])[0])


def decision_values(model: BinarySvmModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if len(model.dual_coefs) == 0:
        return np.full(len(X), model.bias)
    if X.shape[1] != model.dim:
        raise ValidationError(f"feature dimension {X.shape[1]} does not match model dimension {model.dim}")
    return rbf_kernel_matrix(X, model.support_vectors, model.hyperparams.gamma) @ model.dual_coefs + model.bias


@dataclass(frozen=True, eq=False)
class MultiClassSvmModel:
    labels: tuple[str, ...]
    models: tuple[BinarySvmModel, ...]
    hyperparams: SvmHyperParams
    dim: int

    def __post_init__(self):
        if len(self.labels) != len(self.models):
            raise ValidationError("need exactly one binary model per label")

    def decision_matrix(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise ValidationError(f"feature dimension {X.shape[1]} does not match model dimension {self.dim}")
        return np.column_stack([decision_values(m, X) for m in self.models])

    def predict(self, X) -> list[str]:
        # argmax returns the first maximum, i.e. the earliest label on ties
        return [self.labels[k] for k in np.argmax(self.decision_matrix(X), axis=1)]

    def to_json(self) -> dict:
        return {
            "format_version": SVM_FORMAT_VERSION,
            "labels": list(self.labels),
            "dim": self.dim,
            "hyperparams": {"C": self.hyperparams.C, "gamma": self.hyperparams.gamma},
            "models": {lbl: m.to_json() for lbl, m in zip(self.labels, self.models)},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "MultiClassSvmModel":
        if doc.get("format_version") != SVM_FORMAT_VERSION:
            raise ValidationError(f"unsupported svm format_version {doc.get('format_version')!r}")
        hp = SvmHyperParams(**doc["hyperparams"])
        dim = int(doc["dim"])
        labels = tuple(doc["labels"])
        models = tuple(BinarySvmModel.from_json(doc["models"][lbl], hp, dim) for lbl in labels)
        return cls(labels, models, hp, dim)


def predict(model: MultiClassSvmModel, x) -> str:
    return model.predict(np.asarray(x, dtype=np.float64)[None, :])[0]


def _label_order(labels, label_order):
    if label_order is None:
        return tuple(sorted(set(labels)))
    order = tuple(label_order)
    missing = set(labels) - set(order)
    if missing:
        raise ValidationError(f"labels {sorted(missing)} are not in the label ordering")
    return order


def _train_ova_on_kernel(K, X, labels, order, hp, tol):
    labels = np.asarray(labels)
    models = []
    for lbl in order:
        y = np.where(labels == lbl, 1.0, -1.0)
        if not (np.any(y > 0) and np.any(y < 0)):
            raise ValidationError(f"label {lbl!r} needs positive and negative examples")
        alpha, bias, gap, it = solve_dual(K, y, hp.C, tol)
        models.append(_binary_from_dual(X, y, alpha, bias, hp, gap, it))
    return MultiClassSvmModel(tuple(order), tuple(models), hp, X.shape[1])


def train_one_vs_all(X, labels, hp: SvmHyperParams, label_order=None, tol: float = 1e-3) -> MultiClassSvmModel:
    """One binary model per label (that label +1, the rest -1)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    labels = list(labels)
    if len(X) != len(labels):
        raise ValidationError("X and labels lengths differ")
    if not np.all(np.isfinite(X)):
        raise ValidationError("features must be finite")
    order = _label_order(labels, label_order)
    if len(set(labels)) < 2:
        raise ValidationError("one-vs-all needs at least two labels")
    K = rbf_kernel_matrix(X, X, hp.gamma)
    return _train_ova_on_kernel(K, X, labels, order, hp, tol)


def stratified_folds(labels, n_folds: int, seed: int) -> np.ndarray:
    """Fold id per example; each label's examples are shuffled then dealt round-robin."""
    labels = np.asarray(labels)
    folds = np.empty(len(labels), dtype=np.intp)
    rng = np.random.Generator(np.random.PCG64(seed & (2**64 - 1)))
    for lbl in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == lbl)
        idx = idx[rng.permutation(len(idx))]
        folds[idx] = np.arange(len(idx)) % n_folds
    return folds


@dataclass(frozen=True)
class GridSearchResult:
    hyperparams: SvmHyperParams
    cv_accuracy: float
    scores: dict


def grid_search_cv(
    X,
    labels,
    C_grid=DEFAULT_C_GRID,
    gamma_grid=DEFAULT_GAMMA_GRID,
    n_folds: int = 5,
    seed: int = 0,
    label_order=None,
    tol: float = 1e-3,
) -> GridSearchResult:
    """Pick (C, gamma) by stratified n-fold cross-validated accuracy.

    Ties prefer higher accuracy, then smaller C, then smaller gamma.
    """
    C_grid = sorted(float(c) for c in C_grid)
    gamma_grid = sorted(float(g) for g in gamma_grid)
    if not C_grid or not gamma_grid:
        raise ValidationError("hyperparameter grid is empty")
    if n_folds < 2:
        raise ValidationError("n_folds must be >= 2")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    labels = np.asarray(list(labels))
    order = _label_order(labels.tolist(), label_order)
    min_count = min(int(np.sum(labels == lbl)) for lbl in set(labels.tolist()))
    if min_count < n_folds:
        if min_count < 2:
            raise ValidationError("every label needs at least two examples for cross-validation")
        warnings.warn(f"reducing folds from {n_folds} to {min_count} (smallest class size)", stacklevel=2)
        n_folds = min_count
    folds = stratified_folds(labels, n_folds, seed)

    scores = {}
    for gamma in gamma_grid:
        K = rbf_kernel_matrix(X, X, gamma)
        for C in C_grid:
            hp = SvmHyperParams(C, gamma)
            accs = []
            for f in range(n_folds):
                tr = np.flatnonzero(folds != f)
                te = np.flatnonzero(folds == f)
                sub_order = [lbl for lbl in order if lbl in set(labels[tr].tolist())]
                model = _train_ova_on_kernel(K[np.ix_(tr, tr)], X[tr], labels[tr], sub_order, hp, tol)
                dec = np.column_stack(
                    [K[np.ix_(te, tr)] @ (m.alpha * m.y) + m.bias for m in model.models]
                )
                pred = np.asarray(sub_order)[np.argmax(dec, axis=1)]
                accs.append(float(np.mean(pred == labels[te])))
            scores[(C, gamma)] = float(np.mean(accs))

    best = None
    for C in C_grid:
        for gamma in gamma_grid:
            if best is None or scores[(C, gamma)] > scores[best]:
                best = (C, gamma)
    return GridSearchResult(SvmHyperParams(*best), scores[best], scores)


def save_model(model: MultiClassSvmModel, path) -> None:
    atomic_write_text(path, json.dumps(model.to_json()))


def load_model(path) -> MultiClassSvmModel:
    return MultiClassSvmModel.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
