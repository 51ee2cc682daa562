"""RBF support vector machine trained with SMO, one-vs-one for multiple classes.

The binary solver works on the standard dual

    min_a  1/2 a'Qa - e'a   s.t.  0 <= a_i <= C,  y'a = 0,   Q_ij = y_i y_j K(x_i, x_j)

and picks its working pair with the second-order rule of Fan, Chen & Lin
(as in LIBSVM). It stops when the maximal KKT violation ``m(a) - M(a)`` drops
below ``tol``.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional

import numpy as np

__all__ = [
    "SvmConvergenceError",
    "BinarySolution",
    "BinaryMachine",
    "SvmModel",
    "rbf_kernel",
    "smo_solve",
    "svm_train",
    "svm_predict",
]

log = logging.getLogger(__name__)

TAU = 1e-12


class SvmConvergenceError(RuntimeError):
    """SMO hit its iteration cap; ``diagnostics`` holds the best state reached."""

    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


def _sq_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    dist = np.zeros((a.shape[0], b.shape[0]))
    for j in range(a.shape[1]):
        diff = a[:, j, None] - b[None, :, j]
        dist += diff * diff
    return dist


def rbf_kernel(a, b, gamma: float) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    return np.exp(-gamma * _sq_distances(a, b))


class _KernelRows:
    """LRU cache of kernel matrix rows."""

    def __init__(self, x: np.ndarray, gamma: float, cache_mb: float):
        self.x, self.gamma = x, gamma
        self.capacity = max(2, int(cache_mb * 2**20 // (8 * max(len(x), 1))))
        self.rows: OrderedDict[int, np.ndarray] = OrderedDict()

    def __getitem__(self, i: int) -> np.ndarray:
        row = self.rows.get(i)
        if row is not None:
            self.rows.move_to_end(i)
            return row
        row = rbf_kernel(self.x[i : i + 1], self.x, self.gamma)[0]
        self.rows[i] = row
        if len(self.rows) > self.capacity:
            self.rows.popitem(last=False)
        return row


@dataclass
class BinarySolution:
    alpha: np.ndarray
    y: np.ndarray
    rho: float
    iterations: int
    gap: float

    @property
    def b(self) -> float:
        return -self.rho


def _rho(alpha, y, grad, C) -> float:
    yg = y * grad
    upper = alpha >= C
    lower = alpha <= 0
    free = ~upper & ~lower
    if free.any():
        return float(yg[free].mean())
    # no free vector: midpoint of the feasible interval
    ub_mask = (upper & (y < 0)) | (lower & (y > 0))
    lb_mask = (upper & (y > 0)) | (lower & (y < 0))
    ub = yg[ub_mask].min() if ub_mask.any() else np.inf
    lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
    return float((ub + lb) / 2)


def smo_solve(
    x: np.ndarray,
    y: np.ndarray,
    C: float = 1.0,
    gamma: Optional[float] = None,
    tol: float = 1e-3,
    max_iter: Optional[int] = None,
    cache_mb: float = 256.0,
) -> BinarySolution:
    """Solve one binary RBF-SVM dual problem; ``y`` holds +1/-1."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if not set(np.unique(y)) <= {-1.0, 1.0}:
        raise ValueError("binary labels must be +1/-1")
    if len(np.unique(y)) < 2:
        raise ValueError("binary problem needs samples of both classes")
    gamma = 1.0 / x.shape[1] if gamma is None else gamma
    max_iter = max(100_000, 100 * n) if max_iter is None else max_iter
    rows = _KernelRows(x, gamma, cache_mb)

    alpha = np.zeros(n)
    grad = -np.ones(n)
    gap = np.inf
    best_gap = np.inf
    it = 0
    while True:
        yg = -y * grad
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        yg_up = np.where(up, yg, -np.inf)
        i = int(np.argmax(yg_up))
        m_val = yg_up[i]
        M_val = np.where(low, yg, np.inf).min()
        gap = m_val - M_val
        best_gap = min(best_gap, gap)
        if gap < tol:
            break
        if it >= max_iter:
            raise SvmConvergenceError(
                f"SMO did not converge in {max_iter} iterations (gap {gap:.3g} > tol {tol})",
                {"iterations": it, "gap": float(gap), "best_gap": float(best_gap),
                 "alpha": alpha.copy(), "rho": _rho(alpha, y, grad, C)},
            )
        k_i = rows[i]
        # second-order selection of j among violating low-set indices
        b_t = m_val - yg
        cand = low & (b_t > 0)
        a_t = 2.0 - 2.0 * k_i  # K_ii + K_tt - 2 K_it with K(x, x) = 1
        a_t = np.where(a_t > 0, a_t, TAU)
        obj = np.where(cand, -(b_t * b_t) / a_t, np.inf)
        j = int(np.argmin(obj))
        k_j = rows[j]

        ai_old, aj_old = alpha[i], alpha[j]
        yi, yj = y[i], y[j]
        kij = k_i[j]
        if yi != yj:
            quad = max(2.0 - 2.0 * kij, TAU)
            delta = (-grad[i] - grad[j]) / quad
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            quad = max(2.0 - 2.0 * kij, TAU)
            delta = (grad[i] - grad[j]) / quad
            total = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
            elif aj < 0:
                aj, ai = 0.0, total
            if total > C:
                if aj > C:
                    aj, ai = C, total - C
            elif ai < 0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        d_i, d_j = ai - ai_old, aj - aj_old
        # Q_it = y_i y_t K_it
        grad += y * (yi * d_i * k_i + yj * d_j * k_j)
        it += 1
    return BinarySolution(alpha, y, _rho(alpha, y, grad, C), it, float(gap))


@dataclass
class BinaryMachine:
    positive: int
    negative: int
    support: np.ndarray  # (m, d)
    coef: np.ndarray  # alpha_i * y_i
    rho: float
    info: dict = field(default_factory=dict)

    def decision(self, queries: np.ndarray, gamma: float) -> np.ndarray:
        if len(self.coef) == 0:
            return np.full(len(queries), -self.rho)
        k = rbf_kernel(queries, self.support, gamma)
        return (k * self.coef).sum(axis=1) - self.rho


@dataclass
class SvmModel:
    classes: np.ndarray
    machines: list
    gamma: float
    C: float
    n_features: int
    n_classes: int

    def decision_values(self, queries, block: int = 1024) -> np.ndarray:
        """Decision values, one column per class pair (positive = first class of the pair)."""
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if queries.shape[1] != self.n_features:
            raise ValueError(f"query has {queries.shape[1]} features, model expects {self.n_features}")
        out = np.empty((len(queries), len(self.machines)))
        for start in range(0, len(queries), block):
            q = queries[start : start + block]
            for p, machine in enumerate(self.machines):
                out[start : start + len(q), p] = machine.decision(q, self.gamma)
        return out

    def _votes(self, values: np.ndarray):
        votes = np.zeros((len(values), self.n_classes))
        margin = np.zeros((len(values), self.n_classes))
        rows = np.arange(len(values))
        for p, m in enumerate(self.machines):
            f = values[:, p]
            winner = np.where(f > 0, m.positive, m.negative)
            votes[rows, winner] += 1
            margin[:, m.positive] += f
            margin[:, m.negative] -= f
        return votes, margin

    def predict_with_scores(self, queries):
        """Predicted class (pairwise majority, ties by summed decision values) and vote fractions."""
        values = self.decision_values(queries)
        votes, margin = self._votes(values)
        top = votes == votes.max(axis=1, keepdims=True)
        pred = np.where(top, margin, -np.inf).argmax(axis=1)
        return pred, votes / max(len(self.machines), 1)

    def predict_proba(self, queries) -> np.ndarray:
        return self.predict_with_scores(queries)[1]

    def predict(self, queries) -> np.ndarray:
        return self.predict_with_scores(queries)[0]


def svm_train(
    samples,
    labels,
    C: float = 1.0,
    gamma: Optional[float] = None,
    tol: float = 1e-3,
    max_iter: Optional[int] = None,
    n_classes: Optional[int] = None,
    max_samples: int = 20_000,
    seed: int = 0,
    cache_mb: float = 256.0,
) -> SvmModel:
    """Train one SMO machine per class pair.

    Each binary problem larger than ``max_samples`` is reduced to a seeded
    uniform subsample of that size.
    """
    x = np.asarray(samples, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValueError("SVM training needs at least two classes")
    n_classes = int(classes.max()) + 1 if n_classes is None else n_classes
    gamma = 1.0 / x.shape[1] if gamma is None else gamma
    rng = np.random.default_rng(seed)
    machines = []
    for pos, neg in combinations(classes.tolist(), 2):
        idx = np.flatnonzero((labels == pos) | (labels == neg))
        if len(idx) > max_samples:
            idx = np.sort(rng.choice(idx, size=max_samples, replace=False))
        y = np.where(labels[idx] == pos, 1.0, -1.0)
        if len(np.unique(y)) < 2:
            raise ValueError(f"pair ({pos}, {neg}) lost a class after subsampling")
        sol = smo_solve(x[idx], y, C, gamma, tol, max_iter, cache_mb)
        sv = sol.alpha > 0
        log.debug("pair (%d, %d): %d SVs, %d iterations", pos, neg, sv.sum(), sol.iterations)
        machines.append(
            BinaryMachine(
                pos, neg, x[idx][sv], (sol.alpha * sol.y)[sv], sol.rho,
                {"iterations": sol.iterations, "gap": sol.gap, "n_samples": len(idx)},
            )
        )
    return SvmModel(classes, machines, gamma, C, x.shape[1], n_classes)


def svm_predict(model: SvmModel, query) -> tuple[int, np.ndarray]:
    """Class and per-pair decision values for a single query vector."""
    q = np.asarray(query, dtype=np.float64).reshape(1, -1)
    values = model.decision_values(q)
    return int(model.predict(q)[0]), values[0]
