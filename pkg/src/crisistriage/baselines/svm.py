"""RBF-kernel SVM trained by SMO, one-vs-one over the three crisis levels.

The binary solver minimises the standard dual

    0.5 * a^T Q a - sum(a),   Q_ij = y_i y_j K(x_i, x_j),
    subject to 0 <= a_i <= C_i and y^T a = 0,

selecting at each step the maximal violating pair over the first-order
optimality gap, as in libsvm. Box bounds are per sample (``C_i`` follows the
class weight of sample ``i``).
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from ..corpus import LABELS

_TAU = 1e-12


class SvmError(ValueError):
    pass


@dataclass(frozen=True)
class SvmConfig:
    c: float = 1.0
    gamma: Union[str, float] = "scale"
    class_weight: Union[str, dict, None] = "balanced"
    tolerance: float = 1e-3
    max_passes: int = 100_000
    standardize: bool = True

    def __post_init__(self) -> None:
        if not self.c > 0:
            raise ValueError("c must be > 0")
        if isinstance(self.gamma, str):
            if self.gamma not in ("scale", "auto"):
                raise ValueError(f"unknown gamma {self.gamma!r}")
        elif not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")


def resolve_gamma(gamma: Union[str, float], x: np.ndarray) -> float:
    """``"scale"`` = 1 / (n_features * X.var()); ``"auto"`` = 1 / n_features."""
    x = np.asarray(x, dtype=float)
    n_features = x.shape[1]
    if gamma == "scale":
        var = float(x.var())
        return 1.0 / (n_features * var) if var > 0 else 1.0
    if gamma == "auto":
        return 1.0 / n_features
    return float(gamma)


def balanced_class_weights(y: Sequence[int]) -> dict[int, float]:
    """n_samples / (n_classes * n_i) for every class present in ``y``."""
    counts = Counter(int(v) for v in y)
    n, k = sum(counts.values()), len(counts)
    return {lab: n / (k * cnt) for lab, cnt in sorted(counts.items())}


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


# --- binary SMO -------------------------------------------------------------


@dataclass(frozen=True)
class BinarySolution:
    alpha: np.ndarray
    bias: float
    iterations: int
    converged: bool
    upper: np.ndarray  # per-sample box bound C_i


def dual_objective(alpha: np.ndarray, y: np.ndarray, kernel: np.ndarray) -> float:
    q = (y[:, None] * y[None, :]) * kernel
    return float(0.5 * alpha @ q @ alpha - alpha.sum())


def smo_binary(
    kernel: np.ndarray, y: np.ndarray, upper: np.ndarray, tolerance: float = 1e-3, max_iter: int = 100_000
) -> BinarySolution:
    """Solve the binary dual for labels ``y`` in {-1, +1} given a precomputed kernel matrix."""
    y = np.asarray(y, dtype=float)
    upper = np.asarray(upper, dtype=float)
    n = len(y)
    if set(np.unique(y)) - {-1.0, 1.0} or len(np.unique(y)) != 2:
        raise SvmError("binary SMO needs labels in {-1, +1} with both present")
    q = (y[:, None] * y[None, :]) * kernel
    alpha = np.zeros(n)
    grad = -np.ones(n)  # Q a - e
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        score = -y * grad
        up = ((y > 0) & (alpha < upper)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < upper))
        if not up.any() or not low.any():
            converged = True
            break
        i = int(np.flatnonzero(up)[np.argmax(score[up])])
        j = int(np.flatnonzero(low)[np.argmin(score[low])])
        if score[i] - score[j] < tolerance:
            converged = True
            break
        old_i, old_j = alpha[i], alpha[j]
        ci, cj = upper[i], upper[j]
        if y[i] != y[j]:
            quad = max(q[i, i] + q[j, j] + 2.0 * q[i, j], _TAU)
            delta = (-grad[i] - grad[j]) / quad
            diff = old_i - old_j
            ai, aj = old_i + delta, old_j + delta
            if diff > 0 and aj < 0:
                aj, ai = 0.0, diff
            elif diff <= 0 and ai < 0:
                ai, aj = 0.0, -diff
            if diff > ci - cj and ai > ci:
                ai, aj = ci, ci - diff
            elif diff <= ci - cj and aj > cj:
                aj, ai = cj, cj + diff
        else:
            quad = max(q[i, i] + q[j, j] - 2.0 * q[i, j], _TAU)
            delta = (grad[i] - grad[j]) / quad
            total = old_i + old_j
            ai, aj = old_i - delta, old_j + delta
            if total > ci and ai > ci:
                ai, aj = ci, total - ci
            elif total <= ci and aj < 0:
                aj, ai = 0.0, total
            if total > cj and aj > cj:
                aj, ai = cj, total - cj
            elif total <= cj and ai < 0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        grad += q[:, i] * (ai - old_i) + q[:, j] * (aj - old_j)
    return BinarySolution(alpha, _bias(alpha, y, grad, upper), it, converged, upper)


def _bias(alpha: np.ndarray, y: np.ndarray, grad: np.ndarray, upper: np.ndarray) -> float:
    yg = y * grad
    free = (alpha > 0) & (alpha < upper)
    if free.any():
        rho = float(yg[free].mean())
    else:
        # midpoint of the feasible interval for rho
        at_upper = alpha >= upper
        at_lower = alpha <= 0
        ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
        lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
        ub = float(yg[ub_mask].min()) if ub_mask.any() else np.inf
        lb = float(yg[lb_mask].max()) if lb_mask.any() else -np.inf
        rho = (ub + lb) / 2.0 if np.isfinite(ub) and np.isfinite(lb) else (ub if np.isfinite(ub) else lb)
    return -rho


def kkt_violation(alpha: np.ndarray, bias: float, y: np.ndarray, kernel: np.ndarray, upper: np.ndarray) -> float:
    """Largest violation of the complementary-slackness conditions on the margins y_i f(x_i)."""
    margin = y * ((alpha * y) @ kernel + bias)
    lower_side = np.where(alpha < upper, np.maximum(0.0, 1.0 - margin), 0.0)  # a < C needs yf >= 1
    upper_side = np.where(alpha > 0, np.maximum(0.0, margin - 1.0), 0.0)  # a > 0 needs yf <= 1
    return float(max(lower_side.max(initial=0.0), upper_side.max(initial=0.0)))


# --- multiclass model -------------------------------------------------------


@dataclass(frozen=True)
class BinaryMachine:
    positive: int  # label mapped to +1 (the higher crisis level)
    negative: int
    support_vectors: np.ndarray
    dual_coef: np.ndarray  # alpha_i * y_i of the support vectors
    bias: float
    converged: bool

    def decision(self, k: np.ndarray) -> np.ndarray:
        return k @ self.dual_coef + self.bias


@dataclass(frozen=True)
class SvmModel:
    machines: tuple[BinaryMachine, ...]
    gamma: float
    mean: np.ndarray
    scale: np.ndarray
    classes: tuple[int, ...]
    config: SvmConfig = field(default_factory=SvmConfig)

    @property
    def n_features(self) -> int:
        return len(self.mean)

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.n_features:
            raise SvmError(f"expected {self.n_features} features, got {x.shape[1]}")
        return (x - self.mean) / self.scale

    def votes(self, x: np.ndarray) -> np.ndarray:
        z = self.transform(x)
        out = np.zeros((len(z), 3), dtype=int)
        for m in self.machines:
            d = m.decision(rbf_kernel(z, m.support_vectors, self.gamma))
            winners = np.where(d > 0, m.positive, m.negative)
            out[np.arange(len(z)), winners] += 1
        return out

    def predict(self, x: np.ndarray) -> np.ndarray:
        v = self.votes(x)
        # ties resolve toward the higher crisis level
        return np.array([max(LABELS, key=lambda lab: (row[lab], lab)) for row in v], dtype=int)


def standardization(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return mean, scale


def svm_fit(x: np.ndarray, y: Sequence[int], cfg: SvmConfig | None = None) -> SvmModel:
    cfg = cfg or SvmConfig()
    x = np.asarray(x, dtype=float)
    y = np.asarray([int(v) for v in y])
    if x.ndim != 2 or len(x) != len(y):
        raise SvmError("x must be 2-D with one row per label")
    if not np.isfinite(x).all():
        raise SvmError("features must be finite")
    classes = tuple(sorted(set(y.tolist())))
    if len(classes) < 2:
        raise SvmError(f"need at least 2 classes, got {list(classes)}")
    if cfg.standardize:
        mean, scale = standardization(x)
    else:
        mean, scale = np.zeros(x.shape[1]), np.ones(x.shape[1])
    z = (x - mean) / scale
    gamma = resolve_gamma(cfg.gamma, z)
    if cfg.class_weight == "balanced":
        weights = balanced_class_weights(y)
    elif isinstance(cfg.class_weight, dict):
        weights = {lab: float(cfg.class_weight.get(lab, 1.0)) for lab in classes}
    else:
        weights = {lab: 1.0 for lab in classes}
    machines = []
    for neg, pos in itertools.combinations(classes, 2):
        idx = np.flatnonzero((y == neg) | (y == pos))
        yy = np.where(y[idx] == pos, 1.0, -1.0)
        upper = np.array([cfg.c * weights[int(lab)] for lab in y[idx]])
        k = rbf_kernel(z[idx], z[idx], gamma)
        sol = smo_binary(k, yy, upper, cfg.tolerance, cfg.max_passes)
        sv = sol.alpha > 0
        machines.append(
            BinaryMachine(pos, neg, z[idx][sv], (sol.alpha * yy)[sv], sol.bias, sol.converged)
        )
    return SvmModel(tuple(machines), gamma, mean, scale, classes, cfg)


def svm_predict(model: SvmModel, x: np.ndarray) -> np.ndarray | int:
    """Labels for a batch (2-D input) or a single label for one vector."""
    arr = np.asarray(x, dtype=float)
    pred = model.predict(arr)
    return int(pred[0]) if arr.ndim == 1 else pred
