"""RBF-kernel soft-margin SVMs and their one-vs-one multiclass ensemble."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from ._smo import smo_solve
from .spectra_io import LabeledDataset


class SvmTrainingError(RuntimeError):
    """Raised when a binary SVM cannot be trained."""


class ConvergenceError(SvmTrainingError):
    def __init__(self, message, max_violation):
        super().__init__(message)
        self.max_violation = max_violation


@dataclass(frozen=True)
class SvmHyperparams:
    C: float
    sigma: float

    def __post_init__(self):
        if not (self.C > 0 and self.sigma > 0):
            raise ValueError(f"C and sigma must be positive, got C={self.C}, sigma={self.sigma}")


def rbf_kernel(a, b, sigma: float) -> float:
    """``exp(-||a - b||^2 / sigma^2)``.

    Note the denominator is ``sigma**2`` and not ``2 * sigma**2``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"vector length mismatch: {a.shape} vs {b.shape}")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    d = a - b
    return float(np.exp(-np.dot(d, d) / (sigma * sigma)))


def sq_distances(A, B) -> np.ndarray:
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    d = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * (A @ B.T)
    return np.maximum(d, 0.0)


def rbf_gram(A, B, sigma: float) -> np.ndarray:
    """Kernel matrix between the rows of ``A`` and ``B``."""
    return np.exp(-sq_distances(A, B) / (sigma * sigma))


@dataclass(eq=False)
class BinarySvm:
    support_vectors: np.ndarray
    alphas: np.ndarray
    labels: np.ndarray
    bias: float
    hyperparams: SvmHyperparams

    @property
    def coef(self) -> np.ndarray:
        return self.alphas * self.labels

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.support_vectors.shape[0] == 0:
            return np.full(X.shape[0], self.bias)
        if X.shape[1] != self.support_vectors.shape[1]:
            raise ValueError(
                f"expected vectors of length {self.support_vectors.shape[1]}, got {X.shape[1]}"
            )
        return rbf_gram(X, self.support_vectors, self.hyperparams.sigma) @ self.coef + self.bias


def decision_value(m: BinarySvm, x) -> float:
    """``f(x) = sum_i alpha_i y_i k(x_i, x) + b``; its sign is the prediction."""
    return float(m.decision_function(np.asarray(x, dtype=np.float64)[None, :])[0])


def kkt_residuals(alpha, y, f, C, eps=1e-12) -> np.ndarray:
    """Per-sample KKT violation of a trained solution, given decision values ``f``."""
    margin = y * f
    r = np.abs(margin - 1.0)
    at_zero = alpha <= eps
    at_c = alpha >= C - eps * max(C, 1.0)
    r[at_zero] = np.maximum(0.0, 1.0 - margin[at_zero])
    r[at_c] = np.maximum(0.0, margin[at_c] - 1.0)
    return r


def dual_objective(alpha, y, K) -> float:
    """Dual objective ``sum(a) - 0.5 a^T Q a`` (to be maximized)."""
    v = alpha * y
    return float(alpha.sum() - 0.5 * v @ K @ v)


def train_binary_gram(K, y, hp: SvmHyperparams, tol: float = 1e-3, max_iter: int | None = None):
    """Solve the dual over a precomputed Gram matrix.

    Returns ``(alpha, bias)`` with all multipliers (including zeros).
    """
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[0]
    if n < 2 or not (np.any(y > 0) and np.any(y < 0)):
        raise SvmTrainingError("binary training needs at least one sample of each label")
    if max_iter is None:
        max_iter = max(10_000_000, 100 * n)
    alpha, grad, _, converged = smo_solve(np.ascontiguousarray(K, dtype=np.float64), y,
                                          float(hp.C), float(tol), int(max_iter))
    # b = -(y * grad) on free vectors; otherwise midpoint of the feasible interval
    yg = -y * grad
    free = (alpha > 1e-12) & (alpha < hp.C * (1 - 1e-12))
    if free.any():
        bias = float(yg[free].mean())
    else:
        up = ((y > 0) & (alpha < hp.C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < hp.C))
        hi = yg[low].min() if low.any() else yg.max()
        lo = yg[up].max() if up.any() else yg.min()
        bias = float(0.5 * (hi + lo))
    if not converged:
        f = K @ (alpha * y) + bias
        worst = float(kkt_residuals(alpha, y, f, hp.C).max())
        raise ConvergenceError(
            f"SMO did not converge within {max_iter} iterations (max KKT violation {worst:.3g})",
            worst,
        )
    return alpha, bias


def train_binary(X, y, hp: SvmHyperparams, tol: float = 1e-3, max_iter: int | None = None) -> BinarySvm:
    """Train a soft-margin RBF SVM on rows ``X`` with labels in ``{-1, +1}``.

    Only vectors with non-zero multipliers are kept in the returned model.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.abs(y) == 1):
        raise SvmTrainingError("binary labels must be -1 or +1")
    K = rbf_gram(X, X, hp.sigma)
    alpha, bias = train_binary_gram(K, y, hp, tol, max_iter)
    keep = alpha > 0
    return BinarySvm(X[keep].copy(), alpha[keep], y[keep], bias, hp)


@dataclass(eq=False)
class OvoSvmModel:
    """One binary SVM per unordered class pair; the lower class id is ``+1``."""

    class_count: int
    hyperparams: SvmHyperparams
    pairs: list[tuple[int, int]] = field(default_factory=list)
    models: list[BinarySvm] = field(default_factory=list)

    @property
    def feature_count(self) -> int:
        for m in self.models:
            if m.support_vectors.size:
                return m.support_vectors.shape[1]
        return -1

    def decision_matrix(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.column_stack([m.decision_function(X) for m in self.models])

    def predict(self, X) -> np.ndarray:
        return vote(self.pairs, self.decision_matrix(X), self.class_count)


def vote(pairs, decisions, class_count) -> np.ndarray:
    """Majority vote over pairwise decisions.

    ``decisions[:, p] > 0`` votes for ``pairs[p][0]``, otherwise for
    ``pairs[p][1]``. Ties between top-voted classes go to the class with
    the largest sum of ``|decision|`` over all its pairwise models, then to
    the lowest class id.
    """
    decisions = np.atleast_2d(decisions)
    n = decisions.shape[0]
    votes = np.zeros((n, class_count + 1), dtype=np.int64)
    strength = np.zeros((n, class_count + 1))
    rows = np.arange(n)
    for p, (a, b) in enumerate(pairs):
        f = decisions[:, p]
        winner = np.where(f > 0, a, b)
        np.add.at(votes, (rows, winner), 1)
        strength[:, a] += np.abs(f)
        strength[:, b] += np.abs(f)
    votes, strength = votes[:, 1:], strength[:, 1:]
    top = votes == votes.max(axis=1, keepdims=True)
    score = np.where(top, strength, -np.inf)
    return score.argmax(axis=1) + 1


def train_ovo(F: LabeledDataset, hp: SvmHyperparams, tol: float = 1e-3) -> OvoSvmModel:
    """Train ``K(K-1)/2`` binary models, each on its two classes only."""
    K = F.class_count
    if K < 2:
        raise SvmTrainingError("one-vs-one training needs at least two classes")
    X, labels = F.spectra, F.labels
    model = OvoSvmModel(K, hp)
    for a, b in combinations(range(1, K + 1), 2):
        idx = np.flatnonzero((labels == a) | (labels == b))
        y = np.where(labels[idx] == a, 1.0, -1.0)
        try:
            m = train_binary(X[idx], y, hp, tol)
        except ConvergenceError as exc:
            raise ConvergenceError(f"pair ({a}, {b}): {exc}", exc.max_violation) from exc
        except SvmTrainingError as exc:
            raise SvmTrainingError(f"pair ({a}, {b}): {exc}") from exc
        model.pairs.append((a, b))
        model.models.append(m)
    return model


def predict_ovo(m: OvoSvmModel, x) -> int | np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = m.predict(x)
    return int(out[0]) if x.ndim == 1 else out


def accuracy(m: OvoSvmModel, F_test: LabeledDataset) -> float:
    if len(F_test) == 0:
        raise ValueError("empty test set")
    return float(np.mean(m.predict(F_test.spectra) == F_test.labels))


def save_ovo(m: OvoSvmModel, path) -> None:
    """Plain-text export: header, hyperparameters, then one block per pair."""
    lines = [
        "ovo_svm 1",
        f"class_count {m.class_count}",
        f"C {m.hyperparams.C!r}",
        f"sigma {m.hyperparams.sigma!r}",
        f"pairs {len(m.pairs)}",
    ]
    for (a, b), bm in zip(m.pairs, m.models):
        nsv, dim = bm.support_vectors.shape if bm.support_vectors.size else (0, 0)
        lines.append(f"pair {a} {b} {nsv} {dim} {bm.bias!r}")
        for alpha, label, row in zip(bm.alphas, bm.labels, bm.support_vectors):
            lines.append(" ".join([repr(float(alpha)), str(int(label))] + [repr(float(v)) for v in row]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_ovo(path) -> OvoSvmModel:
    it = iter(Path(path).read_text().splitlines())

    def field_(name):
        key, _, value = next(it).partition(" ")
        if key != name:
            raise ValueError(f"{path}: expected '{name}', got '{key}'")
        return value

    if field_("ovo_svm") != "1":
        raise ValueError(f"{path}: unsupported format version")
    k = int(field_("class_count"))
    hp = SvmHyperparams(float(field_("C")), float(field_("sigma")))
    model = OvoSvmModel(k, hp)
    for _ in range(int(field_("pairs"))):
        a, b, nsv, dim, bias = field_("pair").split()
        rows = [next(it).split() for _ in range(int(nsv))]
        sv = np.array([[float(v) for v in r[2:]] for r in rows]).reshape(int(nsv), int(dim))
        alphas = np.array([float(r[0]) for r in rows])
        labels = np.array([float(r[1]) for r in rows])
        model.pairs.append((int(a), int(b)))
        model.models.append(BinarySvm(sv, alphas, labels, float(bias), hp))
    return model
