"""Stage classifiers: SMO-trained kernel SVMs (binary and one-vs-one multiclass),
a bagged CART ensemble for the flat baseline, feature standardization with
sentinel imputation, and stratified grid-search model selection."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import DataError, NumericError


# ---------------------------------------------------------------------------
# Kernels

@dataclass(frozen=True)
class KernelSpec:
    kind: str                 # "gaussian" | "polynomial"
    gamma: float = 1.0        # gaussian: exp(-gamma * ||x - x'||^2)
    degree: int = 2           # polynomial: (x.x' / scale + 1) ** degree
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "polynomial"):
            raise DataError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "gaussian" and self.gamma <= 0:
            raise DataError("gamma must be positive")
        if self.kind == "polynomial":
            if self.degree not in (2, 3):
                raise DataError("polynomial degree must be 2 or 3")
            if self.scale <= 0:
                raise DataError("scale must be positive")

    @property
    def effective_scale(self) -> float:
        """Length scale used for regularization tie-breaks (larger = smoother)."""
        return self.gamma**-0.5 if self.kind == "gaussian" else self.scale


def kernel_matrix(spec: KernelSpec, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if spec.kind == "gaussian":
        sq = (
            (A * A).sum(axis=1)[:, None]
            + (B * B).sum(axis=1)[None, :]
            - 2.0 * (A @ B.T)
        )
        return np.exp(-spec.gamma * np.maximum(sq, 0.0))
    return (A @ B.T / spec.scale + 1.0) ** spec.degree


# ---------------------------------------------------------------------------
# Binary SVM via SMO

@dataclass
class SvmBinary:
    support_vectors: np.ndarray   # (m, d) float32 at rest
    dual_coef: np.ndarray         # (m,) alpha_i * y_i
    bias: float
    kernel: KernelSpec
    C: float
    n_iterations: int = 0
    final_gap: float = 0.0

    def decision(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.support_vectors.shape[1]:
            raise DataError(
                f"expected {self.support_vectors.shape[1]} features, got {X.shape[1]}"
            )
        km = kernel_matrix(self.kernel, X, self.support_vectors.astype(np.float64))
        return km @ self.dual_coef + self.bias

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Labels in {-1, +1}; the boundary decision value 0 maps to +1."""
        return np.where(self.decision(X) >= 0.0, 1, -1)

    def dual_objective(self, X: np.ndarray, y: np.ndarray, alpha: np.ndarray) -> float:
        K = kernel_matrix(self.kernel, X, X)
        Q = (y[:, None] * y[None, :]) * K
        return float(alpha.sum() - 0.5 * alpha @ Q @ alpha)


def smo_train(
    X: np.ndarray,
    y: np.ndarray,
    kernel: KernelSpec,
    C: float,
    tol: float = 1e-3,
    max_passes: Optional[int] = None,
) -> SvmBinary:
    """Train a soft-margin kernel SVM with most-violating-pair SMO.

    `max_passes` caps the number of pair updates (default 100n + 20000);
    exhausting it with the KKT gap still above tol raises NumericError.
    Deterministic: pair selection is by maximal KKT violation with
    first-index tie-breaking.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DataError("X must be (n, d) with one label per row")
    if not np.isfinite(X).all() or not np.isfinite(y).all():
        raise DataError("non-finite values in training data")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise DataError("both classes must be present")
    if C <= 0:
        raise DataError("C must be positive")
    n = X.shape[0]
    budget = max_passes if max_passes is not None else 100 * n + 20000
    K = kernel_matrix(kernel, X, X)
    alpha, b, iters, gap = kernels.smo_solve(K, y, float(C), float(tol), int(budget))
    if gap > tol:
        raise NumericError(
            f"SMO did not converge in {budget} iterations (gap {gap:.3g} > tol {tol:.3g})"
        )
    sv = alpha > 1e-12
    model = SvmBinary(
        support_vectors=X[sv].astype(np.float32),
        dual_coef=alpha[sv] * y[sv],
        bias=float(b),
        kernel=kernel,
        C=float(C),
        n_iterations=int(iters),
        final_gap=float(gap),
    )
    model._alpha_full = alpha
    return model


def svm_decision(model: SvmBinary, x) -> np.ndarray:
    """f(x) = sum_i alpha_i y_i K(x_i, x) + b."""
    return model.decision(x)


# ---------------------------------------------------------------------------
# One-vs-one multiclass

@dataclass
class OvoSvm:
    n_classes: int
    pairs: list            # [(i, j), ...] with i < j
    machines: list         # SvmBinary per pair; +1 side is class i

    def predict_scores(self, X: np.ndarray):
        """Per-class scores and vote-based labels.

        score_c = (pairwise wins for c) + a bounded margin refinement: the sum
        of clip(f, -1, 1) over c's machines, scaled below half a vote. Clipping
        keeps one confidently-wrong machine from dominating the class ranking
        the way raw decision-value sums do. The label is the pairwise-vote
        winner; ties break by score, then by class index - and because the
        refinement term stays under half a vote, argmax(score) realizes exactly
        that rule.
        """
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        n = X.shape[0]
        refine = np.zeros((n, self.n_classes))
        votes = np.zeros((n, self.n_classes))
        for (i, j), m in zip(self.pairs, self.machines):
            f = m.decision(X)
            c = np.clip(f, -1.0, 1.0)
            refine[:, i] += c
            refine[:, j] -= c
            win_i = f >= 0.0
            votes[win_i, i] += 1
            votes[~win_i, j] += 1
        # |refine| <= K-1 per class; scale into (-0.5, 0.5)
        scores = votes + refine / (2.0 * self.n_classes)
        labels = np.empty(n, dtype=np.int64)
        for r in range(n):
            vmax = votes[r].max()
            cand = np.flatnonzero(votes[r] == vmax)
            if cand.shape[0] == 1:
                labels[r] = cand[0]
            else:
                labels[r] = cand[int(np.argmax(scores[r, cand]))]
        return scores, labels

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.predict_scores(X)[1]


def ovo_fit(
    X: np.ndarray,
    y: np.ndarray,
    kernel: KernelSpec,
    C: float,
    n_classes: Optional[int] = None,
    tol: float = 1e-3,
    max_passes: Optional[int] = None,
) -> OvoSvm:
    """Fit K(K-1)/2 pairwise SVMs over integer labels 0..K-1."""
    y = np.asarray(y, dtype=np.int64)
    k = int(n_classes if n_classes is not None else y.max() + 1)
    present = np.unique(y)
    if present.shape[0] < 2:
        raise DataError("need at least 2 classes")
    pairs = []
    machines = []
    for i in range(k):
        for j in range(i + 1, k):
            mask = (y == i) | (y == j)
            if not ((y[mask] == i).any() and (y[mask] == j).any()):
                raise DataError(f"class pair ({i}, {j}) lacks examples of both classes")
            yy = np.where(y[mask] == i, 1.0, -1.0)
            machines.append(smo_train(X[mask], yy, kernel, C, tol=tol, max_passes=max_passes))
            pairs.append((i, j))
    return OvoSvm(n_classes=k, pairs=pairs, machines=machines)


# ---------------------------------------------------------------------------
# Bagged CART trees (flat baseline)

@dataclass
class CartTree:
    feature: np.ndarray    # (nodes,) split feature, -1 for leaves
    threshold: np.ndarray  # (nodes,)
    left: np.ndarray       # (nodes,) child indices
    right: np.ndarray
    counts: np.ndarray     # (nodes, K) training class counts


def _build_tree(X: np.ndarray, y: np.ndarray, n_classes: int, min_leaf: int) -> CartTree:
    feature, threshold, left, right, counts = [], [], [], [], []
    stack = [(np.arange(X.shape[0]), -1, False)]
    while stack:
        idx, parent, is_right = stack.pop()
        node = len(feature)
        if parent >= 0:
            (right if is_right else left)[parent] = node
        cnt = np.bincount(y[idx], minlength=n_classes).astype(np.float64)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(cnt)
        if np.count_nonzero(cnt) <= 1 or idx.shape[0] < 2 * min_leaf:
            continue
        f, thr, _ = kernels.best_gini_split(
            np.ascontiguousarray(X[idx]), np.ascontiguousarray(y[idx]), n_classes, min_leaf
        )
        if f < 0:
            continue
        feature[node] = int(f)
        threshold[node] = float(thr)
        go_left = X[idx, f] <= thr
        # push right first so the left child is built (and numbered) first
        stack.append((idx[~go_left], node, True))
        stack.append((idx[go_left], node, False))
    return CartTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        counts=np.array(counts, dtype=np.float64),
    )


def _tree_votes(tree: CartTree, X: np.ndarray) -> np.ndarray:
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for r in range(n):
        node = 0
        while tree.feature[node] >= 0:
            if X[r, tree.feature[node]] <= tree.threshold[node]:
                node = tree.left[node]
            else:
                node = tree.right[node]
        out[r] = int(np.argmax(tree.counts[node]))
    return out


@dataclass
class TreeEnsemble:
    trees: list
    n_classes: int
    seed: int

    def predict_fractions(self, X: np.ndarray) -> np.ndarray:
        """Per-class vote fractions; rows sum to 1."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        votes = np.zeros((X.shape[0], self.n_classes))
        for tree in self.trees:
            v = _tree_votes(tree, X)
            votes[np.arange(X.shape[0]), v] += 1.0
        return votes / len(self.trees)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_fractions(X), axis=1)


def bagged_trees_train(
    X: np.ndarray,
    y: np.ndarray,
    B: int = 30,
    min_leaf: int = 1,
    seed: int = 0,
    bootstrap: bool = True,
    n_classes: Optional[int] = None,
) -> TreeEnsemble:
    """Bag of unlimited-depth Gini CART trees, one bootstrap resample each."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    k = int(n_classes if n_classes is not None else y.max() + 1)
    if np.unique(y).shape[0] < 2:
        raise DataError("need at least 2 classes")
    rng = np.random.default_rng(seed)
    trees = []
    for _ in range(B):
        idx = rng.integers(0, X.shape[0], X.shape[0]) if bootstrap else np.arange(X.shape[0])
        trees.append(_build_tree(X[idx], y[idx], k, min_leaf))
    return TreeEnsemble(trees=trees, n_classes=k, seed=seed)


# ---------------------------------------------------------------------------
# Standardization with sentinel imputation

@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray
    impute: np.ndarray
    zero_variance: np.ndarray   # bool flags per feature
    all_missing: np.ndarray     # bool flags per feature

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.mean.shape[0]:
            raise DataError(f"expected {self.mean.shape[0]} features, got {X.shape[1]}")
        filled = np.where(np.isnan(X), self.impute[None, :], X)
        return (filled - self.mean[None, :]) / self.std[None, :]


def scaler_fit(X: np.ndarray) -> Scaler:
    """Column means/stds from training data; NaN sentinels are imputed with the
    per-column non-NaN mean first. Zero-variance columns scale by 1 (flagged)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        raise DataError("cannot fit a scaler on an empty set")
    all_missing = np.all(np.isnan(X), axis=0)
    with np.errstate(invalid="ignore"):
        impute = np.where(all_missing, 0.0, np.nanmean(X, axis=0))
    filled = np.where(np.isnan(X), impute[None, :], X)
    mean = filled.mean(axis=0)
    std = filled.std(axis=0)
    zero_var = std < 1e-12
    std = np.where(zero_var, 1.0, std)
    return Scaler(
        mean=mean, std=std, impute=impute, zero_variance=zero_var, all_missing=all_missing
    )


def scaler_apply(scaler: Scaler, X: np.ndarray) -> np.ndarray:
    return scaler.transform(X)


# ---------------------------------------------------------------------------
# Stratified grid search

def stratified_folds(y: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Fold index per sample; every class is dealt round-robin after a seeded
    shuffle, so each training side keeps all classes (needs >= 2 per class)."""
    y = np.asarray(y)
    n = y.shape[0]
    if n < folds:
        raise DataError(f"need at least {folds} samples for {folds}-fold CV")
    rng = np.random.default_rng(seed)
    fold_id = np.empty(n, dtype=np.int64)
    classes, counts = np.unique(y, return_counts=True)
    if counts.min() < 2:
        lonely = classes[int(np.argmin(counts))]
        raise DataError(
            f"class {lonely!r} has a single sample; stratified folds impossible"
        )
    offset = 0
    for c in classes:
        idx = np.flatnonzero(y == c)
        rng.shuffle(idx)
        fold_id[idx] = (np.arange(idx.shape[0]) + offset) % folds
        offset += idx.shape[0]
    return fold_id


def grid_search_cv(X, y, fit, grid, folds: int = 5, seed: int = 0):
    """Pick the grid point with the best mean stratified-CV accuracy.

    `fit(X, y, params)` must return a model with .predict(X). Accuracy ties
    break toward smaller C, then a larger kernel length scale; exact duplicates
    resolve to the earlier grid entry.
    """
    if not grid:
        raise DataError("empty hyperparameter grid")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    fold_id = stratified_folds(y, folds, seed)
    table = []
    for params in grid:
        accs = []
        for f in range(folds):
            tr = fold_id != f
            va = ~tr
            model = fit(X[tr], y[tr], params)
            accs.append(float(np.mean(model.predict(X[va]) == y[va])))
        table.append({"params": params, "fold_accuracies": accs, "mean_accuracy": float(np.mean(accs))})

    def sort_key(entry_index):
        entry = table[entry_index]
        p = entry["params"]
        spec = p.get("kernel")
        eff = spec.effective_scale if isinstance(spec, KernelSpec) else 0.0
        return (-entry["mean_accuracy"], p.get("C", 0.0), -eff, entry_index)

    best = table[min(range(len(table)), key=sort_key)]
    return best["params"], table


def default_grid(kind: str, n_features: int, degree: int = 2, compact: bool = False):
    """Log-spaced C and kernel-scale grid; `compact` trims to 3x3 for fast runs."""
    cs = (0.1, 1.0, 10.0) if compact else (0.01, 0.1, 1.0, 10.0, 100.0)
    if kind == "gaussian":
        gammas = (0.3, 1.0, 3.0) if compact else (0.1, 0.3, 1.0, 3.0, 10.0)
        return [
            {"C": c, "kernel": KernelSpec("gaussian", gamma=g / n_features)}
            for c in cs
            for g in gammas
        ]
    scales = (0.5, 1.0, 2.0) if compact else (0.25, 0.5, 1.0, 2.0, 4.0)
    return [
        {"C": c, "kernel": KernelSpec("polynomial", degree=degree, scale=s * n_features)}
        for c in cs
        for s in scales
    ]
