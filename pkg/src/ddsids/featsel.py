"""Feature ranking by four methods, and top-k dataset projection.

All four methods return a full permutation of the dataset's feature names,
most impactful first, with ties broken by the dataset's column order:

* rfe         recursive elimination around an L2-regularized logistic fit,
* lasso       cross-validated L1 linear regression by coordinate descent,
* univariate  one-way analysis-of-variance F statistic per feature,
* importance  permutation importance measured on this package's own detector.

Targets are binarized benign-vs-malicious throughout except for the
univariate F, which handles any number of classes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import detector
from .preprocess import Dataset

F_SENTINEL = 1e300  # stands in for an infinite F when within-class variance is 0


@dataclass
class FeatureRanking:
    method: str
    ranked_names: list[str]
    scores: dict[str, float]
    flagged: list[str] = field(default_factory=list)


def _binary_targets(dataset: Dataset) -> np.ndarray:
    return dataset.binary_labels()


def _ordered(names: Sequence[str], keyed: list[tuple]) -> list[str]:
    """Sort feature indices by (key..., column index) and map to names."""
    order = sorted(range(len(keyed)), key=lambda j: keyed[j] + (j,))
    return [names[j] for j in order]


def _logistic_weights(X: np.ndarray, y: np.ndarray, l2: float = 1e-3, iters: int = 300, lr: float = 0.5) -> np.ndarray:
    """Full-batch gradient descent on L2-regularized logistic loss.

    Deterministic (zero init); returns the weight vector without intercept.
    """
    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    for _ in range(iters):
        z = X @ w + b
        p = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500))), 0.0)
        neg = z < 0
        if neg.any():
            ez = np.exp(z[neg])
            p[neg] = ez / (1.0 + ez)
        g = p - y
        w -= lr * (X.T @ g / n + l2 * w)
        b -= lr * float(g.mean())
    return w


def rank_rfe(dataset: Dataset, step: int = 1) -> FeatureRanking:
    """Repeatedly fit, drop the `step` weakest |weight| features, and rank by
    reverse elimination order."""
    if dataset.width < 2:
        raise ValueError("rfe needs at least 2 features")
    if step < 1:
        raise ValueError("step must be >= 1")
    y = _binary_targets(dataset)
    names = dataset.feature_names
    remaining = list(range(dataset.width))
    eliminated: list[int] = []
    while len(remaining) > 1:
        w = _logistic_weights(dataset.matrix[:, remaining], y)
        order = sorted(range(len(remaining)), key=lambda j: (abs(w[j]), remaining[j]))
        drop = order[: min(step, len(remaining) - 1)]
        eliminated.extend(remaining[j] for j in drop)
        kept = set(drop)
        remaining = [idx for j, idx in enumerate(remaining) if j not in kept]
    ranked_idx = remaining + list(reversed(eliminated))
    ranked_names = [names[i] for i in ranked_idx]
    scores = {names[i]: float(len(ranked_idx) - pos) for pos, i in enumerate(ranked_idx)}
    return FeatureRanking("rfe", ranked_names, scores)


def _coordinate_descent(
    X: np.ndarray,
    y: np.ndarray,
    lam: float,
    w: np.ndarray,
    b: float,
    max_iter: int = 500,
    tol: float = 1e-8,
) -> tuple[np.ndarray, float]:
    """Cyclic coordinate descent on (1/2n)||y - b - Xw||^2 + lam * ||w||_1."""
    n, d = X.shape
    col_ms = (X * X).mean(axis=0)
    w = w.copy()
    residual = y - b - X @ w
    for _ in range(max_iter):
        max_delta = 0.0
        for j in range(d):
            if col_ms[j] == 0.0:
                continue
            rho = float(X[:, j] @ residual) / n + col_ms[j] * w[j]
            new = np.sign(rho) * max(abs(rho) - lam, 0.0) / col_ms[j]
            delta = new - w[j]
            if delta != 0.0:
                residual -= delta * X[:, j]
                w[j] = new
                max_delta = max(max_delta, abs(delta))
        new_b = b + float(residual.mean())
        residual -= new_b - b
        b = new_b
        if max_delta < tol:
            break
    return w, b


def _lasso_path(X: np.ndarray, y: np.ndarray, lambdas: np.ndarray) -> list[np.ndarray]:
    """Coefficients per lambda, warm-started along the descending grid."""
    w = np.zeros(X.shape[1])
    b = float(y.mean())
    path = []
    for lam in lambdas:
        w, b = _coordinate_descent(X, y, float(lam), w, b)
        path.append(w.copy())
    return path


def rank_lasso(
    dataset: Dataset,
    lambda_grid: Sequence[float] | None = None,
    folds: int = 5,
    seed: int = 0,
) -> FeatureRanking:
    """Rank by |coefficient| at the cross-validated lambda; features already
    at zero there are ordered by where along the path they vanished."""
    y = _binary_targets(dataset)
    X = dataset.matrix
    n = len(y)
    if folds < 2 or folds > n:
        raise ValueError("folds must be within 2..n_rows")
    grid = np.sort(np.asarray(lambda_grid if lambda_grid is not None else np.logspace(-4, 1, 30)))[::-1]

    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    fold_of = np.empty(n, dtype=int)
    for pos, row in enumerate(order):
        fold_of[row] = pos % folds

    cv_loss = np.zeros(len(grid))
    for k in range(folds):
        fit = fold_of != k
        val = ~fit
        w = np.zeros(X.shape[1])
        b = float(y[fit].mean())
        for gi, lam in enumerate(grid):
            w, b = _coordinate_descent(X[fit], y[fit], float(lam), w, b)
            err = y[val] - b - X[val] @ w
            cv_loss[gi] += float(err @ err) / len(err)
    cv_loss /= folds
    best_gi = 0
    for gi in range(1, len(grid)):
        if cv_loss[gi] < cv_loss[best_gi]:
            best_gi = gi

    path = _lasso_path(X, y, grid)
    if not np.any(path[-1]):
        raise ValueError(
            f"lasso kept no features even at the grid floor {grid[-1]:g}; "
            "extend lambda_grid to smaller values"
        )
    coefs = path[best_gi]
    first_active = np.full(X.shape[1], len(grid), dtype=int)
    for gi, w in enumerate(path):
        newly = (w != 0) & (first_active == len(grid))
        first_active[newly] = gi

    names = dataset.feature_names
    keyed = []
    for j in range(X.shape[1]):
        if coefs[j] != 0.0:
            keyed.append((0, -abs(coefs[j])))
        else:
            keyed.append((1, int(first_active[j])))
    ranked_names = _ordered(names, keyed)
    scores = {names[j]: float(abs(coefs[j])) for j in range(X.shape[1])}
    return FeatureRanking("lasso", ranked_names, scores)


def rank_univariate(dataset: Dataset, k: int | None = None) -> FeatureRanking:
    """One-way ANOVA F between the label groups, ranked descending."""
    if k is not None and k > dataset.width:
        raise ValueError(f"k={k} exceeds dataset width {dataset.width}")
    labels = np.array(dataset.labels)
    groups = sorted(set(dataset.labels))
    if len(groups) < 2:
        raise ValueError("univariate ranking needs at least 2 classes")
    X = dataset.matrix
    n = X.shape[0]
    grand = X.mean(axis=0)
    ssb = np.zeros(X.shape[1])
    ssw = np.zeros(X.shape[1])
    for g in groups:
        rows = X[labels == g]
        mean_g = rows.mean(axis=0)
        ssb += len(rows) * (mean_g - grand) ** 2
        ssw += ((rows - mean_g) ** 2).sum(axis=0)
    dfb = len(groups) - 1
    dfw = n - len(groups)
    # Zero tests scaled to each column's magnitude, so a constant column whose
    # sums of squares sit at the float noise floor reads as F = 0.
    noise_floor = 1e-20 * np.maximum((X * X).mean(axis=0), 1e-300) * n
    scores_arr = np.zeros(X.shape[1])
    flagged = []
    for j in range(X.shape[1]):
        if ssb[j] <= noise_floor[j]:
            scores_arr[j] = 0.0
        elif ssw[j] <= noise_floor[j] or dfw <= 0:
            scores_arr[j] = F_SENTINEL
            flagged.append(dataset.feature_names[j])
        else:
            scores_arr[j] = (ssb[j] / dfb) / (ssw[j] / dfw)
    ranked_names = _ordered(dataset.feature_names, [(-scores_arr[j],) for j in range(X.shape[1])])
    scores = {dataset.feature_names[j]: float(scores_arr[j]) for j in range(X.shape[1])}
    return FeatureRanking("univariate", ranked_names, scores, flagged)


def rank_importance(
    dataset: Dataset,
    trials: int = 5,
    seed: int = 0,
    epochs: int = 60,
    learning_rate: float = 0.05,
) -> FeatureRanking:
    """Permutation importance against a freshly trained baseline detector.

    The baseline uses a hotter learning rate than the production detector so
    it converges on small ranking datasets too.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    y = _binary_targets(dataset)
    n = len(y)
    order = rng.permutation(n)
    n_hold = max(1, int(round(0.25 * n)))
    hold, fit = order[:n_hold], order[n_hold:]

    fit_ds = Dataset(
        matrix=dataset.matrix[fit],
        labels=[dataset.labels[i] for i in fit],
        feature_names=list(dataset.feature_names),
        shuffle_seed=dataset.shuffle_seed,
        norm_min=dataset.norm_min,
        norm_max=dataset.norm_max,
    )
    config = detector.TrainConfig(
        learning_rate=learning_rate, epochs=epochs, seed=seed, holdout_fraction=0.0
    )
    model = detector.train(fit_ds, detector.default_shape(dataset.width), config)

    X_hold = dataset.matrix[hold]
    y_hold = y[hold] >= 0.5
    baseline = float((detector.classify(model, X_hold) == y_hold).mean())
    majority = max(float(y_hold.mean()), 1.0 - float(y_hold.mean()))
    if baseline <= majority:
        raise ValueError(
            f"baseline accuracy {baseline:.3f} does not beat the majority class "
            f"({majority:.3f}); permutation importance is not meaningful"
        )

    drops = np.zeros(dataset.width)
    for j in range(dataset.width):
        total = 0.0
        for _ in range(trials):
            perm = rng.permutation(len(hold))
            shuffled = X_hold.copy()
            shuffled[:, j] = X_hold[perm, j]
            acc = float((detector.classify(model, shuffled) == y_hold).mean())
            total += baseline - acc
        drops[j] = total / trials

    ranked_names = _ordered(dataset.feature_names, [(-drops[j],) for j in range(dataset.width)])
    scores = {dataset.feature_names[j]: float(drops[j]) for j in range(dataset.width)}
    return FeatureRanking("importance", ranked_names, scores)


def select(dataset: Dataset, ranking: FeatureRanking, k: int) -> Dataset:
    """Project the dataset onto the ranking's top-k features, keeping the
    dataset's own column order."""
    if k < 1 or k > dataset.width:
        raise ValueError(f"k={k} out of range 1..{dataset.width}")
    top = set(ranking.ranked_names[:k])
    names = [n for n in dataset.feature_names if n in top]
    return dataset.project(names)


def ranking_report(rankings: Sequence[FeatureRanking], top: int = 20) -> str:
    """Aligned text table, one column per method, top-n rows."""
    columns = [r.ranked_names[:top] for r in rankings]
    headers = [r.method for r in rankings]
    widths = [max(len(h), max((len(n) for n in col), default=0)) for h, col in zip(headers, columns)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for i in range(max(len(c) for c in columns)):
        cells = [col[i] if i < len(col) else "" for col in columns]
        lines.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
    return "\n".join(lines) + "\n"


def write_scores_csv(ranking: FeatureRanking, path) -> None:
    with open(path, "w") as fh:
        fh.write("rank,feature,score\n")
        for i, name in enumerate(ranking.ranked_names, 1):
            fh.write(f'{i},"{name}",{ranking.scores[name]!r}\n')
