"""Predicting external object dimensions from the affordance embedding.

Each target column ``y`` is regressed on the embedding ``O`` with a
non-negative Lasso::

    min_{w >= 0}  1/(2m) ||y - O w||^2 + lam * sum(w)

with ``lam`` picked by 2-fold cross-validation on a log-spaced grid.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import stats

from afford.corpus import LabeledMatrix, VocabIndex, normalize_entry
from afford.io import open_text
from afford.nmf import FactorPair
from afford.ranking import VerbRanking, column_cosine, rank_scores

log = logging.getLogger(__name__)


def default_grid(n: int = 50) -> np.ndarray:
    return np.logspace(-7, 3, n)


@dataclass
class TargetMatrix:
    Y: np.ndarray
    objects: list[str]
    dims: list[str]
    noun_ids: np.ndarray | None = None
    report: dict = field(default_factory=dict)

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.Y.shape != (len(self.objects), len(self.dims)):
            raise ValueError(f"target shape {self.Y.shape} does not match labels")


def load_targets(path: str | os.PathLike) -> TargetMatrix:
    """Read TSV with header ``object<TAB>dim_1 ... dim_D``."""
    with open_text(path) as fh:
        lines = [ln.rstrip("\r\n") for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ValueError(f"{path}: empty target file")
    dims = lines[0].split("\t")[1:]
    objects, rows = [], []
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split("\t")
        if len(parts) != len(dims) + 1:
            raise ValueError(f"{path}: row {lineno}: expected {len(dims) + 1} columns")
        objects.append(normalize_entry(parts[0]))
        rows.append([float(x) for x in parts[1:]])
    Y = np.array(rows, dtype=np.float64).reshape(len(rows), len(dims))
    if (Y < 0).any():
        raise ValueError(f"{path}: target values must be non-negative")
    return TargetMatrix(Y, objects, dims)


def align_targets(raw: TargetMatrix, nouns: VocabIndex, P: LabeledMatrix) -> TargetMatrix:
    """Average rows sharing a noun, drop nouns unknown or PPMI-empty, order by vocab."""
    empty = set(P.zero_rows())
    groups: dict[int, list[int]] = {}
    unknown, no_verbs = [], []
    for r, label in enumerate(raw.objects):
        i = nouns.id_of.get(label)
        if i is None:
            unknown.append(label)
        elif i in empty:
            no_verbs.append(label)
        else:
            groups.setdefault(i, []).append(r)
    if not groups:
        raise ValueError("no target rows left after alignment")
    ids = np.array(sorted(groups), dtype=np.int64)
    Y = np.stack([raw.Y[groups[i]].mean(axis=0) for i in ids])
    averaged = {nouns[i]: len(groups[i]) for i in ids if len(groups[i]) > 1}
    report = {
        "input_rows": len(raw.objects),
        "aligned_objects": len(ids),
        "dropped_unknown": unknown,
        "dropped_no_verbs": no_verbs,
        "averaged": averaged,
    }
    return TargetMatrix(Y, [nouns[i] for i in ids], list(raw.dims), ids, report)


@dataclass
class LassoFit:
    w: np.ndarray
    converged: bool
    sweeps: int
    kkt_gap: float
    objective_trace: list[float] = field(default_factory=list)


def lasso_objective(O: np.ndarray, y: np.ndarray, w: np.ndarray, lam: float) -> float:
    r = y - O @ w
    return float(r @ r / (2 * len(y)) + lam * np.abs(w).sum())


def kkt_gap(G: np.ndarray, c: np.ndarray, w: np.ndarray, lam: float) -> float:
    """Largest violation of the non-negative Lasso optimality conditions."""
    g = G @ w - c + lam
    viol = np.where(w > 0, np.abs(g), np.maximum(-g, 0.0))
    return float(viol.max()) if viol.size else 0.0


def _cd(G, c, lam, w, max_sweeps, tol, trace_fn=None):
    d = len(c)
    Gw = G @ w
    diag = np.diag(G)
    trace = []
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        delta = 0.0
        for j in range(d):
            gjj = diag[j]
            if gjj <= 0:
                continue
            old = w[j]
            z = c[j] - Gw[j] + gjj * old
            new = z - lam
            new = new / gjj if new > 0 else 0.0
            if new != old:
                Gw += G[:, j] * (new - old)
                w[j] = new
                delta = max(delta, abs(new - old))
        if trace_fn is not None:
            trace.append(trace_fn(w))
        if delta < tol:
            converged = True
            break
    return w, converged, sweeps, trace


def nonneg_lasso(
    O,
    y,
    lam: float,
    max_sweeps: int = 10_000,
    tol: float = 1e-8,
    w0: np.ndarray | None = None,
    trace: bool = False,
) -> LassoFit:
    """Cyclic coordinate descent with a clamped soft-threshold.

    Stops when no coordinate moved by ``tol`` in a sweep.  Hitting
    ``max_sweeps`` returns the iterate with ``converged=False``.
    """
    O = np.asarray(O, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    m = len(y)
    G = O.T @ O / m
    c = O.T @ y / m
    w = np.zeros(O.shape[1]) if w0 is None else np.maximum(np.array(w0, dtype=np.float64), 0.0)
    fn = (lambda w: lasso_objective(O, y, w, lam)) if trace else None
    w, converged, sweeps, tr = _cd(G, c, lam, w, max_sweeps, tol, fn)
    gap = kkt_gap(G, c, w, lam)
    if not converged:
        log.warning("nonneg_lasso: no convergence after %d sweeps (lam=%g, KKT gap %.3g)", sweeps, lam, gap)
    return LassoFit(w, converged, sweeps, gap, tr)


class LambdaSelection(NamedTuple):
    lambda_star: float
    cv_curve: np.ndarray
    yhat: np.ndarray


def _fold_indices(m: int, folds: int, seed: int) -> list[np.ndarray]:
    perm = np.random.default_rng(seed).permutation(m)
    return [np.sort(f) for f in np.array_split(perm, folds)]


def cv_lambda(O, y, grid: Sequence[float] | None = None, folds: int = 2, seed: int = 0) -> LambdaSelection:
    """Pick ``lam`` by k-fold CV; ties go to the larger (sparser) ``lam``.

    ``cv_curve`` is the fold-averaged held-out mean squared error, aligned with
    ``grid``.  ``yhat`` holds the out-of-fold predictions at the chosen ``lam``.
    """
    O = np.asarray(O, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    grid = default_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("empty lambda grid")
    m = len(y)
    if m < folds or m < 2:
        raise ValueError(f"need at least {max(folds, 2)} observations, got {m}")
    parts = _fold_indices(m, folds, seed)
    curve = np.zeros(len(grid))
    preds = np.zeros((len(grid), m))
    descending = np.argsort(-grid, kind="stable")
    for test in parts:
        train = np.setdiff1d(np.arange(m), test)
        Otr, ytr = O[train], y[train]
        G = Otr.T @ Otr / len(train)
        c = Otr.T @ ytr / len(train)
        w = np.zeros(O.shape[1])
        for g in descending:
            w, _, _, _ = _cd(G, c, grid[g], w.copy(), 10_000, 1e-8)
            pred = O[test] @ w
            preds[g, test] = pred
            curve[g] += np.mean((y[test] - pred) ** 2) / len(parts)
    best = curve.min()
    tied = np.flatnonzero(curve <= best + 1e-10 * abs(best) + 1e-15)
    star = tied[np.argmax(grid[tied])]
    return LambdaSelection(float(grid[star]), curve, preds[star].copy())


def pearson(x, y) -> tuple[float, float, bool]:
    """Pearson r with a two-sided p from the t transform (m-2 dof).

    A constant input gives ``(0, 1, False)``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc, yc = x - x.mean(), y - y.mean()
    den = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if den == 0:
        return 0.0, 1.0, False
    r = max(-1.0, min(1.0, float(xc @ yc) / den))
    dof = len(x) - 2
    if dof <= 0:
        return r, float("nan"), True
    if abs(r) >= 1.0:
        return r, 0.0, True
    t = r * math.sqrt(dof / (1.0 - r * r))
    return r, float(2.0 * stats.t.sf(abs(t), dof)), True


@dataclass
class DimensionFit:
    label: str
    w: np.ndarray
    lambda_star: float
    cv_curve: np.ndarray
    yhat: np.ndarray
    yhat_refit: np.ndarray
    pearson_r: float
    p_value: float
    r_refit: float
    p_refit: float
    converged: bool = True
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "weights": self.w.tolist(),
            "lambda_star": self.lambda_star,
            "cv_curve": self.cv_curve.tolist(),
            "pearson_r": self.pearson_r,
            "p_value": self.p_value,
            "pearson_r_refit": self.r_refit,
            "p_value_refit": self.p_refit,
            "converged": self.converged,
            "flags": self.flags,
        }


@dataclass
class RegressionFit:
    dims: list[DimensionFit]
    grid: np.ndarray
    folds: int
    seed: int

    @property
    def W(self) -> np.ndarray:
        return np.stack([f.w for f in self.dims], axis=1)

    @property
    def yhat(self) -> np.ndarray:
        return np.stack([f.yhat for f in self.dims], axis=1)

    @property
    def r(self) -> np.ndarray:
        return np.array([f.pearson_r for f in self.dims])


def fit_all_dims(
    O,
    Y,
    labels: Sequence[str] | None = None,
    grid: Sequence[float] | None = None,
    folds: int = 2,
    seed: int = 0,
) -> RegressionFit:
    """CV-select ``lam`` and refit on all rows, for every column of ``Y``.

    ``O`` rows must already be aligned with ``Y`` rows.  The reported
    correlation uses the out-of-fold prediction; the in-sample refit
    correlation is kept alongside.
    """
    if isinstance(Y, TargetMatrix):
        labels = Y.dims if labels is None else labels
        Y = Y.Y
    O = np.asarray(O, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if O.shape[0] != Y.shape[0]:
        raise ValueError(f"row mismatch: O has {O.shape[0]} rows, Y has {Y.shape[0]}")
    labels = list(labels) if labels is not None else [f"dim_{j + 1}" for j in range(Y.shape[1])]
    grid = default_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    out = []
    for j, label in enumerate(labels):
        y = Y[:, j]
        flags: list[str] = []
        try:
            sel = cv_lambda(O, y, grid, folds, seed)
            fit = nonneg_lasso(O, y, sel.lambda_star)
        except (ValueError, FloatingPointError) as exc:
            log.warning("dimension %s failed: %s", label, exc)
            nan = np.full(len(y), np.nan)
            out.append(DimensionFit(label, np.full(O.shape[1], np.nan), float("nan"), np.array([]),
                                    nan, nan, float("nan"), float("nan"), float("nan"), float("nan"),
                                    False, [f"failed: {exc}"]))
            continue
        r, p, ok = pearson(y, sel.yhat)
        if not ok:
            flags.append("constant out-of-fold prediction")
        refit = O @ fit.w
        r2, p2, ok2 = pearson(y, refit)
        if not ok2:
            flags.append("constant refit prediction")
        if not fit.converged:
            flags.append("lasso not converged")
        out.append(DimensionFit(label, fit.w, sel.lambda_star, sel.cv_curve, sel.yhat, refit,
                                r, p, r2, p2, fit.converged, flags))
    return RegressionFit(out, grid, folds, seed)


class BestMatch(NamedTuple):
    index: np.ndarray
    r: np.ndarray
    flagged: np.ndarray


def correlation_matrix(A: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pearson r between every column of A and every column of B (0 where undefined)."""
    Ac = A - A.mean(axis=0)
    Bc = B - B.mean(axis=0)
    an = np.linalg.norm(Ac, axis=0)
    bn = np.linalg.norm(Bc, axis=0)
    den = np.outer(an, bn)
    R = np.zeros((A.shape[1], B.shape[1]))
    np.divide(Ac.T @ Bc, den, out=R, where=den > 0)
    return np.clip(R, -1.0, 1.0), an == 0, bn == 0


def best_match_correlation(Y, O) -> BestMatch:
    """For each target column, the embedding column with the highest Pearson r."""
    Y = np.asarray(Y.Y if isinstance(Y, TargetMatrix) else Y, dtype=np.float64)
    O = np.asarray(O, dtype=np.float64)
    if Y.shape[0] != O.shape[0]:
        raise ValueError(f"row mismatch: Y has {Y.shape[0]} rows, O has {O.shape[0]}")
    R, y_const, o_const = correlation_matrix(Y, O)
    idx = np.argmax(R, axis=1)
    best = R[np.arange(R.shape[0]), idx]
    flagged = y_const | o_const[idx]
    return BestMatch(idx, best, flagged)


def spose_verb_assignment(yhat, fp: FactorPair, rows: Sequence[int] | None = None) -> list[VerbRanking | None]:
    """Rank verbs for each predicted target dimension by cosine to ``O V^T`` columns.

    ``rows`` selects the objects of ``fp`` that ``yhat`` rows correspond to.
    All-zero prediction columns yield ``None``.
    """
    Yt = np.maximum(np.asarray(yhat, dtype=np.float64), 0.0)
    O = fp.O if rows is None else fp.O[np.asarray(rows)]
    if Yt.shape[0] != O.shape[0]:
        raise ValueError(f"row mismatch: prediction has {Yt.shape[0]} rows, embedding {O.shape[0]}")
    S = column_cosine(Yt, O, fp.V)
    out: list[VerbRanking | None] = []
    for h in range(Yt.shape[1]):
        if not Yt[:, h].any():
            log.warning("prediction column %d is all zero; no verb ranking", h)
            out.append(None)
        else:
            out.append(rank_scores(S[h], h))
    return out


def contribution_analysis(w, O) -> np.ndarray:
    """Percent share of ``w_i * ||O[:, i]||`` per embedding dimension."""
    w = np.asarray(w, dtype=np.float64)
    if (w < 0).any():
        raise ValueError("weights must be non-negative")
    c = w * np.linalg.norm(np.asarray(O, dtype=np.float64), axis=0)
    total = c.sum()
    return 100.0 * c / total if total > 0 else np.zeros_like(c)
