"""Sparse non-negative factorization ``P ~ O V^T`` with masked multiplicative updates.

The objective minimized by :func:`masked_nmf` is::

    F(O, V) = ||M_t * (P - O V^T)||_F^2 + beta * (sum(O) + sum(V))

where ``M_t`` is a 0/1 training mask (all ones for a plain fit).  Rank ``d`` and
sparsity weight ``beta`` are chosen by holding out whole row-by-column blocks of
``P`` (:func:`make_block_masks`) and scoring their reconstruction.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from afford.corpus import VocabIndex
from afford.io import atomic_write_json, atomic_write_text, fmt_float

log = logging.getLogger(__name__)

EPS = 1e-12


class NmfDivergenceError(ArithmeticError):
    pass


@dataclass
class FactorPair:
    O: np.ndarray
    V: np.ndarray
    beta: float
    d: int
    seed: int = 0
    iterations_run: int = 0
    objective_trace: list[float] = field(default_factory=list)
    init: str = "nndsvd"
    converged: bool = False

    @property
    def objective(self) -> float:
        return self.objective_trace[-1] if self.objective_trace else float("nan")

    def reconstruct(self) -> np.ndarray:
        return self.O @ self.V.T

    def metadata(self) -> dict:
        return {
            "d": self.d,
            "beta": self.beta,
            "seed": self.seed,
            "init": self.init,
            "iterations": self.iterations_run,
            "converged": self.converged,
            "final_objective": self.objective,
        }


@dataclass(frozen=True)
class HoldoutMask:
    row_group: np.ndarray
    col_group: np.ndarray
    held_out_blocks: tuple[int, ...]
    K: int
    q: int
    seed: int

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.row_group), len(self.col_group)

    def validation(self) -> np.ndarray:
        """Dense 0/1 held-out mask ``M_v``."""
        held = np.asarray(self.held_out_blocks)
        same = self.row_group[:, None] == self.col_group[None, :]
        return (same & np.isin(self.row_group, held)[:, None]).astype(np.float64)

    def training(self) -> np.ndarray:
        return 1.0 - self.validation()


def _dense(P) -> np.ndarray:
    if hasattr(P, "matrix"):
        P = P.matrix
    if sp.issparse(P):
        return P.toarray().astype(np.float64)
    return np.asarray(P, dtype=np.float64)


def nndsvd_init(P, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Non-negative double SVD start (Boutsidis & Gallopoulos).

    The leading singular pair is non-negative up to sign; for each later pair
    the dominant of its positive or negative sections is kept.  Zeros are left
    as exact zeros, which multiplicative updates preserve.
    """
    A = _dense(P)
    m, n = A.shape
    if not 1 <= d <= min(m, n):
        raise ValueError(f"d={d} out of range [1, {min(m, n)}]")
    if not (A > 0).any():
        raise ValueError("P has no positive entry")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    W = np.zeros((m, d))
    H = np.zeros((n, d))
    W[:, 0] = math.sqrt(s[0]) * np.abs(U[:, 0])
    H[:, 0] = math.sqrt(s[0]) * np.abs(Vt[0])
    for j in range(1, d):
        x, y = U[:, j], Vt[j]
        xp, xn = np.maximum(x, 0), np.maximum(-x, 0)
        yp, yn = np.maximum(y, 0), np.maximum(-y, 0)
        xpn, ypn = np.linalg.norm(xp), np.linalg.norm(yp)
        xnn, ynn = np.linalg.norm(xn), np.linalg.norm(yn)
        pos, neg = xpn * ypn, xnn * ynn
        if pos >= neg:
            u, v, sigma = (xp / xpn, yp / ypn, pos) if pos > 0 else (None, None, 0.0)
        else:
            u, v, sigma = xn / xnn, yn / ynn, neg
        if sigma > 0:
            scale = math.sqrt(s[j] * sigma)
            W[:, j] = scale * u
            H[:, j] = scale * v
    return W, H


def make_block_masks(m: int, n: int, K: int = 10, q: int = 1, seed: int = 0) -> HoldoutMask:
    """Shuffle rows and columns into ``K`` balanced groups and hold out ``q`` diagonal blocks."""
    if K < 2:
        raise ValueError("K must be at least 2")
    if not 1 <= q < K:
        raise ValueError(f"q must satisfy 1 <= q < K, got q={q}, K={K}")
    if K > m or K > n:
        raise ValueError(f"K={K} exceeds matrix shape ({m}, {n})")
    rng = np.random.default_rng(seed)
    row_group = np.empty(m, dtype=np.int64)
    row_group[rng.permutation(m)] = np.arange(m) % K
    col_group = np.empty(n, dtype=np.int64)
    col_group[rng.permutation(n)] = np.arange(n) % K
    held = tuple(sorted(int(k) for k in rng.choice(K, size=q, replace=False)))
    return HoldoutMask(row_group, col_group, held, K, q, seed)


def _validation_array(mask, shape) -> np.ndarray:
    if mask is None:
        return np.zeros(shape)
    if isinstance(mask, HoldoutMask):
        Mv = mask.validation()
    else:
        Mv = np.asarray(mask, dtype=np.float64)
    if Mv.shape != shape:
        raise ValueError(f"mask shape {Mv.shape} does not match {shape}")
    return Mv


def objective(P, O, V, beta: float, train_mask: np.ndarray | None = None) -> float:
    A = _dense(P)
    R = A - O @ V.T
    if train_mask is not None:
        R *= train_mask
    return float(np.sum(R * R) + beta * (O.sum() + V.sum()))


def masked_nmf(
    P,
    mask: HoldoutMask | None = None,
    d: int = 10,
    beta: float = 0.0,
    max_iter: int = 2000,
    tol: float = 1e-6,
    init: str | tuple[np.ndarray, np.ndarray] = "nndsvd",
    seed: int = 0,
    window: int = 10,
) -> FactorPair:
    """Fit ``O, V >= 0`` on the training cells of ``mask`` (all cells if None).

    Updates (``W`` the training mask, ``*`` and ``/`` element-wise)::

        O <- O * (W*P) V   / ((W*(O V^T)) V   + beta/2)
        V <- V * (W*P)^T O / ((W*(O V^T))^T O + beta/2)

    ``beta/2`` is the Lee-Seung step for F as written (the squared loss has no
    1/2 factor), which makes ``objective_trace`` provably non-increasing.
    Iteration stops after ``max_iter`` or when F dropped by less than ``tol``
    (relative) over the last ``window`` iterations.
    """
    A = _dense(P)
    if (A < 0).any():
        raise ValueError("P must be non-negative")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    m, n = A.shape
    train = None
    if mask is not None:
        train = mask.training() if isinstance(mask, HoldoutMask) else np.asarray(mask, dtype=np.float64)
        if train.shape != A.shape:
            raise ValueError(f"mask shape {train.shape} does not match {A.shape}")
    WP = A if train is None else train * A

    if isinstance(init, tuple):
        O, V = (np.array(x, dtype=np.float64) for x in init)
        init_name = "custom"
    elif init == "nndsvd":
        O, V = nndsvd_init(WP, d)
        init_name = "nndsvd"
    elif init == "random":
        rng = np.random.default_rng(seed)
        scale = math.sqrt(max(WP.mean(), EPS) / d)
        O = rng.uniform(0.0, scale, size=(m, d))
        V = rng.uniform(0.0, scale, size=(n, d))
        init_name = "random"
    else:
        raise ValueError(f"unknown init {init!r}")
    if O.shape != (m, d) or V.shape != (n, d):
        raise ValueError("initial factors have the wrong shape")

    den = beta / 2.0 if beta > 0 else EPS

    def residual_mass(R: np.ndarray) -> float:
        D = WP - (R if train is None else train * R)
        return float(np.sum(D * D))

    R = O @ V.T
    trace = [residual_mass(R) + beta * (O.sum() + V.sum())]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        WR = R if train is None else train * R
        O *= (WP @ V) / (WR @ V + den)
        R = O @ V.T
        WR = R if train is None else train * R
        V *= (WP.T @ O) / (WR.T @ O + den)
        R = O @ V.T
        f = residual_mass(R) + beta * (O.sum() + V.sum())
        if not math.isfinite(f):
            raise NmfDivergenceError(
                f"non-finite objective at iteration {it} (d={d}, beta={beta}, init={init_name}); "
                f"last finite value {trace[-1]!r}"
            )
        trace.append(f)
        if it >= window:
            ref = trace[-1 - window]
            if ref == 0 or (ref - f) < tol * abs(ref):
                converged = True
                break
    return FactorPair(O, V, float(beta), d, seed, it, trace, init_name, converged)


def reconstruction_error(P, O, V, mask, beta: float = 0.0) -> float:
    """Held-out error ``||M_v * (P - O V^T)||_F^2 + beta * (sum(O) + sum(V))``.

    ``mask`` is a :class:`HoldoutMask` or an explicit 0/1 ``M_v`` array.
    """
    A = _dense(P)
    if O.shape[0] != A.shape[0] or V.shape[0] != A.shape[1] or O.shape[1] != V.shape[1]:
        raise ValueError(f"shape mismatch: P {A.shape}, O {O.shape}, V {V.shape}")
    return heldout_residual(A, O, V, mask) + beta * float(O.sum() + V.sum())


def heldout_residual(P, O, V, mask) -> float:
    """Unpenalized squared residual on the held-out cells."""
    A = _dense(P)
    Mv = _validation_array(mask, A.shape)
    D = Mv * (A - O @ V.T)
    return float(np.sum(D * D))


@dataclass
class CvReport:
    grid: list[tuple[int, float]]
    errors: list[list[float]]
    residuals: list[list[float]]
    selected: tuple[int, float]
    K: int
    q: int
    restarts: int
    seed: int
    mask_seeds: list[int]
    excluded: list[tuple[int, float]] = field(default_factory=list)

    @property
    def mean_errors(self) -> list[float]:
        out = []
        for errs in self.errors:
            ok = [e for e in errs if math.isfinite(e)]
            out.append(float(np.mean(ok)) if ok else float("nan"))
        return out

    def to_dict(self) -> dict:
        return {
            "grid": [{"d": d, "beta": b} for d, b in self.grid],
            "errors": self.errors,
            "heldout_residuals": self.residuals,
            "mean_errors": self.mean_errors,
            "selected": {"d": self.selected[0], "beta": self.selected[1]},
            "excluded": [{"d": d, "beta": b} for d, b in self.excluded],
            "K": self.K,
            "q": self.q,
            "restarts": self.restarts,
            "seed": self.seed,
            "mask_seeds": self.mask_seeds,
        }


def _restart_seed(seed: int, r: int) -> int:
    return int(np.random.SeedSequence([seed, r]).generate_state(1)[0])


def cv_grid(
    P,
    d_list: Sequence[int],
    beta_list: Sequence[float],
    K: int = 10,
    q: int = 1,
    restarts: int = 5,
    seed: int = 0,
    max_iter: int = 2000,
    tol: float = 1e-6,
    init: str = "nndsvd",
    n_jobs: int = 1,
) -> CvReport:
    """Block hold-out cross-validation over every ``(d, beta)`` pair.

    Restart ``r`` draws its mask from a seed derived from ``(seed, r)``; all grid
    cells share the restart's mask, so cells are compared on the same held-out
    blocks.  The cell with the lowest mean held-out error wins, ties going to
    smaller ``d`` then smaller ``beta``.
    """
    if not d_list or not beta_list:
        raise ValueError("empty grid")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    A = _dense(P)
    m, n = A.shape
    grid = [(int(d), float(b)) for d in d_list for b in beta_list]
    mask_seeds = [_restart_seed(seed, r) for r in range(restarts)]
    masks = [make_block_masks(m, n, K, q, s) for s in mask_seeds]

    def run(job: tuple[int, int]) -> tuple[float, float]:
        c, r = job
        d, beta = grid[c]
        try:
            fp = masked_nmf(A, masks[r], d, beta, max_iter, tol, init, seed=mask_seeds[r])
        except (NmfDivergenceError, ValueError) as exc:
            log.warning("cv cell d=%d beta=%g restart %d failed: %s", d, beta, r, exc)
            return float("nan"), float("nan")
        res = heldout_residual(A, fp.O, fp.V, masks[r])
        return res + beta * float(fp.O.sum() + fp.V.sum()), res

    jobs = [(c, r) for c in range(len(grid)) for r in range(restarts)]
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    errors = [[results[c * restarts + r][0] for r in range(restarts)] for c in range(len(grid))]
    residuals = [[results[c * restarts + r][1] for r in range(restarts)] for c in range(len(grid))]
    report = CvReport(grid, errors, residuals, (0, 0.0), K, q, restarts, seed, mask_seeds)
    means = report.mean_errors
    candidates = []
    for cell, mean in zip(grid, means):
        if math.isfinite(mean):
            candidates.append((mean, cell[0], cell[1]))
        else:
            log.warning("cv cell d=%d beta=%g excluded: all restarts failed", *cell)
            report.excluded.append(cell)
    if not candidates:
        raise NmfDivergenceError("every grid cell failed")
    _, d_star, b_star = min(candidates)
    report.selected = (d_star, b_star)
    return report


def factorize(
    P,
    d: int,
    beta: float,
    restarts: int = 5,
    seed: int = 0,
    max_iter: int = 2000,
    tol: float = 1e-6,
    init: str = "nndsvd",
) -> FactorPair:
    """Full-data fit keeping the restart with the lowest final objective.

    With ``init="nndsvd"`` restart 0 starts from NNDSVD and the remaining
    restarts from seeded uniform random factors.
    """
    best: FactorPair | None = None
    for r in range(restarts):
        s = _restart_seed(seed, r)
        how = init if (init != "nndsvd" or r == 0) else "random"
        fp = masked_nmf(P, None, d, beta, max_iter, tol, how, seed=s)
        if best is None or fp.objective < best.objective:
            best = fp
    assert best is not None
    return best


def _write_factor_tsv(path: Path, X: np.ndarray, labels: VocabIndex, head: str, comment: str) -> None:
    lines = [f"#{comment}"] if comment else []
    lines.append("\t".join([head] + [f"D{j + 1}" for j in range(X.shape[1])]))
    for label, row in zip(labels.entries, X):
        lines.append("\t".join([label] + [fmt_float(v) for v in row]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _read_factor_tsv(path: Path) -> tuple[np.ndarray, VocabIndex]:
    labels, rows = [], []
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip() and not ln.startswith("#")]
    for ln in lines[1:]:
        parts = ln.split("\t")
        labels.append(parts[0])
        rows.append([float(x) for x in parts[1:]])
    width = len(lines[0].split("\t")) - 1
    return np.array(rows, dtype=np.float64).reshape(len(rows), width), VocabIndex(labels)


def write_factors(
    outdir: str | os.PathLike,
    fp: FactorPair,
    nouns: VocabIndex,
    verbs: VocabIndex,
    extra: dict | None = None,
) -> None:
    """Persist as ``O.tsv``, ``V.tsv`` and a ``factors.json`` sidecar."""
    outdir = Path(outdir)
    comment = f"config={extra['config_hash']}" if extra and "config_hash" in extra else ""
    _write_factor_tsv(outdir / "O.tsv", fp.O, nouns, "object", comment)
    _write_factor_tsv(outdir / "V.tsv", fp.V, verbs, "verb", comment)
    meta = fp.metadata()
    meta["objective_trace"] = fp.objective_trace
    meta.update(extra or {})
    atomic_write_json(outdir / "factors.json", meta)


def read_factors(outdir: str | os.PathLike) -> tuple[FactorPair, VocabIndex, VocabIndex]:
    outdir = Path(outdir)
    O, nouns = _read_factor_tsv(outdir / "O.tsv")
    V, verbs = _read_factor_tsv(outdir / "V.tsv")
    meta = json.loads((outdir / "factors.json").read_text(encoding="utf-8"))
    fp = FactorPair(
        O,
        V,
        float(meta["beta"]),
        int(meta["d"]),
        int(meta["seed"]),
        int(meta["iterations"]),
        list(meta.get("objective_trace", [])),
        meta.get("init", "nndsvd"),
        bool(meta.get("converged", False)),
    )
    return fp, nouns, verbs
