"""Verb rankings for objects and their evaluation against affordance datasets.

An object's verb scores are ``O[i, :] @ S`` where ``S[h, k]`` is the cosine
between embedding dimension ``O[:, h]`` and column ``k`` of the reconstruction
``O V^T``.  Rankings are scored with AAUC, the mean of ``1 - rank/n`` over the
object's ground-truth verbs.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np
from scipy import stats

from afford.corpus import LabeledMatrix, VocabIndex, normalize_entry
from afford.io import open_text
from afford.nmf import FactorPair

log = logging.getLogger(__name__)

ScoreFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class SimilarityMatrix:
    S: np.ndarray
    dims: np.ndarray
    dropped: list[int] = field(default_factory=list)


@dataclass
class VerbRanking:
    object_id: int | str | None
    scores: np.ndarray
    order: np.ndarray

    @property
    def positions(self) -> np.ndarray:
        """1-based rank of every verb index."""
        pos = np.empty(len(self.order), dtype=np.int64)
        pos[self.order] = np.arange(1, len(self.order) + 1)
        return pos

    def top(self, k: int) -> np.ndarray:
        return self.order[:k]


def rank_scores(scores, object_id=None) -> VerbRanking:
    """Order by descending score; equal scores keep ascending verb index."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    return VerbRanking(object_id, scores, order)


def column_cosine(E: np.ndarray, O: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Cosine between each column of ``E`` and each column of ``O V^T``.

    ``O V^T`` is never formed: its column norms come from ``V (O^T O) V^T``.
    Zero-norm columns on either side give 0.
    """
    num = (E.T @ O) @ V.T
    G = O.T @ O
    pnorm = np.sqrt(np.maximum(np.einsum("kd,kd->k", V @ G, V), 0.0))
    enorm = np.linalg.norm(E, axis=0)
    den = np.outer(enorm, pnorm)
    S = np.zeros_like(num)
    np.divide(num, den, out=S, where=den > 0)
    return np.clip(S, 0.0, 1.0)


def similarity_matrix(fp: FactorPair) -> SimilarityMatrix:
    O, V = fp.O, fp.V
    if O.shape[1] != V.shape[1]:
        raise ValueError(f"dimension mismatch: O has {O.shape[1]} columns, V has {V.shape[1]}")
    norms = np.linalg.norm(O, axis=0)
    keep = np.flatnonzero(norms > 0)
    dropped = np.flatnonzero(norms == 0).tolist()
    if dropped:
        log.warning("dropping %d all-zero embedding dimensions: %s", len(dropped), dropped)
    return SimilarityMatrix(column_cosine(O[:, keep], O, V), keep, dropped)


def object_verb_ranking(fp: FactorPair, S: SimilarityMatrix, i: int) -> VerbRanking:
    if not 0 <= i < fp.O.shape[0]:
        raise IndexError(f"object index {i} out of range [0, {fp.O.shape[0]})")
    return rank_scores(fp.O[i, S.dims] @ S.S, i)


def aauc(ranking: VerbRanking, truth: Iterable[int]) -> float:
    truth = sorted(set(int(t) for t in truth))
    if not truth:
        raise ValueError("empty truth set")
    n = len(ranking.order)
    if truth[0] < 0 or truth[-1] >= n:
        raise ValueError(f"truth verb index out of range [0, {n})")
    pos = ranking.positions[truth]
    return float(np.mean(1.0 - pos / n))


def max_aauc(K: int, n: int) -> float:
    """Best attainable AAUC: truths occupy ranks 1..K."""
    return 1.0 - (K + 1) / (2.0 * n)


def ppmi_row_ranking(P, i: int) -> VerbRanking:
    mat = P.matrix if isinstance(P, LabeledMatrix) else P
    if not 0 <= i < mat.shape[0]:
        raise IndexError(f"object index {i} out of range [0, {mat.shape[0]})")
    row = mat[i].toarray().ravel() if hasattr(mat, "toarray") else np.asarray(mat[i], dtype=float)
    return rank_scores(row, i)


def _cosines(u: np.ndarray, X: np.ndarray) -> np.ndarray:
    xn = np.linalg.norm(X, axis=1)
    out = np.full(X.shape[0], -np.inf)
    ok = xn > 0
    out[ok] = (X[ok] @ u) / (xn[ok] * np.linalg.norm(u))
    return out


def baseline_cosine_ranking(noun_vector, verb_vectors, object_id=None) -> VerbRanking:
    """Rank verbs by cosine to the noun vector; zero-norm verb vectors sort last."""
    u = np.asarray(noun_vector, dtype=np.float64)
    X = np.asarray(verb_vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != u.shape[0]:
        raise ValueError(f"dimension mismatch: noun {u.shape}, verbs {X.shape}")
    if not np.linalg.norm(u) > 0:
        raise ValueError("zero-norm noun vector")
    return rank_scores(_cosines(u, X), object_id)


def load_word_vectors(path: str | os.PathLike, keep: Iterable[str] | None = None) -> tuple[dict[str, np.ndarray], int]:
    """Read ``token v1 ... vD`` lines; tokens outside ``keep`` are skipped and counted.

    A leading word2vec ``<count> <dim>`` header line is ignored.
    """
    wanted = set(keep) if keep is not None else None
    vectors: dict[str, np.ndarray] = {}
    skipped = 0
    dim = None
    with open_text(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip().split(" ")
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue
            if len(parts) < 2:
                continue
            tok = normalize_entry(parts[0])
            if (wanted is not None and tok not in wanted) or tok in vectors:
                skipped += 1
                continue
            vec = np.asarray(parts[1:], dtype=np.float64)
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise ValueError(f"{path}: line {lineno}: expected {dim} values, got {len(vec)}")
            vectors[tok] = vec
    if skipped:
        log.info("%s: skipped %d vectors", path, skipped)
    return vectors, skipped


def load_truth_table(path: str | os.PathLike, cutoff: float = 5.0) -> dict[str, set[str]]:
    """Read ``object<TAB>verb[<TAB>score]``; rows with a score below ``cutoff`` are dropped."""
    truth: dict[str, set[str]] = {}
    with open_text(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if lineno == 1 and parts[0].strip().lower() == "object":
                continue
            if len(parts) not in (2, 3):
                raise ValueError(f"{path}: line {lineno}: expected 2 or 3 columns")
            if len(parts) == 3 and float(parts[2]) < cutoff:
                continue
            truth.setdefault(normalize_entry(parts[0]), set()).add(normalize_entry(parts[1]))
    return truth


@dataclass
class AaucReport:
    name: str
    objects: list[str]
    values: np.ndarray
    n: int
    K: list[int]
    skipped_no_truth: list[str] = field(default_factory=list)
    skipped_unscored: list[str] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values)) if len(self.values) else float("nan")

    def by_object(self) -> dict[str, float]:
        return dict(zip(self.objects, self.values.tolist()))

    def histogram(self, bins: int = 20) -> tuple[np.ndarray, np.ndarray]:
        counts, edges = np.histogram(self.values, bins=bins, range=(0.0, 1.0))
        return edges, counts

    def summary(self) -> dict:
        return {
            "method": self.name,
            "mean_aauc": self.mean,
            "n_objects": len(self.objects),
            "n_verbs": self.n,
            "mean_truth_per_object": float(np.mean(self.K)) if self.K else 0.0,
            "skipped_no_truth": len(self.skipped_no_truth),
            "skipped_unscored": len(self.skipped_unscored),
        }


def evaluate_dataset(
    score_fn: ScoreFn,
    truth: Mapping[str, set[str]],
    nouns: VocabIndex,
    verbs: VocabIndex,
    name: str = "",
) -> AaucReport:
    """AAUC per object after restricting objects and verbs to the vocabulary overlap.

    ``score_fn(object_ids, verb_ids)`` returns a score matrix over the overlap;
    rows of NaN mark objects the method cannot score.  The ranking length ``n``
    is the number of overlapping verbs.
    """
    all_verbs = set().union(*truth.values()) if truth else set()
    verb_ids = np.array(sorted(verbs.id_of[v] for v in all_verbs if v in verbs), dtype=np.int64)
    obj_ids = np.array(sorted(nouns.id_of[o] for o in truth if o in nouns), dtype=np.int64)
    if len(verb_ids) == 0 or len(obj_ids) == 0:
        raise ValueError(
            f"empty intersection: truth table has {len(truth)} objects and {len(all_verbs)} verbs; "
            f"vocabularies have {len(nouns)} nouns and {len(verbs)} verbs"
        )
    local = {int(v): j for j, v in enumerate(verb_ids)}
    scores = np.asarray(score_fn(obj_ids, verb_ids), dtype=np.float64)
    objects, values, Ks, no_truth, unscored = [], [], [], [], []
    for row, oid in enumerate(obj_ids):
        label = nouns[oid]
        tset = [local[verbs.id_of[v]] for v in truth[label] if v in verbs and verbs.id_of[v] in local]
        if not tset:
            no_truth.append(label)
            continue
        if np.isnan(scores[row]).any():
            unscored.append(label)
            continue
        objects.append(label)
        values.append(aauc(rank_scores(scores[row], label), tset))
        Ks.append(len(tset))
    return AaucReport(name, objects, np.array(values), len(verb_ids), Ks, no_truth, unscored)


def model_scorer(fp: FactorPair) -> ScoreFn:
    """Verb scores from the embedding reduced to the evaluated objects and verbs."""

    def score(obj_ids, verb_ids):
        O = fp.O[obj_ids]
        V = fp.V[verb_ids]
        keep = np.flatnonzero(np.linalg.norm(O, axis=0) > 0)
        S = column_cosine(O[:, keep], O, V)
        return O[:, keep] @ S

    return score


def ppmi_scorer(P: LabeledMatrix) -> ScoreFn:
    def score(obj_ids, verb_ids):
        return P.matrix[obj_ids][:, verb_ids].toarray()

    return score


def frequency_scorer(counts: LabeledMatrix) -> ScoreFn:
    """Object-independent ranking by total verb frequency."""
    freq = np.asarray(counts.matrix.sum(axis=0), dtype=np.float64).ravel()

    def score(obj_ids, verb_ids):
        return np.tile(freq[verb_ids], (len(obj_ids), 1))

    return score


def embedding_scorer(vectors: Mapping[str, np.ndarray], nouns: VocabIndex, verbs: VocabIndex) -> ScoreFn:
    """Cosine baseline over external word vectors; nouns without a vector are unscored."""
    dim = len(next(iter(vectors.values())))

    def score(obj_ids, verb_ids):
        X = np.stack([vectors.get(verbs[k], np.zeros(dim)) for k in verb_ids])
        out = np.full((len(obj_ids), len(verb_ids)), np.nan)
        for r, i in enumerate(obj_ids):
            u = vectors.get(nouns[i])
            if u is not None and np.linalg.norm(u) > 0:
                out[r] = _cosines(u, X)
        return out

    return score


def paired_ttest(a, b) -> tuple[float, float]:
    """Two-sided paired t-test on ``a - b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size < 2:
        raise ValueError("paired t-test needs at least 2 pairs")
    diff = a - b
    sd = diff.std(ddof=1)
    if sd == 0 or not math.isfinite(sd):
        raise ValueError("degenerate t-test")
    t = diff.mean() / (sd / math.sqrt(diff.size))
    p = 2.0 * stats.t.sf(abs(t), df=diff.size - 1)
    return float(t), float(p)


def compare_reports(a: AaucReport, b: AaucReport) -> dict:
    """Paired t-test of two methods over the objects both could score."""
    bv = b.by_object()
    common = [o for o in a.objects if o in bv]
    av = a.by_object()
    x = np.array([av[o] for o in common])
    y = np.array([bv[o] for o in common])
    try:
        t, p = paired_ttest(x, y)
    except ValueError as exc:
        t, p = float("nan"), float("nan")
        log.warning("t-test %s vs %s: %s", a.name, b.name, exc)
    return {"a": a.name, "b": b.name, "n_objects": len(common), "t": t, "p": p}
