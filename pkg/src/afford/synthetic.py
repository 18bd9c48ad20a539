"""Planted-structure generators and a small on-disk fixture corpus."""

from __future__ import annotations

import gzip
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from afford.corpus import LabeledMatrix, VocabIndex


def planted_factors(m: int, n: int, d: int, density: float = 0.3, rng=None) -> tuple[np.ndarray, np.ndarray]:
    """Sparse non-negative factors; every row loads on at least one dimension."""
    rng = np.random.default_rng(rng)
    O = rng.uniform(0, 1, (m, d)) * (rng.uniform(size=(m, d)) < density)
    V = rng.uniform(0, 1, (n, d)) * (rng.uniform(size=(n, d)) < density)
    O[np.arange(m), rng.integers(0, d, m)] += 1.0
    V[np.arange(n), rng.integers(0, d, n)] += 1.0
    return O, V


def planted_matrix(m: int = 120, n: int = 160, d: int = 5, noise_sd: float = 0.1, rng=None) -> np.ndarray:
    """``O* V*^T + |N(0, noise_sd^2)|``."""
    rng = np.random.default_rng(rng)
    O, V = planted_factors(m, n, d, rng=rng)
    return O @ V.T + np.abs(rng.normal(0.0, noise_sd, (m, n)))


@dataclass
class PlantedAffordances:
    counts: LabeledMatrix
    truth: dict[str, set[str]]
    active: np.ndarray
    verb_group: np.ndarray
    O: np.ndarray
    V: np.ndarray


def planted_affordances(
    m: int = 150,
    n: int = 200,
    d: int = 8,
    K: int = 5,
    rate: float = 3.0,
    background: float = 0.02,
    rng=None,
) -> PlantedAffordances:
    """Objects with one dominant mode of interaction each.

    Verbs are split into ``d`` groups; object ``i`` mostly takes verbs of its
    active group.  Counts are Poisson draws from the planted intensities plus a
    uniform background, so the count matrix sees only part of each object's
    verb group.  Each object's ``K`` truth verbs are drawn from its active group.
    """
    rng = np.random.default_rng(rng)
    active = rng.integers(0, d, m)
    verb_group = rng.permutation(np.arange(n) % d)
    O = np.zeros((m, d))
    O[np.arange(m), active] = rng.uniform(0.5, 1.5, m)
    second = rng.integers(0, d, m)
    O[np.arange(m), second] += rng.uniform(0.0, 0.3, m)
    V = np.zeros((n, d))
    V[np.arange(n), verb_group] = rng.uniform(0.3, 1.0, n)
    lam = rate * (O @ V.T) + background
    M = rng.poisson(lam)
    nouns = VocabIndex([f"noun{i}" for i in range(m)])
    verbs = VocabIndex([f"verb{k}" for k in range(n)])
    truth = {}
    for i in range(m):
        pool = np.flatnonzero(verb_group == active[i])
        pick = rng.choice(pool, size=min(K, len(pool)), replace=False)
        truth[nouns[i]] = {verbs[k] for k in pick}
    return PlantedAffordances(LabeledMatrix(sp.csr_matrix(M), nouns, verbs), truth, active, verb_group, O, V)


def _sentence(tokens: list[tuple[str, str, int, str]]) -> str:
    """tokens: (lemma, upos, head, deprel), ids assigned 1..n."""
    lines = []
    for tid, (lemma, upos, head, rel) in enumerate(tokens, start=1):
        lines.append("\t".join([str(tid), lemma, lemma, upos, "_", "_", str(head), rel, "_", "_"]))
    return "\n".join(lines) + "\n\n"


def _active(noun: list[str], verb: str) -> list[tuple[str, str, int, str]]:
    # "they <verb> the <noun...>"
    toks = [("they", "PRON", 2, "nsubj"), (verb, "VERB", 0, "root"), ("the", "DET", 3 + len(noun), "det")]
    for j, part in enumerate(noun):
        last = j == len(noun) - 1
        toks.append((part, "NOUN", 2 if last else 3 + len(noun), "obj" if last else "compound"))
    return toks


def _passive(noun: list[str], verb: str) -> list[tuple[str, str, int, str]]:
    # "the <noun...> was <verb>"
    k = len(noun)
    vpos = k + 3
    toks = [("the", "DET", k + 1, "det")]
    for j, part in enumerate(noun):
        last = j == k - 1
        toks.append((part, "NOUN", vpos if last else k + 1, "nsubj:pass" if last else "compound"))
    toks += [("be", "AUX", vpos, "aux:pass"), (verb, "VERB", 0, "root")]
    return toks


def _subject(noun: list[str], verb: str) -> list[tuple[str, str, int, str]]:
    # "the <noun...> <verb> it": active subject, not an application
    k = len(noun)
    vpos = k + 2
    toks = [("the", "DET", k + 1, "det")]
    for j, part in enumerate(noun):
        last = j == k - 1
        toks.append((part, "NOUN", vpos if last else k + 1, "nsubj" if last else "compound"))
    toks += [(verb, "VERB", 0, "root"), ("it", "PRON", vpos, "obj")]
    return toks


def write_fixture(outdir: str | os.PathLike, seed: int = 0, m: int = 40, n: int = 60, d: int = 4) -> dict[str, str]:
    """Write a small planted corpus plus every side input the pipeline reads.

    Returns a mapping of input role to file path.
    """
    rng = np.random.default_rng(seed)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    pa = planted_affordances(m=m, n=n, d=d, K=3, rate=2.0, background=0.01, rng=rng)
    M = pa.counts.toarray()
    noun_names = [f"noun{i}" for i in range(m)]
    noun_names[0] = "ice cream"
    verb_names = [f"verb{k}" for k in range(n)]

    chunks = []
    for i, k in zip(*np.nonzero(M)):
        parts = noun_names[i].split()
        for c in range(int(M[i, k])):
            build = _passive if (c + i + k) % 3 == 0 else _active
            chunks.append(_sentence(build(parts, verb_names[k])))
    for _ in range(m):
        i, k = rng.integers(0, m), rng.integers(0, n)
        chunks.append(_sentence(_subject(noun_names[i].split(), verb_names[k])))
    order = rng.permutation(len(chunks))
    half = len(order) // 2
    paths = {
        "corpus_a": str(outdir / "corpus_a.conllu"),
        "corpus_b": str(outdir / "corpus_b.conllu.gz"),
        "nouns": str(outdir / "nouns.txt"),
        "verbs": str(outdir / "verbs.txt"),
        "truth": str(outdir / "truth.tsv"),
        "vectors": str(outdir / "vectors.txt"),
        "targets": str(outdir / "targets.tsv"),
    }
    with open(paths["corpus_a"], "w", encoding="utf-8") as fh:
        fh.write("# synthetic fixture corpus\n")
        fh.writelines(chunks[j] for j in order[:half])
    with gzip.open(paths["corpus_b"], "wt", encoding="utf-8") as fh:
        fh.writelines(chunks[j] for j in order[half:])
    Path(paths["nouns"]).write_text("\n".join(noun_names) + "\n", encoding="utf-8")
    Path(paths["verbs"]).write_text("\n".join(verb_names) + "\n", encoding="utf-8")

    lines = ["object\tverb\tscore"]
    for i, name in enumerate(noun_names):
        tv = pa.truth[f"noun{i}"]
        for k in range(n):
            v = f"verb{k}"
            if v in tv:
                lines.append(f"{name}\t{v}\t5.0")
            elif rng.uniform() < 0.05:
                lines.append(f"{name}\t{v}\t{rng.choice([1.0, 2.0, 3.0, 4.0])}")
    Path(paths["truth"]).write_text("\n".join(lines) + "\n", encoding="utf-8")

    dim = 16
    vec_lines = [f"{m + n} {dim}"]
    for name in noun_names + verb_names:
        vec = rng.normal(size=dim)
        vec_lines.append(name.replace(" ", "_") + " " + " ".join(f"{x:.6f}" for x in vec))
    Path(paths["vectors"]).write_text("\n".join(vec_lines) + "\n", encoding="utf-8")

    W = rng.uniform(0, 1, (d, 3)) * (rng.uniform(size=(d, 3)) < 0.7)
    W[rng.integers(0, d, 3), np.arange(3)] += 0.5
    Y = pa.O @ W + np.abs(rng.normal(0, 0.05, (m, 3)))
    tlines = ["object\tanimal\tfood\ttool"]
    for i, name in enumerate(noun_names):
        tlines.append(name + "\t" + "\t".join(f"{x:.6f}" for x in Y[i]))
    tlines.append(noun_names[1] + "\t" + "\t".join(f"{x:.6f}" for x in Y[1] * 0.5))
    tlines.append("unknownthing\t1.0\t1.0\t1.0")
    Path(paths["targets"]).write_text("\n".join(tlines) + "\n", encoding="utf-8")
    return paths
