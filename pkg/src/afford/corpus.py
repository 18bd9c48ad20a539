"""Vocabulary loading, CoNLL-U reading and verb-application counting.

A *verb application* is a dependency edge from a verb to a noun where the noun
is the direct object (``obj``) or the passive subject (``nsubj:pass``) of the
verb.  Counting such edges (rather than window co-occurrences) yields the raw
noun-by-verb count matrix that the rest of the pipeline consumes.
"""

from __future__ import annotations

import logging
import os
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import IO, Callable, Iterable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp

from afford.io import atomic_write_text, open_text

log = logging.getLogger(__name__)

SEPARATOR = "_"
APPLICATION_RELATIONS = frozenset({"obj", "nsubj:pass"})
HEAD_UPOS = "VERB"

_WS = re.compile(r"\s+")


class ConlluError(ValueError):
    """Malformed CoNLL-U input; the message names the offending line."""


def normalize_entry(text: str) -> str:
    """Lowercase and join internal whitespace with the bigram separator."""
    return SEPARATOR.join(_WS.split(text.strip().lower()))


@dataclass
class VocabIndex:
    entries: list[str]
    id_of: dict[str, int] = field(default_factory=dict)
    duplicates: int = 0

    def __post_init__(self):
        if not self.id_of:
            self.id_of = {e: i for i, e in enumerate(self.entries)}
        if len(self.id_of) != len(self.entries):
            raise ValueError("vocabulary entries must be unique")
        for e in self.entries:
            if not e or _WS.search(e):
                raise ValueError(f"invalid vocabulary entry {e!r}")

    @classmethod
    def from_iterable(cls, items: Iterable[str]) -> "VocabIndex":
        entries: list[str] = []
        seen: set[str] = set()
        dups = 0
        for raw in items:
            if not raw.strip():
                continue
            e = normalize_entry(raw)
            if e in seen:
                dups += 1
                continue
            seen.add(e)
            entries.append(e)
        if not entries:
            raise ValueError("empty vocabulary")
        return cls(entries, duplicates=dups)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, item: str) -> bool:
        return item in self.id_of

    def __getitem__(self, i: int) -> str:
        return self.entries[i]

    def subset(self, ids: Sequence[int]) -> "VocabIndex":
        return VocabIndex([self.entries[i] for i in ids])

    @property
    def multiword(self) -> list[str]:
        return [e for e in self.entries if SEPARATOR in e]


def load_vocab(path: str | os.PathLike) -> VocabIndex:
    """Read one entry per line; duplicates are collapsed and counted in ``.duplicates``."""
    with open_text(path) as fh:
        vocab = VocabIndex.from_iterable(fh)
    if vocab.duplicates:
        log.warning("%s: collapsed %d duplicate entries", path, vocab.duplicates)
    return vocab


@dataclass(frozen=True)
class ParsedToken:
    sentence_id: int
    token_id: int
    lemma: str
    upos: str
    head: int
    deprel: str


def read_conllu(stream: IO[str] | Iterable[str]) -> Iterator[list[ParsedToken]]:
    """Yield sentences as lists of tokens.

    Multiword-token ranges (``3-4``) and empty nodes (``3.1``) are skipped.
    Comment lines start with ``#``; sentences are separated by blank lines.
    """
    sent: list[ParsedToken] = []
    sid = 0
    start_line = 0

    def finish() -> list[ParsedToken]:
        ids = {t.token_id for t in sent}
        for t in sent:
            if t.head != 0 and t.head not in ids:
                raise ConlluError(
                    f"sentence starting at line {start_line}: token {t.token_id} "
                    f"has head {t.head} outside the sentence"
                )
        return sent

    for lineno, line in enumerate(stream, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            if sent:
                yield finish()
                sent = []
                sid += 1
            continue
        if line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise ConlluError(f"line {lineno}: expected 10 tab-separated columns, got {len(cols)}")
        tid = cols[0]
        if "-" in tid or "." in tid:
            continue
        try:
            token_id = int(tid)
        except ValueError:
            raise ConlluError(f"line {lineno}: non-integer ID {tid!r}") from None
        try:
            head = int(cols[6])
        except ValueError:
            raise ConlluError(f"line {lineno}: non-integer HEAD {cols[6]!r}") from None
        if not sent:
            start_line = lineno
        sent.append(ParsedToken(sid, token_id, cols[2], cols[3], head, cols[7]))
    if sent:
        yield finish()


def read_conllu_files(paths: Iterable[str | os.PathLike]) -> Iterator[list[ParsedToken]]:
    for path in paths:
        with open_text(path) as fh:
            yield from read_conllu(fh)


@dataclass
class LabeledMatrix:
    """Sparse non-negative noun-by-verb matrix (counts or PPMI) with its labels."""

    matrix: sp.csr_matrix
    rows: VocabIndex
    cols: VocabIndex

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix)
        m.eliminate_zeros()
        m.sort_indices()
        self.matrix = m
        if m.shape != (len(self.rows), len(self.cols)):
            raise ValueError(
                f"matrix shape {m.shape} does not match labels ({len(self.rows)}, {len(self.cols)})"
            )
        if m.nnz and m.data.min() < 0:
            raise ValueError("matrix must be non-negative")

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def zero_rows(self) -> list[int]:
        return np.flatnonzero(np.diff(self.matrix.indptr) == 0).tolist()

    def zero_cols(self) -> list[int]:
        counts = np.bincount(self.matrix.indices, minlength=self.shape[1])
        return np.flatnonzero(counts == 0).tolist()


def _noun_for(tok: ParsedToken, prev: ParsedToken | None, nouns: VocabIndex, merge_bigrams: bool):
    lemma = normalize_entry(tok.lemma)
    if merge_bigrams and prev is not None:
        joined = f"{normalize_entry(prev.lemma)}{SEPARATOR}{lemma}"
        if joined in nouns:
            return nouns.id_of[joined]
    return nouns.id_of.get(lemma)


def sentence_pairs(
    sentence: Sequence[ParsedToken], nouns: VocabIndex, verbs: VocabIndex, merge_bigrams: bool = True
) -> Iterator[tuple[int, int]]:
    """Yield ``(noun_id, verb_id)`` for every qualifying edge in one sentence."""
    by_id = {t.token_id: t for t in sentence}
    for tok in sentence:
        if tok.deprel.lower() not in APPLICATION_RELATIONS or tok.head == 0:
            continue
        head = by_id[tok.head]
        if head.upos != HEAD_UPOS:
            continue
        verb = verbs.id_of.get(normalize_entry(head.lemma))
        if verb is None:
            continue
        noun = _noun_for(tok, by_id.get(tok.token_id - 1), nouns, merge_bigrams)
        if noun is not None:
            yield noun, verb


def extract_pairs(
    sentences: Iterable[Sequence[ParsedToken]],
    nouns: VocabIndex,
    verbs: VocabIndex,
    merge_bigrams: bool = True,
) -> LabeledMatrix:
    """Count verb applications to nouns across all sentences.

    With ``merge_bigrams`` a token whose lemma joined to the preceding lemma
    forms a multiword noun entry (``ice`` + ``cream`` -> ``ice_cream``) is
    counted as that entry instead of its own lemma.  Each qualifying edge counts
    once, so a noun shared by coordinated verbs counts toward each verb.
    """
    if not len(nouns) or not len(verbs):
        raise ValueError("empty vocabulary")
    counts: Counter[tuple[int, int]] = Counter()
    for sentence in sentences:
        counts.update(sentence_pairs(sentence, nouns, verbs, merge_bigrams))
    return counts_to_matrix(counts, nouns, verbs)


def counts_to_matrix(counts: Counter, nouns: VocabIndex, verbs: VocabIndex) -> LabeledMatrix:
    if counts:
        keys = np.array(list(counts.keys()), dtype=np.int64)
        vals = np.fromiter(counts.values(), dtype=np.int64, count=len(counts))
        mat = sp.csr_matrix((vals, (keys[:, 0], keys[:, 1])), shape=(len(nouns), len(verbs)))
    else:
        mat = sp.csr_matrix((len(nouns), len(verbs)), dtype=np.int64)
    return LabeledMatrix(mat, nouns, verbs)


def write_triplets(
    path: str | os.PathLike,
    lm: LabeledMatrix,
    fmt: Callable[[float], str] = lambda v: str(int(v)),
    comments: Sequence[str] = (),
) -> None:
    """Write ``noun<TAB>verb<TAB>value`` lines under a ``#rows=<m> cols=<n>`` header."""
    m, n = lm.shape
    lines = [f"#rows={m} cols={n}"]
    lines += [f"#{c}" for c in comments]
    coo = lm.matrix.tocoo()
    for i, k, v in zip(coo.row, coo.col, coo.data):
        lines.append(f"{lm.rows[i]}\t{lm.cols[k]}\t{fmt(v)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_triplets(
    path: str | os.PathLike,
    rows: VocabIndex | None = None,
    cols: VocabIndex | None = None,
    dtype=np.float64,
) -> LabeledMatrix:
    """Read a triplet file written by :func:`write_triplets`.

    Without vocabularies the labels are taken from the triplets in order of
    first appearance, which only works when no row or column is empty.
    """
    header = None
    trip: list[tuple[str, str, str]] = []
    with open_text(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                if header is None and line.startswith("#rows="):
                    header = dict(part.split("=", 1) for part in line[1:].split())
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}: line {lineno}: expected 3 columns")
            trip.append((parts[0], parts[1], parts[2]))
    if header is None:
        raise ValueError(f"{path}: missing '#rows=<m> cols=<n>' header")
    if rows is None:
        rows = VocabIndex(list(dict.fromkeys(t[0] for t in trip)))
    if cols is None:
        cols = VocabIndex(list(dict.fromkeys(t[1] for t in trip)))
    if (int(header["rows"]), int(header["cols"])) != (len(rows), len(cols)):
        raise ValueError(
            f"{path}: header says {header['rows']}x{header['cols']} but labels give "
            f"{len(rows)}x{len(cols)}"
        )
    if trip:
        r = np.array([rows.id_of[t[0]] for t in trip])
        c = np.array([cols.id_of[t[1]] for t in trip])
        v = np.array([float(t[2]) for t in trip], dtype=dtype)
        mat = sp.csr_matrix((v, (r, c)), shape=(len(rows), len(cols)))
    else:
        mat = sp.csr_matrix((len(rows), len(cols)), dtype=dtype)
    return LabeledMatrix(mat, rows, cols)
