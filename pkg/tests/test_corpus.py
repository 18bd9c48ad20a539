import gzip
import io
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afford.corpus import (
    APPLICATION_RELATIONS,
    ConlluError,
    LabeledMatrix,
    ParsedToken,
    VocabIndex,
    extract_pairs,
    load_vocab,
    normalize_entry,
    read_conllu,
    read_conllu_files,
    read_triplets,
    write_triplets,
)


class TestLoadVocab:
    def test_case_fold_and_dedup(self, tmp_path):
        p = tmp_path / "v.txt"
        p.write_text("Boil\neat\nboil\n")
        v = load_vocab(p)
        assert v.entries == ["boil", "eat"]
        assert v.duplicates == 1

    def test_internal_whitespace_becomes_separator(self, tmp_path):
        p = tmp_path / "n.txt"
        p.write_text("ice cream\n")
        v = load_vocab(p)
        assert v.entries == ["ice_cream"]
        assert v.id_of["ice_cream"] == 0

    def test_empty_file(self, tmp_path):
        p = tmp_path / "e.txt"
        p.write_text("")
        with pytest.raises(ValueError, match="empty vocabulary"):
            load_vocab(p)

    def test_unreadable(self, tmp_path):
        with pytest.raises(OSError):
            load_vocab(tmp_path / "missing.txt")

    def test_gzip(self, tmp_path):
        p = tmp_path / "v.txt.gz"
        with gzip.open(p, "wt", encoding="utf-8") as fh:
            fh.write("a\nb\n")
        assert load_vocab(p).entries == ["a", "b"]

    @given(st.lists(st.text(alphabet="abcXYZ ", min_size=1, max_size=8), min_size=1, max_size=20))
    def test_invariants(self, lines):
        if not any(line.strip() for line in lines):
            return
        v = VocabIndex.from_iterable(lines)
        assert len(set(v.entries)) == len(v.entries)
        for i, e in enumerate(v.entries):
            assert v.id_of[e] == i
            assert e and " " not in e


class TestReadConllu:
    def test_two_sentences(self):
        text = "1\ta\ta\tNOUN\t_\t_\t0\troot\t_\t_\n\n1\tb\tb\tNOUN\t_\t_\t0\troot\t_\t_\n"
        assert len(list(read_conllu(io.StringIO(text)))) == 2

    def test_wrong_column_count_names_line(self):
        text = "# c\n1\ta\ta\tNOUN\t_\t_\t0\troot\t_\n"
        with pytest.raises(ConlluError, match="line 2"):
            list(read_conllu(io.StringIO(text)))

    def test_non_integer_head(self):
        text = "1\ta\ta\tNOUN\t_\t_\tx\troot\t_\t_\n"
        with pytest.raises(ConlluError, match="HEAD"):
            list(read_conllu(io.StringIO(text)))

    def test_comment_only(self):
        assert list(read_conllu(io.StringIO("# a\n# b\n"))) == []

    def test_skips_ranges_and_empty_nodes(self):
        text = (
            "1-2\tdu\t_\t_\t_\t_\t_\t_\t_\t_\n"
            "1\tde\tde\tADP\t_\t_\t2\tcase\t_\t_\n"
            "2\tle\tle\tDET\t_\t_\t0\troot\t_\t_\n"
            "2.1\tx\tx\tX\t_\t_\t_\t_\t_\t_\n\n"
        )
        (sent,) = read_conllu(io.StringIO(text))
        assert [t.token_id for t in sent] == [1, 2]

    def test_head_outside_sentence(self):
        text = "1\ta\ta\tNOUN\t_\t_\t5\tobj\t_\t_\n\n"
        with pytest.raises(ConlluError):
            list(read_conllu(io.StringIO(text)))

    def test_fields(self, four_sentences):
        sents = list(read_conllu(io.StringIO(four_sentences)))
        assert len(sents) == 4
        assert sents[1][1] == ParsedToken(1, 2, "potato", "NOUN", 4, "nsubj:pass")


def _sentence(*rows):
    return "".join("\t".join(map(str, r)) + "\n" for r in rows) + "\n"


def _matrix(text, nouns, verbs):
    nv = VocabIndex.from_iterable(nouns)
    vv = VocabIndex.from_iterable(verbs)
    return extract_pairs(read_conllu(io.StringIO(text)), nv, vv)


class TestExtractPairs:
    def test_active_object(self):
        text = _sentence(
            (1, "He", "he", "PRON", "_", "_", 2, "nsubj", "_", "_"),
            (2, "boiled", "boil", "VERB", "_", "_", 0, "root", "_", "_"),
            (3, "the", "the", "DET", "_", "_", 4, "det", "_", "_"),
            (4, "potato", "potato", "NOUN", "_", "_", 2, "obj", "_", "_"),
        )
        M = _matrix(text, ["potato"], ["boil"])
        assert M.toarray().tolist() == [[1]]

    def test_passive_subject(self):
        text = _sentence(
            (1, "The", "the", "DET", "_", "_", 2, "det", "_", "_"),
            (2, "potato", "potato", "NOUN", "_", "_", 4, "nsubj:pass", "_", "_"),
            (3, "was", "be", "AUX", "_", "_", 4, "aux:pass", "_", "_"),
            (4, "boiled", "boil", "VERB", "_", "_", 0, "root", "_", "_"),
        )
        assert _matrix(text, ["potato"], ["boil"]).toarray().tolist() == [[1]]

    def test_active_subject_not_counted(self):
        text = _sentence(
            (1, "potato", "potato", "NOUN", "_", "_", 2, "nsubj", "_", "_"),
            (2, "boiled", "boil", "VERB", "_", "_", 0, "root", "_", "_"),
        )
        M = _matrix(text, ["potato"], ["boil"])
        assert M.matrix.nnz == 0

    def test_aux_head_excluded(self):
        text = _sentence(
            (1, "have", "have", "AUX", "_", "_", 0, "root", "_", "_"),
            (2, "potato", "potato", "NOUN", "_", "_", 1, "obj", "_", "_"),
        )
        assert _matrix(text, ["potato"], ["have"]).matrix.nnz == 0

    def test_lemma_case_insensitive(self):
        text = _sentence(
            (1, "Boil", "Boil", "VERB", "_", "_", 0, "root", "_", "_"),
            (2, "Potato", "POTATO", "NOUN", "_", "_", 1, "obj", "_", "_"),
        )
        assert _matrix(text, ["potato"], ["boil"]).toarray().tolist() == [[1]]

    def test_bigram_merge(self, four_sentences, small_vocab):
        nouns, verbs = small_vocab
        M = extract_pairs(read_conllu(io.StringIO(four_sentences)), nouns, verbs)
        A = M.toarray()
        assert A[nouns.id_of["ice_cream"], verbs.id_of["eat"]] == 1
        assert A[nouns.id_of["cream"]].sum() == 0
        assert A[nouns.id_of["potato"], verbs.id_of["boil"]] == 2
        assert A[nouns.id_of["apple"], verbs.id_of["peel"]] == 1
        assert A[nouns.id_of["cook"]].sum() == 0
        assert M.matrix.nnz == 3

    def test_bigram_off(self, four_sentences, small_vocab):
        nouns, verbs = small_vocab
        M = extract_pairs(read_conllu(io.StringIO(four_sentences)), nouns, verbs, merge_bigrams=False)
        assert M.toarray()[nouns.id_of["cream"], verbs.id_of["eat"]] == 1

    def test_coordination_counts_each_edge(self):
        # "chop and fry the onion" parsed with obj edges from both verbs
        text = _sentence(
            (1, "chop", "chop", "VERB", "_", "_", 0, "root", "_", "_"),
            (2, "and", "and", "CCONJ", "_", "_", 3, "cc", "_", "_"),
            (3, "fry", "fry", "VERB", "_", "_", 1, "conj", "_", "_"),
            (4, "the", "the", "DET", "_", "_", 5, "det", "_", "_"),
            (5, "onion", "onion", "NOUN", "_", "_", 3, "obj", "_", "_"),
        )
        assert _matrix(text, ["onion"], ["chop", "fry"]).toarray().tolist() == [[0, 1]]


def _random_corpus(rnd: random.Random, n_sent: int, nouns, verbs) -> list[list[ParsedToken]]:
    rels = ["obj", "nsubj:pass", "nsubj", "obl", "compound"]
    upos = ["VERB", "VERB", "AUX", "NOUN"]
    sents = []
    for s in range(n_sent):
        n = rnd.randint(1, 8)
        toks = []
        for t in range(1, n + 1):
            head = rnd.choice([0] + [h for h in range(1, n + 1) if h != t])
            lemma = rnd.choice(nouns + verbs + ["the", "ice"])
            toks.append(ParsedToken(s, t, lemma, rnd.choice(upos), head, rnd.choice(rels)))
        sents.append(toks)
    return sents


def _brute_force_mass(sents, nouns, verbs):
    """Count qualifying edges by direct scan, without bigram merging."""
    total = 0
    for sent in sents:
        for tok in sent:
            if tok.deprel not in APPLICATION_RELATIONS or tok.head == 0:
                continue
            head = [h for h in sent if h.token_id == tok.head][0]
            if head.upos == "VERB" and head.lemma in verbs and tok.lemma in nouns:
                total += 1
    return total


class TestExtractProperties:
    nouns = ["potato", "onion", "apple"]
    verbs = ["boil", "fry", "peel"]

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_total_mass_matches_brute_force(self, seed):
        rnd = random.Random(seed)
        sents = _random_corpus(rnd, rnd.randint(1, 50), self.nouns, self.verbs)
        M = extract_pairs(sents, VocabIndex(self.nouns), VocabIndex(self.verbs), merge_bigrams=False)
        assert M.matrix.sum() == _brute_force_mass(sents, self.nouns, self.verbs)
        assert np.all(M.matrix.data > 0)
        assert M.matrix.data.dtype.kind == "i"

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_order_insensitive(self, seed):
        rnd = random.Random(seed)
        sents = _random_corpus(rnd, 30, self.nouns, self.verbs)
        nv, vv = VocabIndex(self.nouns), VocabIndex(self.verbs)
        a = extract_pairs(sents, nv, vv).toarray()
        rnd.shuffle(sents)
        b = extract_pairs(sents, nv, vv).toarray()
        assert np.array_equal(a, b)

    def test_partial_matrices_merge_exactly(self):
        rnd = random.Random(7)
        sents = _random_corpus(rnd, 40, self.nouns, self.verbs)
        nv, vv = VocabIndex(self.nouns), VocabIndex(self.verbs)
        whole = extract_pairs(sents, nv, vv).toarray()
        parts = sum(extract_pairs(sents[i::4], nv, vv).toarray() for i in range(4))
        assert np.array_equal(whole, parts)


class TestTriplets:
    def test_roundtrip(self, tmp_path, four_sentences, small_vocab):
        nouns, verbs = small_vocab
        M = extract_pairs(read_conllu(io.StringIO(four_sentences)), nouns, verbs)
        p = tmp_path / "counts.tsv"
        write_triplets(p, M, comments=["config=abc"])
        lines = p.read_text().splitlines()
        assert lines[0] == "#rows=5 cols=3"
        assert len([ln for ln in lines if not ln.startswith("#")]) == 3
        back = read_triplets(p, nouns, verbs, dtype=np.int64)
        assert np.array_equal(back.toarray(), M.toarray())

    def test_header_mismatch(self, tmp_path):
        p = tmp_path / "c.tsv"
        p.write_text("#rows=2 cols=2\na\tb\t1\n")
        with pytest.raises(ValueError, match="header"):
            read_triplets(p)

    def test_labeled_matrix_shape_check(self):
        with pytest.raises(ValueError):
            LabeledMatrix(np.zeros((2, 2)), VocabIndex(["a"]), VocabIndex(["b", "c"]))

    def test_gzip_corpus(self, tmp_path, four_sentences):
        p = tmp_path / "c.conllu.gz"
        with gzip.open(p, "wt", encoding="utf-8") as fh:
            fh.write(four_sentences)
        assert len(list(read_conllu_files([p]))) == 4


def test_normalize_entry():
    assert normalize_entry("  Ice\tCream ") == "ice_cream"
