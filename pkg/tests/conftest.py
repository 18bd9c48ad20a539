import numpy as np
import pytest

from afford.corpus import VocabIndex

# token lines: ID FORM LEMMA UPOS XPOS FEATS HEAD DEPREL DEPS MISC
FOUR_SENTENCES = """\
# sent_id = 1
# text = He boiled the potato
1\tHe\the\tPRON\t_\t_\t2\tnsubj\t_\t_
2\tboiled\tboil\tVERB\t_\t_\t0\troot\t_\t_
3\tthe\tthe\tDET\t_\t_\t4\tdet\t_\t_
4\tpotato\tpotato\tNOUN\t_\t_\t2\tobj\t_\t_

# sent_id = 2
# text = The potato was boiled
1\tThe\tthe\tDET\t_\t_\t2\tdet\t_\t_
2\tpotato\tpotato\tNOUN\t_\t_\t4\tnsubj:pass\t_\t_
3\twas\tbe\tAUX\t_\t_\t4\taux:pass\t_\t_
4\tboiled\tboil\tVERB\t_\t_\t0\troot\t_\t_

# sent_id = 3
# text = She ate ice cream
1\tShe\tshe\tPRON\t_\t_\t2\tnsubj\t_\t_
2\tate\teat\tVERB\t_\t_\t0\troot\t_\t_
3\tice\tice\tNOUN\t_\t_\t4\tcompound\t_\t_
4\tcream\tcream\tNOUN\t_\t_\t2\tobj\t_\t_

# sent_id = 4
# text = The cook peeled the apple
1\tThe\tthe\tDET\t_\t_\t2\tdet\t_\t_
2\tcook\tcook\tNOUN\t_\t_\t3\tnsubj\t_\t_
3\tpeeled\tpeel\tVERB\t_\t_\t0\troot\t_\t_
4\tthe\tthe\tDET\t_\t_\t5\tdet\t_\t_
5\tapple\tapple\tNOUN\t_\t_\t3\tobj\t_\t_

"""

NOUNS = ["potato", "ice cream", "apple", "cook", "cream"]
VERBS = ["boil", "eat", "peel"]


@pytest.fixture
def four_sentences():
    return FOUR_SENTENCES


@pytest.fixture
def small_vocab():
    return VocabIndex.from_iterable(NOUNS), VocabIndex.from_iterable(VERBS)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        _ACCEPTANCE.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")
