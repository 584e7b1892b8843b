from importlib.resources import files

import pytest

from batchgemba.dataset import Dataset, EvalBatch, load_dataset
from batchgemba.mqm import ErrorSpan, TranslationExample

SAMPLE_PATH = files("batchgemba") / "data" / "sample_dataset.jsonl"


def make_example(i=0, source="Der Hund schläft.", target="The dog sleeps.", lp=("de", "en"), score=0.0, spans=()):
    return TranslationExample(f"ex{i}", lp[0], lp[1], source, target, score, tuple(spans))


def make_batch(examples, batch_id="b0"):
    examples = tuple(examples)
    return EvalBatch(batch_id, examples[0].lang_pair, examples)


@pytest.fixture(scope="session")
def sample():
    return load_dataset(SAMPLE_PATH)


@pytest.fixture
def tiny_batch():
    return make_batch(
        [
            make_example(0, target="The dog sleeps.", score=-1.0,
                         spans=[ErrorSpan("target", 8, 14, "minor", "fluency/grammar")]),
            make_example(1, source="Die Katze frisst.", target="The cat eats.", score=0.0),
            make_example(2, source="Es regnet heute.", target="It snows today.", score=-5.0,
                         spans=[ErrorSpan("target", 3, 8, "major", "accuracy/mistranslation")]),
        ]
    )


def dataset_of(examples, name="t"):
    return Dataset(tuple(examples), name=name)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
