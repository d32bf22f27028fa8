import pytest

from ontotrain.datasets import load_pretrain_corpus
from ontotrain.model import ModelConfig
from ontotrain.smiles_tok import build_vocabulary
from ontotrain.synthetic import fixture_path


@pytest.fixture(scope="session")
def toy_corpus():
    return list(load_pretrain_corpus(fixture_path("toy_corpus.smi")))


@pytest.fixture(scope="session")
def vocab(toy_corpus):
    return build_vocabulary(toy_corpus, 100)


@pytest.fixture
def tiny_config(vocab):
    return ModelConfig(vocab_size=len(vocab), hidden=16, heads=2, layers=2, max_len=64,
                       embed_dropout=0.0, hidden_dropout=0.0)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for reports in terminalreporter.stats.values():
        for rep in reports:
            if getattr(rep, "when", None) == "call":
                lines += [value for key, value in getattr(rep, "user_properties", ()) if key == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
