import pytest

from toxvae import fixture
from toxvae.smiles import build_vocabulary


def read_smiles(name):
    lines = fixture(name).read_text(encoding="utf-8").splitlines()
    return [s for s in lines if s.strip() and not s.startswith("#")]


@pytest.fixture(scope="session")
def corpus():
    return read_smiles("corpus_1000.smi")


@pytest.fixture(scope="session")
def corpus_vocab(corpus):
    return build_vocabulary(corpus, max_length=64)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(line)
