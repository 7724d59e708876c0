import pytest

from minibert.synthetic import synthetic_corpus
from minibert.vocab import induce_vocabulary


@pytest.fixture(scope="session")
def small_corpus():
    return synthetic_corpus(60, seed=3)


@pytest.fixture(scope="session")
def small_vocab(small_corpus):
    return induce_vocabulary(small_corpus, 200)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record():
    """Record one acceptance line; the test still asserts on its own."""

    def _record(criterion: int, ok: bool, detail: str) -> None:
        line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
