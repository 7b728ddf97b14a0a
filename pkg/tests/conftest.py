import numpy as np
import pytest

from mgfi_tvr.embeddings import AudioEmbedding, Item, TextEmbedding, VideoEmbedding

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_items(rng, n, dim, frames=(1, 5), words=(1, 5), audio_every=1):
    items = []
    for i in range(n):
        nf = int(rng.integers(frames[0], frames[1] + 1))
        nw = int(rng.integers(words[0], words[1] + 1))
        audio = rng.normal(size=dim) if audio_every and i % audio_every == 0 else None
        items.append(
            Item(
                f"x{i:03d}",
                VideoEmbedding(rng.normal(size=(nf, dim))),
                TextEmbedding(rng.normal(size=dim), rng.normal(size=(nw, dim))),
                AudioEmbedding(audio),
            )
        )
    return items


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_items(rng):
    return make_items(rng, 6, 8, audio_every=2)
