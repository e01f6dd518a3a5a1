import pytest

WORD_POOL = (
    "the", "a", "blue", "shark", "with", "sharp", "teeth", "can", "eat",
    "fish", "quickly", "remarkable", "encyclopedia", "under", "brightly",
    "seventeen", "murmuring", "rivers", "and", "ancient", "lighthouse",
    "keepers", "whisper", "implausible", "stories",
)


@pytest.fixture(scope="session")
def corpus_lines() -> list[str]:
    """100 deterministic sentences with varied lengths and punctuation."""
    lines = []
    for k in range(100):
        n = 3 + (k % 9)
        words = [WORD_POOL[(k * 7 + j * 3) % len(WORD_POOL)]
                 for j in range(n)]
        if k % 4 == 0:
            words[0] = words[0].capitalize()
        tail = "." if k % 3 else "!"
        sep = ", " if k % 5 == 0 and n > 4 else " "
        lines.append(sep.join(words) + tail)
    return lines


@pytest.fixture
def corpus_file(tmp_path, corpus_lines):
    path = tmp_path / "corpus.txt"
    path.write_text("\n".join(corpus_lines) + "\n", encoding="utf-8")
    return path
