import pytest

from nsmp.kg import TripleStore


@pytest.fixture
def toy_store() -> TripleStore:
    """The 4-entity graph used throughout: r links A to B and C, s links B and C to D."""
    return TripleStore(
        ["A", "B", "C", "D"],
        ["r", "s"],
        {(0, 0, 1), (0, 0, 2), (1, 1, 3), (2, 1, 3)},
    )


@pytest.fixture
def toy_tsv(tmp_path):
    path = tmp_path / "toy.tsv"
    path.write_text("A\tr\tB\nA\tr\tC\nB\ts\tD\nC\ts\tD\n", encoding="utf-8")
    return str(path)
