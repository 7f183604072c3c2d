"""Pytest fixtures for the converter tests; the data lives in conftest_data."""

from __future__ import annotations

from pathlib import Path

import pytest

from conftest_data import write_formula_archive, write_tuple_archive


@pytest.fixture
def tuple_archive(tmp_path: Path) -> Path:
    """Archive in the tuple-structured layout, with all three splits."""
    return write_tuple_archive(tmp_path / "tuple_src")


@pytest.fixture
def formula_archive(tmp_path: Path) -> Path:
    """Archive in the string-formula layout (test split only)."""
    return write_formula_archive(tmp_path / "formula_src")


@pytest.fixture
def converted_kg(tuple_archive: Path, tmp_path: Path) -> Path:
    """Output directory with the kg step already run."""
    from nsmp_convert.convert import convert_kg

    out = tmp_path / "dataset"
    convert_kg(tuple_archive, out)
    return out
