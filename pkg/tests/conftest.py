import numpy as np
import pytest

from factspace import WordTable


@pytest.fixture
def toy_table() -> WordTable:
    """3-d table with axis-aligned and mixed unit vectors."""
    vectors = {
        "dog": np.array([1.0, 0.0, 0.0]),
        "cat": np.array([0.0, 1.0, 0.0]),
        "running": np.array([0.0, 0.0, 1.0]),
        "fast": np.array([0.6, 0.8, 0.0]),
        "ball": np.array([0.0, 0.6, 0.8]),
    }
    return WordTable(3, vectors)


@pytest.fixture
def word_table_file(tmp_path):
    """Writer for ad-hoc word-table text files."""

    def _write(lines, name="words.txt"):
        path = tmp_path / name
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    return _write


@pytest.fixture
def dataset_file(tmp_path):
    """Writer for ad-hoc JSON-lines dataset files."""
    import json

    def _write(header, records, name="dataset.jsonl"):
        path = tmp_path / name
        lines = [json.dumps(header)] + [json.dumps(r) for r in records]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    return _write
