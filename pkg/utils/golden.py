"""
Golden-file regression helpers.

A golden is a one-column-per-array CSV under tests/golden/. Goldens are
recorded only when BACKSTEP_UPDATE_GOLDEN=true.
"""

import logging
import os
from pathlib import Path
from typing import Dict

import numpy as np

logger = logging.getLogger('Backstep.Golden')

GOLDEN_DIR = Path(__file__).resolve().parent.parent / "tests" / "golden"


def update_requested() -> bool:
    return os.getenv("BACKSTEP_UPDATE_GOLDEN", "false").lower() == "true"


def record_golden(name: str, arrays: Dict[str, np.ndarray], directory: Path = GOLDEN_DIR) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{name}.csv"
    np.savetxt(path, np.column_stack(list(arrays.values())), fmt="%.17g",
               delimiter=",", header=",".join(arrays), comments="")
    logger.info(f"Recorded golden {path}")
    return path


def compare_golden(name: str, arrays: Dict[str, np.ndarray], rtol: float = 1e-10,
                   atol: float = 1e-12, directory: Path = GOLDEN_DIR) -> bool:
    """Compare against the stored golden.

    Returns False when BACKSTEP_UPDATE_GOLDEN=true re-recorded it instead.
    Raises AssertionError on a mismatch or when the golden file is missing.
    """
    path = directory / f"{name}.csv"
    if update_requested():
        record_golden(name, arrays, directory)
        return False
    if not path.exists():
        raise AssertionError(f"golden {path} is missing; record it with BACKSTEP_UPDATE_GOLDEN=true")
    stored = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip().split(",")
    if header != list(arrays):
        raise AssertionError(f"golden {name} has columns {header}, expected {list(arrays)}")
    for k, (column, values) in enumerate(arrays.items()):
        np.testing.assert_allclose(values, stored[:, k], rtol=rtol, atol=atol,
                                   err_msg=f"golden {name}, column {column}")
    return True
