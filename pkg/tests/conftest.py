"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from codedsched.cli import generate_instance
from codedsched.model import ProblemInstance


def random_instance(
    seed: int,
    num_masters: int = 2,
    num_workers: int = 20,
    required_rows: int = 100_000,
) -> ProblemInstance:
    """Rates uniform on [1, 5] 1/ms, shifts reciprocal, like the benchmarks."""
    return generate_instance(
        num_masters, num_workers, (1.0, 5.0), "reciprocal", required_rows, seed
    )


@pytest.fixture
def tiny_instance() -> ProblemInstance:
    """Hand-sized M=2, N=4 instance with round numbers."""
    u = np.array([[1.0, 2.0, 4.0, 0.5], [2.0, 1.0, 3.0, 5.0]])
    return ProblemInstance(
        num_masters=2,
        num_workers=4,
        straggle_rate=u,
        shift_per_row=1.0 / u,
        required_rows=np.array([500, 800]),
        task_cols=np.array([1, 1]),
    )
