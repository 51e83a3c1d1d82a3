"""Console entry point.

Caps the BLAS thread pools at one thread before anything numeric is
imported: comparison CSVs must come out byte-identical no matter how many
cores the host exposes, and threaded factorizations reorder float sums.
The cap applies only to CLI processes; library imports keep their own
settings.
"""

from __future__ import annotations

import os
import sys


def main(argv: list[str] | None = None) -> int:
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = "1"
    from .cli import run_cli

    return run_cli(argv)


if __name__ == "__main__":
    sys.exit(main())
