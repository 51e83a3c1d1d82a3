"""Straggler-aware scheduling of coded matrix multiplication on shared workers.

Multiple masters outsource matrix-vector products to a common pool of
heterogeneous workers with shifted-exponential response times. MDS coding
lets a master decode from any large-enough subset of coded rows, so the
scheduling problem is who serves whom and how many rows each pair gets.

Modules
    model       problem instances, assignments, schedules, delay model
    lambertw    real lower-branch Lambert W
    allocation  closed-form optimal loads for one master's worker set
    dedicated   greedy / brute-force dedicated assignment and baselines
    sca         probabilistic assignment via successive convex surrogates
    subproblem  barrier Newton solver for one convexified subproblem
    simulation  reproducible Monte Carlo of completion times
    serialize   instance / schedule JSON and result CSVs
    cli         command-line front end

Importing this package is deliberately side-effect free and light; pull in
the submodules you need (several import numpy/scipy on first use).
"""

__version__ = "0.1.0"

__all__ = [
    "allocation",
    "cli",
    "dedicated",
    "lambertw",
    "model",
    "sca",
    "serialize",
    "simulation",
    "subproblem",
]
