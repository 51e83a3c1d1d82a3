"""Command-line front end: instances, policy runs, simulation, comparison.

Subcommands
    generate   draw a random instance and write it as JSON
    solve      run one assignment policy and print (optionally save) it
    simulate   Monte Carlo a saved schedule against its instance
    compare    run several policies, persist the comparison CSV
    sca-trace  dump the probabilistic solver's per-iteration deadline trace

Tables print times in seconds with two decimals; files keep milliseconds at
full precision. Every random draw is controlled by an explicit --seed.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass

import numpy as np

from . import serialize
from .dedicated import (
    brute_force,
    coded_uniform,
    iterated_greedy,
    simple_greedy,
    uncoded_uniform,
)
from .model import ProblemInstance, Schedule
from .sca import ScaConfig, ScaTrace, sca_solve
from .simulation import SimConfig, SimulationReport, simulate

POLICIES = (
    "uncoded",
    "coded-uniform",
    "greedy-simple",
    "greedy-iterated",
    "brute-force",
    "sca",
)
_DEFAULT_POLICIES = "uncoded,coded-uniform,greedy-simple,greedy-iterated,sca"


@dataclass(frozen=True)
class GeneratorSpec:
    """Random-instance recipe: rates uniform on u_range, shifts by rule."""

    num_masters: int
    num_workers: int
    u_range: tuple[float, float]
    shift_rule: str
    required_rows: int
    seed: int

    def __post_init__(self) -> None:
        lo, hi = self.u_range
        if not 0.0 < lo <= hi:
            raise ValueError("u_range must satisfy 0 < lo <= hi")
        if self.shift_rule != "reciprocal":
            raise ValueError(f"unknown shift rule {self.shift_rule!r}")
        if self.required_rows < 1:
            raise ValueError("required_rows must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    """One comparison run: where the instance comes from and what to do."""

    policies: tuple[str, ...]
    trials: int = 10_000
    sim_seed: int = 0
    out_path: str | None = None
    alpha: float = 1e-3
    tol: float = 1e-6
    instance_path: str | None = None
    generator: GeneratorSpec | None = None

    def __post_init__(self) -> None:
        if not self.policies:
            raise ValueError("at least one policy is required")
        unknown = [p for p in self.policies if p not in POLICIES]
        if unknown:
            raise ValueError(f"unknown policies: {', '.join(unknown)}")
        if len(set(self.policies)) != len(self.policies):
            raise ValueError("duplicate policy names")
        if (self.instance_path is None) == (self.generator is None):
            raise ValueError("need exactly one of instance_path or generator")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


@dataclass
class PolicyRun:
    """Outcome of one policy: schedule and report, or the failure message."""

    policy: str
    schedule: Schedule | None = None
    report: SimulationReport | None = None
    trace: ScaTrace | None = None
    error: str | None = None


@dataclass
class ExperimentResult:
    instance: ProblemInstance
    runs: list[PolicyRun]
    rows: list[tuple[str, str, float, float, int, int]]
    all_ok: bool


def generate_instance(
    num_masters: int,
    num_workers: int,
    u_range: tuple[float, float],
    shift_rule: str,
    required_rows: int,
    seed: int,
    out_path: str | None = None,
) -> ProblemInstance:
    """Draw rates uniformly on u_range per pair; shifts per the named rule."""
    spec = GeneratorSpec(
        num_masters, num_workers, u_range, shift_rule, required_rows, seed
    )
    rng = np.random.default_rng(spec.seed)
    u = rng.uniform(spec.u_range[0], spec.u_range[1], size=(num_masters, num_workers))
    a = 1.0 / u
    instance = ProblemInstance(
        num_masters=num_masters,
        num_workers=num_workers,
        straggle_rate=u,
        shift_per_row=a,
        required_rows=np.full(num_masters, spec.required_rows, dtype=np.int64),
        task_cols=np.ones(num_masters, dtype=np.int64),
        seed=spec.seed,
    )
    if out_path is not None:
        serialize.write_instance(instance, out_path)
    return instance


def _solve_policy(
    policy: str, instance: ProblemInstance, alpha: float, tol: float
) -> tuple[Schedule, ScaTrace | None]:
    if policy == "uncoded":
        return uncoded_uniform(instance), None
    if policy == "coded-uniform":
        return coded_uniform(instance), None
    if policy == "greedy-simple":
        return simple_greedy(instance).schedule(), None
    if policy == "greedy-iterated":
        return iterated_greedy(instance).schedule(), None
    if policy == "brute-force":
        return brute_force(instance).schedule(), None
    if policy == "sca":
        schedule, trace = sca_solve(
            instance, ScaConfig(alpha=alpha, convergence_tol=tol)
        )
        return schedule, trace
    raise ValueError(f"unknown policy {policy!r}")


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Solve and simulate every requested policy; failures don't abort the rest.

    Persists the comparison CSV (and the per-iteration deadline trace when
    sca is among the policies) if an output path is set.
    """
    if config.instance_path is not None:
        instance = serialize.read_instance(config.instance_path)
    else:
        gen = config.generator
        instance = generate_instance(
            gen.num_masters,
            gen.num_workers,
            gen.u_range,
            gen.shift_rule,
            gen.required_rows,
            gen.seed,
        )

    runs: list[PolicyRun] = []
    rows: list[tuple[str, str, float, float, int, int]] = []
    sim_config = SimConfig(trials=config.trials, rng_seed=config.sim_seed)
    for policy in config.policies:
        run = PolicyRun(policy=policy)
        try:
            run.schedule, run.trace = _solve_policy(
                policy, instance, config.alpha, config.tol
            )
            run.report = simulate(run.schedule, instance, sim_config)
        except Exception as err:
            run.error = f"{type(err).__name__}: {err}"
            runs.append(run)
            continue
        runs.append(run)
        for m in range(instance.num_masters):
            rows.append(
                (
                    policy,
                    str(m),
                    float(run.schedule.per_master_t[m]),
                    float(run.report.per_master_mean_completion[m]),
                    run.report.infeasible_trials,
                    config.trials,
                )
            )
        rows.append(
            (
                policy,
                "overall",
                run.schedule.t_approx,
                run.report.overall_mean_completion,
                run.report.infeasible_trials,
                config.trials,
            )
        )

    all_ok = all(run.error is None for run in runs)
    if config.out_path is not None:
        serialize.atomic_write_text(config.out_path, serialize.comparison_csv(rows))
        for run in runs:
            if run.trace is not None:
                serialize.atomic_write_text(
                    _trace_path(config.out_path), serialize.trace_csv(run.trace.t_values)
                )
    return ExperimentResult(instance=instance, runs=runs, rows=rows, all_ok=all_ok)


def _trace_path(out_path: str) -> str:
    stem, dot, suffix = out_path.rpartition(".")
    if not dot:
        return out_path + "_sca_trace.csv"
    return f"{stem}_sca_trace.{suffix}"


def _seconds(value_ms: float) -> str:
    if np.isnan(value_ms):
        return "-"
    return f"{value_ms / 1000.0:.2f}"


def _comparison_table(result: ExperimentResult) -> str:
    lines = [
        f"{'policy':<16} {'t_approx_s':>10} {'mean_s':>8} {'infeasible':>10} {'trials':>8}"
    ]
    for run in result.runs:
        if run.error is not None:
            lines.append(f"{run.policy:<16} failed: {run.error}")
            continue
        lines.append(
            f"{run.policy:<16} {_seconds(run.schedule.t_approx):>10}"
            f" {_seconds(run.report.overall_mean_completion):>8}"
            f" {run.report.infeasible_trials:>10} {run.report.trials_used:>8}"
        )
    return "\n".join(lines)


def _add_generator_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--masters", type=int, default=2, help="number of masters")
    parser.add_argument("--workers", type=int, default=20, help="number of workers")
    parser.add_argument(
        "--u-lo", type=float, default=1.0, help="lower straggle rate (1/ms)"
    )
    parser.add_argument(
        "--u-hi", type=float, default=5.0, help="upper straggle rate (1/ms)"
    )
    parser.add_argument(
        "--rows", type=int, default=100_000, help="required rows per master"
    )


def _add_solver_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--alpha", type=float, default=1e-3, help="sca step-size decay rate"
    )
    parser.add_argument(
        "--tol", type=float, default=1e-6, help="sca relative stop tolerance"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="codedsched",
        description="Coded-computation scheduling over shared workers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a random instance as JSON")
    _add_generator_args(gen)
    gen.add_argument("--seed", type=int, default=0, help="generator seed")
    gen.add_argument("--out", required=True, help="instance JSON path")

    solve = sub.add_parser("solve", help="run one policy on an instance")
    solve.add_argument("--instance", required=True, help="instance JSON path")
    solve.add_argument("--policy", required=True, choices=POLICIES)
    _add_solver_args(solve)
    solve.add_argument("--out", help="schedule JSON path")

    sim = sub.add_parser("simulate", help="Monte Carlo a saved schedule")
    sim.add_argument("--instance", required=True, help="instance JSON path")
    sim.add_argument("--schedule", required=True, help="schedule JSON path")
    sim.add_argument("--trials", type=int, default=10_000)
    sim.add_argument("--seed", type=int, default=0, help="simulation stream seed")

    comp = sub.add_parser("compare", help="run several policies, write CSV")
    comp.add_argument("--instance", help="instance JSON path (else generate)")
    _add_generator_args(comp)
    comp.add_argument(
        "--policies",
        default=_DEFAULT_POLICIES,
        help=f"comma-separated subset of: {', '.join(POLICIES)}",
    )
    comp.add_argument("--trials", type=int, default=10_000)
    comp.add_argument(
        "--seed",
        type=int,
        default=0,
        help="seed for both instance generation and simulation streams",
    )
    _add_solver_args(comp)
    comp.add_argument("--out", required=True, help="comparison CSV path")

    trace = sub.add_parser("sca-trace", help="dump per-iteration deadlines")
    trace.add_argument("--instance", required=True, help="instance JSON path")
    _add_solver_args(trace)
    trace.add_argument("--out", required=True, help="trace CSV path")

    return parser


def _cmd_generate(args: argparse.Namespace) -> int:
    instance = generate_instance(
        args.masters,
        args.workers,
        (args.u_lo, args.u_hi),
        "reciprocal",
        args.rows,
        args.seed,
        out_path=args.out,
    )
    print(
        f"wrote {args.out}: M={instance.num_masters} N={instance.num_workers}"
        f" seed={instance.seed}"
    )
    return 0


def _cmd_solve(args: argparse.Namespace) -> int:
    instance = serialize.read_instance(args.instance)
    try:
        schedule, trace = _solve_policy(args.policy, instance, args.alpha, args.tol)
    except Exception as err:
        print(f"{args.policy} failed: {type(err).__name__}: {err}", file=sys.stderr)
        return 1
    if np.isnan(schedule.t_approx):
        print(f"{args.policy}: no model completion time (empirical baseline)")
    else:
        print(f"{args.policy}: t_approx {_seconds(schedule.t_approx)} s")
        per = ", ".join(_seconds(t) for t in schedule.per_master_t)
        print(f"per-master t: {per} s")
    if trace is not None:
        print(
            f"iterations {trace.iterations}, converged {trace.converged},"
            f" newton steps {trace.newton_steps_total}"
        )
    if args.out:
        serialize.write_schedule(schedule, args.out)
        print(f"wrote {args.out}")
    return 0


def _cmd_simulate(args: argparse.Namespace) -> int:
    instance = serialize.read_instance(args.instance)
    schedule = serialize.read_schedule(args.schedule)
    report = simulate(
        schedule, instance, SimConfig(trials=args.trials, rng_seed=args.seed)
    )
    per = ", ".join(_seconds(t) for t in report.per_master_mean_completion)
    print(f"per-master mean completion: {per} s")
    print(f"overall mean completion: {_seconds(report.overall_mean_completion)} s")
    print(f"infeasible trials: {report.infeasible_trials} of {args.trials}")
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    policies = tuple(p.strip() for p in args.policies.split(",") if p.strip())
    generator = None
    if args.instance is None:
        generator = GeneratorSpec(
            num_masters=args.masters,
            num_workers=args.workers,
            u_range=(args.u_lo, args.u_hi),
            shift_rule="reciprocal",
            required_rows=args.rows,
            seed=args.seed,
        )
    config = ExperimentConfig(
        policies=policies,
        trials=args.trials,
        sim_seed=args.seed,
        out_path=args.out,
        alpha=args.alpha,
        tol=args.tol,
        instance_path=args.instance,
        generator=generator,
    )
    result = run_experiment(config)
    print(_comparison_table(result))
    for run in result.runs:
        if run.error is not None:
            print(f"{run.policy} failed: {run.error}", file=sys.stderr)
    print(f"wrote {args.out}")
    return 0 if result.all_ok else 1


def _cmd_sca_trace(args: argparse.Namespace) -> int:
    instance = serialize.read_instance(args.instance)
    _, trace = sca_solve(
        instance, ScaConfig(alpha=args.alpha, convergence_tol=args.tol)
    )
    serialize.atomic_write_text(args.out, serialize.trace_csv(trace.t_values))
    print(
        f"wrote {args.out}: {trace.iterations} iterations,"
        f" converged {trace.converged},"
        f" final t {_seconds(float(trace.t_values[-1]))} s"
    )
    return 0


def run_cli(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handler = {
        "generate": _cmd_generate,
        "solve": _cmd_solve,
        "simulate": _cmd_simulate,
        "compare": _cmd_compare,
        "sca-trace": _cmd_sca_trace,
    }[args.command]
    return handler(args)
