"""Subcommand routes: parse flags, call the services, wrap the result in a RunRecord."""

import argparse
import time
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from pydantic import BaseModel

from config.logger import get_logger
from config.settings import settings
from models.distributions import CompoundChannel
from models.errors import InputError
from models.schemas import (
    AdaptiveProblem,
    CodebookMode,
    FeasibilityReport,
    MultipleProblem,
    RunRecord,
    SimConfig,
    SweepTable,
    TypicalityParams,
)
from routers import spec_io
from services import typical_sets
from services.capacity_solver import CapacitySolver
from services.coding_sim import CodingSimulator
from services.types_core import compose, representative_sequence

logger = get_logger()


BOUND_QUANTITIES = ("joint_size", "sequence_probability", "set_probability", "set_size", "cross_probability")


# ---------------------------------------------------------------------------
# Shared argument plumbing
# ---------------------------------------------------------------------------

def _channel(args: argparse.Namespace) -> CompoundChannel:
    return spec_io.parse_channel_spec(args.channel)


def _solver(args: argparse.Namespace) -> CapacitySolver:
    return CapacitySolver(tol=args.tol, threads=args.threads)


def _problem(args: argparse.Namespace, channel: CompoundChannel):
    """Adaptive problem when --target/--delta are given, multiple problem for --targets."""

    if args.targets is not None:
        targets = spec_io.parse_state_targets(args.targets, channel.z_alphabet, channel.num_states)
        return MultipleProblem(channel=channel, targets=tuple(targets))
    if args.target is None:
        raise InputError("give --targets (multiple coordination) or --target with --delta (adaptive)")
    target = spec_io.parse_distribution(args.target, channel.z_alphabet)
    deltas = spec_io.parse_deltas(args.delta, channel.num_states) if args.delta else [0.0] * channel.num_states
    return AdaptiveProblem(channel=channel, target=target, deltas=tuple(deltas))


def _resolved(args: argparse.Namespace) -> Dict[str, Any]:
    """The run's arguments with library defaults filled in."""

    config = {key: value for key, value in vars(args).items() if key != "handler"}
    if "tol" in config and config["tol"] is None:
        config["tol"] = settings.solver_tol
    if config.get("threads") is None:
        config["threads"] = settings.threads
    return config


# ---------------------------------------------------------------------------
# Handlers
# ---------------------------------------------------------------------------

def run_capacity(args: argparse.Namespace) -> Tuple[BaseModel, Optional[str]]:
    channel = _channel(args)
    targets = spec_io.parse_state_targets(args.targets, channel.z_alphabet, channel.num_states)
    return _solver(args).capacity_multiple(MultipleProblem(channel=channel, targets=tuple(targets))), None


def run_adaptive(args: argparse.Namespace) -> Tuple[BaseModel, Optional[str]]:
    channel = _channel(args)
    problem = AdaptiveProblem(channel=channel, target=spec_io.parse_distribution(args.target, channel.z_alphabet),
                              deltas=tuple(spec_io.parse_deltas(args.delta, channel.num_states)))
    return _solver(args).capacity_adaptive(problem), None


def run_feasible(args: argparse.Namespace) -> Tuple[BaseModel, Optional[str]]:
    channel = _channel(args)
    feasible, witness, interior = _solver(args).feasibility(_problem(args, channel))
    return FeasibilityReport(feasible=feasible, witness=witness, interior=interior), None


def run_sweep(args: argparse.Namespace) -> Tuple[BaseModel, Optional[str]]:
    channel = _channel(args)
    target = spec_io.parse_distribution(args.target, channel.z_alphabet)
    grid = spec_io.parse_delta_grid(args.delta_grid)
    if args.sweep_state is None:
        cells = grid
    else:
        if not 0 <= args.sweep_state < channel.num_states:
            raise InputError("--sweep-state is out of range", {"state": args.sweep_state})
        base = spec_io.parse_deltas(args.delta, channel.num_states) if args.delta else [2.0] * channel.num_states
        cells = [[value if s == args.sweep_state else base[s] for s in range(channel.num_states)] for value in grid]
    points = _solver(args).region_sweep(channel, target, cells, args.tol, args.threads)
    table = SweepTable(points=points)
    return table, spec_io.sweep_csv(points) if args.format == "csv" else None


def run_simulate(args: argparse.Namespace) -> Tuple[BaseModel, Optional[str]]:
    channel = _channel(args)
    problem = _problem(args, channel)
    if args.input is not None:
        input_pmf = spec_io.parse_distribution(args.input, channel.x_alphabet)
    else:
        solved = (_solver(args).capacity_multiple(problem) if isinstance(problem, MultipleProblem)
                  else _solver(args).capacity_adaptive(problem))
        if not solved.feasible:
            raise InputError("no --input given and the coordination constraints are infeasible")
        input_pmf = solved.optimizer
        args.input = ",".join(repr(float(p)) for p in input_pmf.probs)
    fields: Dict[str, Any] = dict(
        channel=channel,
        input_pmf=input_pmf,
        rate_nats=args.rate,
        blocklength=args.blocklength,
        trials=args.trials,
        seed=args.seed,
        codebook_mode=CodebookMode(args.codebook_mode),
        threads=args.threads,
    )
    if isinstance(problem, MultipleProblem):
        fields["targets"] = problem.targets
    else:
        fields["target"] = problem.target
        if args.delta:
            fields["deltas"] = problem.deltas
    for flag, field in (("epsilon", "epsilon"), ("rate_slack", "rate_slack"), ("threshold", "coordination_threshold")):
        if getattr(args, flag) is not None:
            fields[field] = getattr(args, flag)
    return CodingSimulator(threads=args.threads).run_trials(SimConfig(**fields)), None


def run_bounds(args: argparse.Namespace) -> Tuple[BaseModel, Optional[str]]:
    if args.joint is not None:
        P = spec_io.parse_joint(args.joint)
    else:
        if args.channel is None or args.input is None:
            raise InputError("give --joint, or --channel with --input (and optionally --state)")
        channel = _channel(args)
        if not 0 <= args.state < channel.num_states:
            raise InputError("--state is out of range", {"state": args.state})
        N = spec_io.parse_distribution(args.input, channel.x_alphabet)
        P = compose(N, channel.states[args.state].kernel_y)
    epsilon = args.epsilon if args.epsilon is not None else settings.decoder_epsilon
    params = TypicalityParams(epsilon=epsilon, n=args.blocklength)
    if args.sequence is not None:
        x = P.x_alphabet.encode(spec_io.parse_index_list(args.sequence))
    else:
        x = representative_sequence(P.marginal_x(), params.n)
    if x.size != params.n:
        raise InputError("--sequence length differs from --blocklength", {"length": int(x.size)})

    quantity = args.quantity
    if quantity == "joint_size":
        report = typical_sets.jointly_typical_set_size_bounds(P, params)
        exact = typical_sets.typical_set_size(P, params) if args.exhaustive else None
    elif quantity == "cross_probability":
        q_Y = spec_io.parse_distribution(args.q_y, P.y_alphabet) if args.q_y else P.marginal_y()
        report = typical_sets.cross_probability_bound(P, q_Y, x, params)
        exact = (typical_sets.exhaustive_conditional_probability(P, x, params, q_Y=q_Y, threads=args.threads)
                 .total_probability if args.exhaustive else None)
    else:
        compute = {
            "sequence_probability": typical_sets.conditional_sequence_probability_bounds,
            "set_probability": typical_sets.conditional_set_probability_bounds,
            "set_size": typical_sets.conditional_set_size_bounds,
        }[quantity]
        report = compute(P, x, params)
        exact = None
        if args.exhaustive:
            enumeration = typical_sets.exhaustive_conditional_probability(P, x, params, threads=args.threads)
            exact = {
                "sequence_probability": enumeration.max_sequence_probability,
                "set_probability": enumeration.total_probability,
                "set_size": float(enumeration.set_size),
            }[quantity]
    if exact is not None:
        report = report.model_copy(update={"exact": float(exact)})
    return report, None


def run_oracle(args: argparse.Namespace) -> Tuple[BaseModel, Optional[str]]:
    channel = _channel(args)
    return _solver(args).brute_force_search(_problem(args, channel), args.lattice_n, args.threads), None


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _common(parser: argparse.ArgumentParser, formats: Tuple[str, ...] = ("json",)) -> None:
    parser.add_argument("--out", help="Write the result here instead of standard output")
    parser.add_argument("--format", choices=formats, default="json")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads (default: COORDCAP_THREADS)")
    parser.add_argument("--log-level", default=None, choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def _coordination_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--targets", help="Per-state targets Q_s: JSON file or inline 'p,q;p,q'")
    parser.add_argument("--target", help="Common target Q: JSON file or inline 'p,q'")
    parser.add_argument("--delta", help="Per-state precisions: one value or a comma-separated list")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coordcap",
                                     description="Communication-interference capacity of compound DMCs")
    commands = parser.add_subparsers(dest="command", required=True)

    capacity = commands.add_parser("capacity", help="Capacity with exact per-state interference targets")
    capacity.add_argument("--channel", required=True)
    capacity.add_argument("--targets", required=True)
    capacity.add_argument("--tol", type=float, default=None)
    _common(capacity)
    capacity.set_defaults(handler=run_capacity)

    adaptive = commands.add_parser("adaptive", help="Capacity with a common target and per-state precisions")
    adaptive.add_argument("--channel", required=True)
    adaptive.add_argument("--target", required=True)
    adaptive.add_argument("--delta", required=True)
    adaptive.add_argument("--tol", type=float, default=None)
    _common(adaptive)
    adaptive.set_defaults(handler=run_adaptive)

    feasible = commands.add_parser("feasible", help="Feasibility of the interference constraints")
    feasible.add_argument("--channel", required=True)
    _coordination_flags(feasible)
    feasible.add_argument("--tol", type=float, default=None)
    _common(feasible)
    feasible.set_defaults(handler=run_feasible)

    sweep = commands.add_parser("sweep", help="Adaptive capacity over a grid of precisions")
    sweep.add_argument("--channel", required=True)
    sweep.add_argument("--target", required=True)
    sweep.add_argument("--delta-grid", required=True, help="start:stop:step")
    sweep.add_argument("--sweep-state", type=int, default=None, help="Vary only this state's precision")
    sweep.add_argument("--delta", help="Precisions held fixed for the other states (default 2)")
    sweep.add_argument("--tol", type=float, default=None)
    _common(sweep, formats=("json", "csv"))
    sweep.set_defaults(handler=run_sweep)

    simulate = commands.add_parser("simulate", help="Monte Carlo random coding with joint-typicality decoding")
    simulate.add_argument("--channel", required=True)
    _coordination_flags(simulate)
    simulate.add_argument("--input", help="Codebook PMF N (default: the solver's optimizer)")
    simulate.add_argument("--rate", type=float, required=True, help="Rate in nats")
    simulate.add_argument("--blocklength", type=int, required=True)
    simulate.add_argument("--epsilon", type=float, default=None)
    simulate.add_argument("--trials", type=int, default=1000)
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--rate-slack", type=float, default=None)
    simulate.add_argument("--threshold", type=float, default=None, help="Coordination threshold for Pr(V > t)")
    simulate.add_argument("--codebook-mode", choices=[m.value for m in CodebookMode], default=CodebookMode.FRESH.value)
    simulate.add_argument("--tol", type=float, default=None)
    _common(simulate)
    simulate.set_defaults(handler=run_simulate)

    bounds = commands.add_parser("bounds", help="Strong-typicality size and probability brackets")
    bounds.add_argument("--joint", help="Joint PMF rows: JSON file or inline 'p,q;r,s'")
    bounds.add_argument("--channel")
    bounds.add_argument("--input", help="Input PMF N, combined with --channel and --state")
    bounds.add_argument("--state", type=int, default=0)
    bounds.add_argument("--quantity", choices=BOUND_QUANTITIES, default="joint_size")
    bounds.add_argument("--blocklength", type=int, required=True)
    bounds.add_argument("--epsilon", type=float, default=None)
    bounds.add_argument("--sequence", help="Conditioning sequence x as comma-separated symbol indices")
    bounds.add_argument("--q-y", help="Output PMF q_Y for the cross probability")
    bounds.add_argument("--exhaustive", action="store_true", help="Also compute the exact value by enumeration")
    _common(bounds)
    bounds.set_defaults(handler=run_bounds)

    oracle = commands.add_parser("oracle", help="Brute-force capacity over the type lattice")
    oracle.add_argument("--channel", required=True)
    _coordination_flags(oracle)
    oracle.add_argument("--lattice-n", type=int, default=200)
    oracle.add_argument("--tol", type=float, default=None)
    _common(oracle)
    oracle.set_defaults(handler=run_oracle)

    return parser


def sidecar_path(table_path: str) -> Path:
    """JSON record path written next to a CSV table; never the table path itself."""

    path = Path(table_path)
    return path.with_suffix(".record.json") if path.suffix == ".json" else path.with_suffix(".json")


def dispatch(args: argparse.Namespace) -> RunRecord:
    """Run the selected subcommand and write its output; returns the RunRecord."""

    logger.info("Dispatching command", command=args.command)
    started = time.perf_counter()
    payload, table = args.handler(args)
    record = RunRecord(
        command=args.command,
        config=_resolved(args),
        duration_seconds=time.perf_counter() - started,
        payload_kind=type(payload).__name__,
        payload=payload.model_dump(mode="json"),
    )
    if table is not None:
        spec_io.emit(table, args.out)
        if args.out is not None:
            spec_io.emit(spec_io.to_json(record), sidecar_path(args.out))
    else:
        spec_io.emit(spec_io.to_json(record), args.out)
    logger.info("Command finished", command=args.command, seconds=record.duration_seconds)
    return record
