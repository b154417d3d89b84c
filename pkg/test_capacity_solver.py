"""Tests for feasibility, max-min capacity, sweeps and the lattice oracle."""

import math

import numpy as np
import pytest

from conftest import IDENTITY, noiseless_channel, random_adaptive_problem
from config.settings import settings
from models.distributions import CompoundChannel, Distribution
from models.errors import InputError, ResourceGuardError
from models.schemas import AdaptiveProblem, MultipleProblem, SolverStatus
from services import capacity_solver as capacity_module
from services.capacity_solver import CapacitySolver
from services.info_measures import mutual_information_array

LOG2 = math.log(2.0)
H_QUARTER = 0.562335144618808
NOISY = [[0.9, 0.1], [0.2, 0.8]]
FAIR = [[0.5, 0.5], [0.5, 0.5]]


def _adaptive(channel: CompoundChannel, target, deltas) -> AdaptiveProblem:
    return AdaptiveProblem(channel=channel, target=Distribution(probs=target), deltas=tuple(deltas))


def _multiple(channel: CompoundChannel, targets) -> MultipleProblem:
    return MultipleProblem(channel=channel, targets=tuple(Distribution(probs=t) for t in targets))


# ---------------------------------------------------------------------------
# Feasibility
# ---------------------------------------------------------------------------

def test_feasibility_multiple_examples(solver):
    rng = np.random.default_rng(1)
    Q = rng.dirichlet(np.ones(2))
    feasible, witness = solver.feasibility_multiple(_multiple(noiseless_channel(), [Q]))
    assert feasible, "Identity kernel_z admits N = Q"
    assert np.allclose(witness.probs, Q, atol=1e-8), f"Witness should equal Q, got {witness.probs}"

    constant = CompoundChannel.from_matrices([IDENTITY], [[[0.7, 0.3], [0.7, 0.3]]])
    feasible, witness = solver.feasibility_multiple(_multiple(constant, [[0.5, 0.5]]))
    assert not feasible and witness is None, "Constant interference output cannot reach another target"

    twin = CompoundChannel.from_matrices([IDENTITY, IDENTITY], [IDENTITY, IDENTITY])
    feasible, _ = solver.feasibility_multiple(_multiple(twin, [[0.5, 0.5], [0.6, 0.4]]))
    assert not feasible, "N cannot equal two different targets"


def test_feasibility_adaptive_examples(solver, two_state):
    feasible, witness = solver.feasibility_adaptive(_adaptive(two_state, [0.1, 0.9], [2.0, 2.0]))
    assert feasible and witness is not None, "Precision 2 covers the whole simplex image"

    feasible, witness = solver.feasibility_adaptive(_adaptive(noiseless_channel(), [1.0, 0.0], [0.5]))
    assert feasible, "(3/4, 1/4) is within 1/2 of (1, 0)"
    assert np.abs(witness.probs - [1.0, 0.0]).sum() <= 0.5 + 1e-9, f"Witness {witness.probs} violates the ball"

    for Q in ([0.5, 0.5], [0.3, 0.7]):
        exact = solver.feasibility_multiple(_multiple(noiseless_channel(), [Q]))[0]
        collapsed = solver.feasibility_adaptive(_adaptive(noiseless_channel(), Q, [0.0]))[0]
        assert exact == collapsed, "Zero precision coincides with the exact pre-image problem"


def test_feasibility_interior_flag(solver):
    feasible, witness, interior = solver.feasibility(_adaptive(noiseless_channel(), [0.5, 0.5], [0.5]))
    assert feasible and interior, "Uniform target with slack has an interior point"
    assert np.all(witness.probs > 0), "Interior witnesses put mass on every input"

    feasible, witness, interior = solver.feasibility(_adaptive(noiseless_channel(), [1.0, 0.0], [0.0]))
    assert feasible and not interior, "Point-mass target pins N to the boundary"
    assert np.allclose(witness.probs, [1.0, 0.0], atol=1e-8), "The only feasible input is (1, 0)"


# ---------------------------------------------------------------------------
# Capacity
# ---------------------------------------------------------------------------

def test_noiseless_singleton_preimage(solver):
    result = solver.capacity_multiple(_multiple(noiseless_channel(), [[0.5, 0.5]]))
    assert result.feasible, "Uniform target is reachable"
    assert abs(result.rate_nats - LOG2) <= 1e-6, f"Expected log 2, got {result.rate_nats}"
    assert abs(result.rate_bits - 1.0) <= 1e-6, "One bit"
    assert np.allclose(result.optimizer.probs, [0.5, 0.5], atol=1e-6), "Pre-image is the uniform input"
    assert result.binding_constraints == [0], "Exact constraints always bind"
    assert np.allclose(result.induced_targets[0].probs, [0.5, 0.5], atol=1e-6), "Induced target is Q"


def test_noisy_state_forces_zero_rate(solver):
    channel = CompoundChannel.from_matrices([IDENTITY, FAIR], [IDENTITY, IDENTITY])
    result = solver.capacity_multiple(_multiple(channel, [[0.4, 0.6], [0.4, 0.6]]))
    assert result.feasible, "Shared target is reachable"
    assert abs(result.rate_nats) <= 1e-9, f"The fully noisy state forces zero rate, got {result.rate_nats}"
    assert 1 in result.active_states, "The noisy state is the active one"


def test_noisy_singleton_preimage(solver):
    channel = CompoundChannel.from_matrices([NOISY], [IDENTITY])
    result = solver.capacity_multiple(_multiple(channel, [[0.5, 0.5]]))
    expected = mutual_information_array(np.array([0.5, 0.5]), np.array(NOISY))
    assert abs(result.rate_nats - expected) <= 1e-6, f"Expected {expected}, got {result.rate_nats}"
    assert abs(expected - 0.275396) <= 1e-6, "Reference value"
    assert not result.boundary_smoothed, "Interior pre-image needs no boundary smoothing"


def test_adaptive_degenerate_target(solver):
    channel = noiseless_channel()
    zero = solver.capacity_adaptive(_adaptive(channel, [1.0, 0.0], [0.0]))
    assert abs(zero.rate_nats) <= 1e-6, f"Zero precision forces N = (1, 0), got {zero.rate_nats}"

    half = solver.capacity_adaptive(_adaptive(channel, [1.0, 0.0], [0.5]))
    assert abs(half.rate_nats - H_QUARTER) <= 1e-5, f"Expected h(1/4), got {half.rate_nats}"
    assert np.allclose(half.optimizer.probs, [0.75, 0.25], atol=1e-4), f"Optimizer {half.optimizer.probs}"
    assert half.binding_constraints == [0], "The precision ball binds"

    vacuous = solver.capacity_adaptive(_adaptive(channel, [1.0, 0.0], [2.0]))
    assert abs(vacuous.rate_nats - LOG2) <= 1e-6, f"Expected log 2, got {vacuous.rate_nats}"
    assert vacuous.binding_constraints == [], "A vacuous ball does not bind"
    assert vacuous.status is SolverStatus.CONVERGED, f"Status {vacuous.status}"


def test_infeasible_result_has_no_rate(solver):
    twin = CompoundChannel.from_matrices([IDENTITY, IDENTITY], [IDENTITY, IDENTITY])
    result = solver.capacity_multiple(_multiple(twin, [[0.5, 0.5], [0.9, 0.1]]))
    assert not result.feasible, "Disjoint pre-images are infeasible"
    assert result.rate_nats is None and result.optimizer is None, "Infeasible results carry no rate"
    assert result.status is SolverStatus.INFEASIBLE, "Status records infeasibility"


def test_rate_equals_min_per_state_mi(solver, two_state):
    result = solver.capacity_adaptive(_adaptive(two_state, [0.5, 0.5], [0.6, 0.6]))
    assert result.feasible, "Two-state problem with precision 0.6 is feasible"
    assert math.isclose(result.rate_nats, min(result.per_state_mi), abs_tol=1e-9), "Rate is the minimum MI"
    assert result.active_states, "At least one state is active"
    assert result.duality_gap_estimate <= 1e-7 + 1e-12, f"Gap {result.duality_gap_estimate}"


def test_epigraph_cross_check(solver, two_state):
    problem = _adaptive(two_state, [0.5, 0.5], [0.6, 0.6])
    primary = solver.capacity_adaptive(problem)
    epigraph = solver.epigraph_capacity(problem)
    assert epigraph.feasible, "Epigraph form agrees on feasibility"
    assert epigraph.rate_nats <= primary.rate_nats + 1e-6, "Epigraph cannot beat the certified optimum"
    assert abs(epigraph.rate_nats - primary.rate_nats) <= 1e-4, \
        f"Epigraph {epigraph.rate_nats} vs cutting-plane {primary.rate_nats}"


def test_invalid_tolerance(solver):
    with pytest.raises(InputError):
        solver.capacity_multiple(_multiple(noiseless_channel(), [[0.5, 0.5]]), tol=0.0)


# ---------------------------------------------------------------------------
# Sweeps and oracle
# ---------------------------------------------------------------------------

def test_region_sweep_endpoints(solver):
    points = solver.region_sweep(noiseless_channel(), Distribution.point(2, 0), [0.0, 0.5, 2.0], threads=2)
    rates = [p.rate_nats for p in points]
    assert [p.deltas for p in points] == [[0.0], [0.5], [2.0]], "Grid order is preserved"
    assert abs(rates[0]) <= 1e-6 and abs(rates[1] - H_QUARTER) <= 1e-5 and abs(rates[2] - LOG2) <= 1e-6, \
        f"Unexpected sweep {rates}"


def test_region_sweep_inactive_state(solver):
    channel = CompoundChannel.from_matrices([IDENTITY, FAIR], [IDENTITY, IDENTITY])
    target = Distribution.uniform(2)
    points = solver.region_sweep(channel, target, [[0.5, d] for d in (0.0, 0.5, 1.0, 2.0)])
    rates = [p.rate_nats for p in points]
    assert all(abs(r) <= 1e-9 for r in rates), f"Rate stays at the noisy state's zero, got {rates}"
    assert all(1 in p.active_states for p in points), "The noisy state stays active"


def test_oracle_examples(solver):
    oracle = solver.brute_force_capacity(_multiple(noiseless_channel(), [[0.5, 0.5]]), 200)
    assert abs(oracle - LOG2) <= 0.005, f"Lattice oracle {oracle} should be near log 2"

    oracle = solver.brute_force_capacity(_adaptive(noiseless_channel(), [1.0, 0.0], [0.5]), 200)
    assert abs(oracle - H_QUARTER) <= 0.005, f"Lattice oracle {oracle} should be near h(1/4)"

    twin = CompoundChannel.from_matrices([IDENTITY, IDENTITY], [IDENTITY, IDENTITY])
    report = solver.brute_force_search(_multiple(twin, [[0.5, 0.5], [0.9, 0.1]]), 50)
    assert report.feasible_points == 0 and report.rate_nats is None, "No lattice point meets both targets"
    assert solver.brute_force_capacity(_multiple(twin, [[0.5, 0.5], [0.9, 0.1]]), 50) == -math.inf, \
        "Infeasible oracle value is -inf"


def test_oracle_guard(solver, monkeypatch):
    monkeypatch.setattr(settings, "lattice_guard", 100)
    with pytest.raises(ResourceGuardError):
        solver.brute_force_capacity(_multiple(noiseless_channel(), [[0.5, 0.5]]), 200)


def test_solver_matches_oracle_on_random_instances(solver):
    worst = 0.0
    for seed in range(20):
        problem = random_adaptive_problem(seed, solver)
        result = solver.capacity_adaptive(problem)
        oracle = solver.brute_force_capacity(problem, 200)
        worst = max(worst, abs(result.rate_nats - oracle))
        assert abs(result.rate_nats - oracle) <= 0.02, \
            f"seed {seed}: solver {result.rate_nats} vs oracle {oracle}"
    assert worst <= 0.02, f"Largest disagreement {worst}"


def test_zero_precision_collapses_to_exact(solver):
    rng = np.random.default_rng(404)
    for _ in range(10):
        # three inputs onto two interference outputs: the exact pre-image is a segment
        shared_z = rng.dirichlet(np.ones(2), size=3)
        channel = CompoundChannel.from_matrices([rng.dirichlet(np.ones(2), size=3) for _ in range(2)],
                                                [shared_z, shared_z])
        Q = rng.dirichlet(np.ones(3)) @ shared_z
        exact = solver.capacity_multiple(_multiple(channel, [Q, Q]))
        adaptive = solver.capacity_adaptive(_adaptive(channel, Q, [0.0, 0.0]))
        assert exact.feasible and adaptive.feasible, "A pushed-forward target is always reachable"
        assert abs(exact.rate_nats - adaptive.rate_nats) <= 2e-6, \
            f"Zero precision {adaptive.rate_nats} vs exact {exact.rate_nats}"


def test_monotone_in_precision():
    solver = CapacitySolver(tol=1e-7, threads=2)
    grid = [0.25 * k for k in range(9)]
    for seed in range(20):
        problem = random_adaptive_problem(seed, solver)
        points = solver.region_sweep(problem.channel, problem.target, grid)
        rates = [p.rate_nats if p.feasible else -math.inf for p in points]
        for before, after in zip(rates, rates[1:]):
            assert after >= before - 1e-6, f"seed {seed}: rates not nondecreasing {rates}"


def test_module_level_wrappers():
    result = capacity_module.capacity_multiple(_multiple(noiseless_channel(), [[0.5, 0.5]]))
    assert abs(result.rate_nats - LOG2) <= 1e-5, "Global solver instance uses the default settings"
