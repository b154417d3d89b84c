"""Max-min mutual information over interference-constrained input polytopes.

Both problem kinds reduce to one constraint form: for every state s,
||N kernel_z[s] - Q_s||_1 <= r_s, with r_s = Delta_s for adaptive problems and the
pre-image relaxation radius for exact (multiple) problems. The l1 balls are linearized
with auxiliary variables u_s, so the feasible set is a polytope and every linear
subproblem is an LP.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import linprog, minimize, minimize_scalar
from scipy.special import entr

from config.logger import get_logger
from config.settings import settings
from models.distributions import CompoundChannel, Distribution
from models.errors import InputError, ResourceGuardError
from models.schemas import (
    AdaptiveProblem,
    CapacityResult,
    MultipleProblem,
    OracleReport,
    SolverStatus,
    SweepPoint,
)
from services.info_measures import (
    BOUNDARY_SMOOTHING,
    mutual_information_array,
    nats_to_bits,
    supergradient_array,
)
from services.types_core import lattice_counts, lattice_size

logger = get_logger()

Problem = Union[MultipleProblem, AdaptiveProblem]

HIGHS_OPTIONS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}
# States within this of the minimum count as active.
ACTIVE_TOL = 1e-6
# Interference constraints within this of their radius count as binding.
BINDING_TOL = 1e-7
# Slack allowed when re-checking a witness against its constraints.
WITNESS_TOL = 1e-9
STALL_ITERATIONS = 50
MAX_CUTS = 400
LINE_SEARCH_XATOL = 1e-10


class _Program:
    """Arrays of a capacity problem in the common l1-ball form."""

    def __init__(self, problem: Problem):
        channel = problem.channel
        self.kind = "multiple" if isinstance(problem, MultipleProblem) else "adaptive"
        self.kernels_y = channel.kernels_y()
        self.kernels_z = channel.kernels_z()
        if isinstance(problem, MultipleProblem):
            self.targets = [t.probs for t in problem.targets]
            self.radii = np.full(channel.num_states, settings.preimage_relaxation)
        else:
            self.targets = [problem.target.probs] * channel.num_states
            self.radii = np.maximum(np.asarray(problem.deltas, dtype=float), settings.preimage_relaxation)
        self.x_alphabet = channel.x_alphabet
        self.z_alphabet = channel.z_alphabet
        self.kx = channel.x_alphabet.size
        self.kz = channel.z_alphabet.size
        self.states = channel.num_states
        self.row_entropies = [entr(rows).sum(axis=1) for rows in self.kernels_y]

    # variable layout: [N (kx) | u_1 .. u_S (kz each) | extra]
    @property
    def base_width(self) -> int:
        return self.kx + self.states * self.kz

    def polytope(self, extra: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """A_ub, b_ub, A_eq, b_eq of the feasible set, padded with `extra` trailing columns."""

        width = self.base_width + extra
        rows, rhs = [], []
        for s in range(self.states):
            kz_t = self.kernels_z[s].T
            cols = slice(self.kx + s * self.kz, self.kx + (s + 1) * self.kz)
            for sign in (1.0, -1.0):
                block = np.zeros((self.kz, width))
                block[:, :self.kx] = sign * kz_t
                block[:, cols] = -np.eye(self.kz)
                rows.append(block)
                rhs.append(sign * self.targets[s])
            total = np.zeros((1, width))
            total[0, cols] = 1.0
            rows.append(total)
            rhs.append(np.array([self.radii[s]]))
        A_eq = np.zeros((1, width))
        A_eq[0, :self.kx] = 1.0
        return np.vstack(rows), np.concatenate(rhs), A_eq, np.array([1.0])

    def bounds(self, extra: Sequence[Tuple[Optional[float], Optional[float]]]):
        return [(0.0, 1.0)] * self.kx + [(0.0, None)] * (self.states * self.kz) + list(extra)

    def per_state_mi(self, N: np.ndarray) -> np.ndarray:
        return np.array([mutual_information_array(N, rows) for rows in self.kernels_y])

    def objective(self, N: np.ndarray) -> float:
        return float(self.per_state_mi(N).min())

    def violations(self, N: np.ndarray) -> np.ndarray:
        return np.array([np.abs(N @ self.kernels_z[s] - self.targets[s]).sum() - self.radii[s]
                         for s in range(self.states)])

    def lattice_objective(self, points: np.ndarray) -> np.ndarray:
        values = [entr(points @ rows).sum(axis=1) - points @ h
                  for rows, h in zip(self.kernels_y, self.row_entropies)]
        return np.min(values, axis=0)


def _as_distribution(N: np.ndarray, program: _Program) -> Distribution:
    N = np.clip(N, 0.0, None)
    return Distribution(probs=N / N.sum(), alphabet=program.x_alphabet)


def _normalize(N: np.ndarray) -> np.ndarray:
    N = np.clip(N, 0.0, None)
    return N / N.sum()


class CapacitySolver:
    """Feasibility, capacity, sweep and lattice-oracle computations."""

    def __init__(self, tol: Optional[float] = None, max_iterations: Optional[int] = None,
                 threads: Optional[int] = None):
        self.tol = tol
        self.max_iterations = max_iterations
        self.threads = threads

    # -- feasibility -------------------------------------------------------

    def _witness(self, program: _Program) -> Tuple[bool, Optional[np.ndarray], bool]:
        """(feasible, witness, interior). Maximizes the smallest input probability, then centers."""

        A_ub, b_ub, A_eq, b_eq = program.polytope(extra=1)
        # sigma <= N(a) for every a
        floor = np.zeros((program.kx, A_ub.shape[1]))
        floor[:, :program.kx] = -np.eye(program.kx)
        floor[:, -1] = 1.0
        c = np.zeros(A_ub.shape[1])
        c[-1] = -1.0
        result = linprog(c, A_ub=np.vstack([A_ub, floor]), b_ub=np.concatenate([b_ub, np.zeros(program.kx)]),
                         A_eq=A_eq, b_eq=b_eq, bounds=program.bounds([(None, 1.0)]),
                         method="highs", options=HIGHS_OPTIONS)
        if result.status == 2:
            return False, None, False
        if result.status != 0:
            logger.warning("Feasibility LP did not finish", status=int(result.status), message=result.message)
            return False, None, False
        witness = _normalize(result.x[:program.kx])
        slack = float(result.x[-1])
        if slack <= WITNESS_TOL:
            return True, witness, False
        return True, self._center(program, result.x[:-1]), True

    def _center(self, program: _Program, start: np.ndarray) -> np.ndarray:
        """Log-barrier center of the input polytope, falling back to `start` when SLSQP drifts out."""

        A_ub, b_ub, A_eq, b_eq = program.polytope(extra=0)
        kx = program.kx

        def barrier(v):
            return -np.sum(np.log(np.maximum(v[:kx], 1e-300)))

        def barrier_grad(v):
            grad = np.zeros_like(v)
            grad[:kx] = -1.0 / np.maximum(v[:kx], 1e-300)
            return grad

        constraints = [
            {"type": "ineq", "fun": lambda v: b_ub - A_ub @ v, "jac": lambda v: -A_ub},
            {"type": "eq", "fun": lambda v: A_eq @ v - b_eq, "jac": lambda v: A_eq},
        ]
        fallback = _normalize(start[:kx])
        try:
            refined = minimize(barrier, start, jac=barrier_grad, method="SLSQP", constraints=constraints,
                               bounds=program.bounds([]), options={"ftol": 1e-12, "maxiter": 200})
        except (ValueError, np.linalg.LinAlgError) as exc:
            logger.debug("Centering failed", error=str(exc))
            return fallback
        candidate = refined.x[:kx]
        if (not np.all(np.isfinite(candidate)) or np.any(candidate <= 0)
                or abs(candidate.sum() - 1.0) > WITNESS_TOL
                or np.any(program.violations(candidate) > WITNESS_TOL)
                or barrier(refined.x) > barrier(start)):
            return fallback
        return _normalize(candidate)

    def feasibility_multiple(self, problem: MultipleProblem) -> Tuple[bool, Optional[Distribution]]:
        program = _Program(problem)
        feasible, witness, _ = self._witness(program)
        return feasible, _as_distribution(witness, program) if feasible else None

    def feasibility_adaptive(self, problem: AdaptiveProblem) -> Tuple[bool, Optional[Distribution]]:
        program = _Program(problem)
        feasible, witness, _ = self._witness(program)
        return feasible, _as_distribution(witness, program) if feasible else None

    def feasibility(self, problem: Problem) -> Tuple[bool, Optional[Distribution], bool]:
        """Feasibility with the interior flag, for either problem kind."""

        program = _Program(problem)
        feasible, witness, interior = self._witness(program)
        return feasible, _as_distribution(witness, program) if feasible else None, interior

    # -- capacity ----------------------------------------------------------

    def _cut(self, program: _Program, N: np.ndarray) -> Tuple[np.ndarray, np.ndarray, bool]:
        """Per-state linearizations t <= f_s(P) + g_s (N' - P) at a (possibly smoothed) point P."""

        gradients, constants, smoothed = [], [], False
        for rows in program.kernels_y:
            gradient, was_smoothed = supergradient_array(N, rows)
            smoothed |= was_smoothed
            base = N
            if was_smoothed:
                base = (N + BOUNDARY_SMOOTHING) / (1.0 + BOUNDARY_SMOOTHING * N.size)
            gradients.append(gradient)
            constants.append(mutual_information_array(base, rows) - gradient @ base)
        return np.array(gradients), np.array(constants), smoothed

    def _solve(self, program: _Program, tol: float, max_iterations: int) -> CapacityResult:
        feasible, N, _ = self._witness(program)
        if not feasible:
            logger.info("Capacity problem infeasible", kind=program.kind, states=program.states)
            return CapacityResult(feasible=False, status=SolverStatus.INFEASIBLE)

        A_ub, b_ub, A_eq, b_eq = program.polytope(extra=1)
        bounds = program.bounds([(None, None)])
        c = np.zeros(A_ub.shape[1])
        c[-1] = -1.0

        value = program.objective(N)
        upper = math.inf
        cut_gradients: List[np.ndarray] = []
        cut_constants: List[float] = []
        concavity_violations = 0
        smoothed_any = False
        stalled_for = 0
        status = SolverStatus.ITERATION_CAP
        iteration = 0

        def add_cuts(point: np.ndarray) -> None:
            nonlocal smoothed_any
            gradients, constants, smoothed = self._cut(program, point)
            smoothed_any |= smoothed
            cut_gradients.extend(gradients)
            cut_constants.extend(constants)
            del cut_gradients[:-MAX_CUTS]
            del cut_constants[:-MAX_CUTS]

        add_cuts(N)
        while iteration < max_iterations:
            iteration += 1
            # t - g.N <= const for every stored cut
            cuts = np.zeros((len(cut_gradients), A_ub.shape[1]))
            cuts[:, :program.kx] = -np.array(cut_gradients)
            cuts[:, -1] = 1.0
            lp = linprog(c, A_ub=np.vstack([A_ub, cuts]), b_ub=np.concatenate([b_ub, cut_constants]),
                         A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs", options=HIGHS_OPTIONS)
            if lp.status != 0:
                logger.warning("Linear subproblem failed", status=int(lp.status), message=lp.message,
                               iteration=iteration)
                status = SolverStatus.STALLED
                break
            S = _normalize(lp.x[:program.kx])
            upper = min(upper, float(lp.x[-1]))
            gap = upper - value
            logger.debug("Solver iteration", iteration=iteration, value=value, upper=upper, gap=gap)
            if gap <= tol:
                status = SolverStatus.CONVERGED
                break

            direction = S - N
            search = minimize_scalar(lambda step: -program.objective(N + step * direction), bounds=(0.0, 1.0),
                                     method="bounded", options={"xatol": LINE_SEARCH_XATOL})
            candidates = [(float(search.x), -float(search.fun)), (1.0, program.objective(S))]
            step, new_value = max(candidates, key=lambda item: item[1])

            middle = program.objective(N + 0.5 * direction)
            if middle < 0.5 * (value + program.objective(S)) - tol:
                concavity_violations += 1

            if new_value > value + 1e-15:
                N = _normalize(N + step * direction)
                value = new_value
                stalled_for = 0
            else:
                stalled_for += 1
            add_cuts(N)
            add_cuts(S)
            if stalled_for >= STALL_ITERATIONS:
                status = SolverStatus.STALLED
                break

        if status is SolverStatus.ITERATION_CAP:
            logger.warning("Solver hit the iteration cap", iterations=iteration, gap=upper - value)
        elif status is SolverStatus.STALLED:
            logger.warning("Solver stalled", iterations=iteration, gap=upper - value)
        if smoothed_any:
            logger.warning("Supergradients evaluated at smoothed boundary points")
        if concavity_violations:
            logger.warning("Concavity check failed at solver iterates", violations=concavity_violations)
        return self._result(program, N, iteration, max(0.0, upper - value), status,
                            concavity_violations, smoothed_any)

    def _result(self, program: _Program, N: np.ndarray, iterations: int, gap: Optional[float],
                status: SolverStatus, concavity_violations: int = 0, smoothed: bool = False) -> CapacityResult:
        optimizer = _as_distribution(N, program)
        mi = program.per_state_mi(optimizer.probs)
        rate = float(mi.min())
        induced = [Distribution(probs=optimizer.probs @ kz, alphabet=program.z_alphabet) for kz in program.kernels_z]
        distances = [float(np.abs(m.probs - q).sum()) for m, q in zip(induced, program.targets)]
        if program.kind == "multiple":
            binding = list(range(program.states))
        else:
            binding = [s for s, d in enumerate(distances) if d >= program.radii[s] - BINDING_TOL]
        result = CapacityResult(
            feasible=True,
            rate_nats=rate,
            rate_bits=nats_to_bits(rate),
            optimizer=optimizer,
            per_state_mi=[float(v) for v in mi],
            active_states=[s for s, v in enumerate(mi) if v - rate <= ACTIVE_TOL],
            induced_targets=induced,
            binding_constraints=binding,
            iterations=iterations,
            duality_gap_estimate=gap,
            status=status,
            concavity_violations=concavity_violations,
            boundary_smoothed=smoothed,
        )
        logger.info("Capacity solved", kind=program.kind, states=program.states, rate_nats=rate,
                    iterations=iterations, gap=gap, status=status.value)
        return result

    def _settings(self, tol: Optional[float]) -> Tuple[float, int]:
        tol = tol if tol is not None else (self.tol or settings.solver_tol)
        if not tol > 0:
            raise InputError("tol must be positive", {"tol": tol})
        return tol, self.max_iterations or settings.solver_max_iterations

    def capacity_multiple(self, problem: MultipleProblem, tol: Optional[float] = None) -> CapacityResult:
        tol, cap = self._settings(tol)
        return self._solve(_Program(problem), tol, cap)

    def capacity_adaptive(self, problem: AdaptiveProblem, tol: Optional[float] = None) -> CapacityResult:
        tol, cap = self._settings(tol)
        return self._solve(_Program(problem), tol, cap)

    def epigraph_capacity(self, problem: Problem) -> CapacityResult:
        """Epigraph form max t s.t. t <= I(N J_s) for all s, solved with SLSQP."""

        program = _Program(problem)
        feasible, N0, _ = self._witness(program)
        if not feasible:
            return CapacityResult(feasible=False, status=SolverStatus.INFEASIBLE)
        A_ub, b_ub, A_eq, b_eq = program.polytope(extra=1)
        kx = program.kx
        start = np.zeros(A_ub.shape[1])
        start[:kx] = N0
        for s in range(program.states):
            cols = slice(kx + s * program.kz, kx + (s + 1) * program.kz)
            start[cols] = np.abs(N0 @ program.kernels_z[s] - program.targets[s])
        start[-1] = program.objective(N0)

        def mi_constraint(v):
            N = np.clip(v[:kx], 0.0, None)
            return program.per_state_mi(N) - v[-1]

        def mi_jacobian(v):
            N = np.clip(v[:kx], 0.0, None)
            jac = np.zeros((program.states, v.size))
            for s, rows in enumerate(program.kernels_y):
                jac[s, :kx] = supergradient_array(N, rows)[0]
            jac[:, -1] = -1.0
            return jac

        objective_grad = np.zeros_like(start)
        objective_grad[-1] = -1.0
        constraints = [
            {"type": "ineq", "fun": mi_constraint, "jac": mi_jacobian},
            {"type": "ineq", "fun": lambda v: b_ub - A_ub @ v, "jac": lambda v: -A_ub},
            {"type": "eq", "fun": lambda v: A_eq @ v - b_eq, "jac": lambda v: A_eq},
        ]
        solution = minimize(lambda v: -v[-1], start, jac=lambda v: objective_grad, method="SLSQP",
                            constraints=constraints, bounds=program.bounds([(None, None)]),
                            options={"ftol": 1e-12, "maxiter": 1000})
        N = _normalize(solution.x[:kx])
        if np.any(program.violations(N) > 1e-6):
            N = N0
        status = SolverStatus.CONVERGED if solution.success else SolverStatus.STALLED
        return self._result(program, N, int(solution.nit), None, status)

    # -- sweeps and oracles ------------------------------------------------

    def region_sweep(self, channel: CompoundChannel, Q: Distribution,
                     delta_grid: Sequence[Union[float, Sequence[float]]], tol: Optional[float] = None,
                     threads: Optional[int] = None) -> List[SweepPoint]:
        """capacity_adaptive at every grid point; scalars apply to every state. Order is preserved."""

        vectors = [[float(d)] * channel.num_states if np.isscalar(d) else [float(v) for v in d]
                   for d in delta_grid]

        def cell(deltas: List[float]) -> SweepPoint:
            result = self.capacity_adaptive(AdaptiveProblem(channel=channel, target=Q, deltas=tuple(deltas)), tol)
            return SweepPoint(deltas=deltas, feasible=result.feasible, rate_nats=result.rate_nats,
                              rate_bits=result.rate_bits, active_states=result.active_states,
                              binding_constraints=result.binding_constraints)

        workers = max(1, threads or self.threads or settings.threads)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(cell, vectors))
        logger.info("Region sweep finished", cells=len(points), feasible=sum(p.feasible for p in points))
        return points

    def brute_force_search(self, problem: Problem, lattice_n: int,
                           threads: Optional[int] = None) -> OracleReport:
        """Best lattice type with denominator lattice_n meeting every constraint up to 1/lattice_n on V."""

        if lattice_n < 1:
            raise InputError("lattice_n must be positive", {"lattice_n": lattice_n})
        program = _Program(problem)
        count = lattice_size(lattice_n, program.kx)
        if count > settings.lattice_guard:
            logger.warning("Lattice guard tripped", points=count, guard=settings.lattice_guard)
            raise ResourceGuardError("type lattice too large to enumerate",
                                     {"points": count, "guard": settings.lattice_guard})
        points = lattice_counts(lattice_n, program.kx) / lattice_n
        radii = (np.asarray(problem.deltas, dtype=float) if program.kind == "adaptive"
                 else np.zeros(program.states)) + 1.0 / lattice_n

        def scan(bounds: Tuple[int, int]) -> Tuple[int, float, int]:
            chunk = points[bounds[0]:bounds[1]]
            ok = np.ones(chunk.shape[0], dtype=bool)
            for s in range(program.states):
                ok &= np.abs(chunk @ program.kernels_z[s] - program.targets[s]).sum(axis=1) <= radii[s]
            if not ok.any():
                return 0, -math.inf, -1
            values = np.where(ok, program.lattice_objective(chunk), -np.inf)
            best = int(np.argmax(values))
            return int(ok.sum()), float(values[best]), bounds[0] + best

        workers = max(1, threads or self.threads or settings.threads)
        step = max(1, math.ceil(count / workers))
        chunks = [(lo, min(lo + step, count)) for lo in range(0, count, step)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(scan, chunks))
        feasible_points = sum(p[0] for p in parts)
        _, rate, index = max(parts, key=lambda p: p[1])
        optimizer = _as_distribution(points[index], program) if feasible_points else None
        return OracleReport(lattice_n=lattice_n, lattice_points=count, feasible_points=feasible_points,
                            rate_nats=rate if feasible_points else None,
                            rate_bits=nats_to_bits(rate) if feasible_points else None,
                            optimizer=optimizer)

    def brute_force_capacity(self, problem: Problem, lattice_n: int, threads: Optional[int] = None) -> float:
        report = self.brute_force_search(problem, lattice_n, threads)
        return report.rate_nats if report.rate_nats is not None else -math.inf


# Global solver instance
capacity_solver = CapacitySolver()


def feasibility_multiple(problem: MultipleProblem) -> Tuple[bool, Optional[Distribution]]:
    return capacity_solver.feasibility_multiple(problem)


def feasibility_adaptive(problem: AdaptiveProblem) -> Tuple[bool, Optional[Distribution]]:
    return capacity_solver.feasibility_adaptive(problem)


def capacity_multiple(problem: MultipleProblem, tol: Optional[float] = None) -> CapacityResult:
    return capacity_solver.capacity_multiple(problem, tol)


def capacity_adaptive(problem: AdaptiveProblem, tol: Optional[float] = None) -> CapacityResult:
    return capacity_solver.capacity_adaptive(problem, tol)


def region_sweep(channel: CompoundChannel, Q: Distribution, delta_grid: Sequence[Union[float, Sequence[float]]],
                 tol: Optional[float] = None, threads: Optional[int] = None) -> List[SweepPoint]:
    return capacity_solver.region_sweep(channel, Q, delta_grid, tol, threads)


def brute_force_capacity(problem: Problem, lattice_n: int, threads: Optional[int] = None) -> float:
    return capacity_solver.brute_force_capacity(problem, lattice_n, threads)


def epigraph_capacity(problem: Problem) -> CapacityResult:
    return capacity_solver.epigraph_capacity(problem)
