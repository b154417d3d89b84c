import math
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_serializer, model_validator

from config.settings import settings
from models.distributions import (
    PROB_TOL,
    Alphabet,
    ChannelState,
    CompoundChannel,
    Distribution,
    Kernel,
)
from models.errors import InputError, SpecError


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


# ---------------------------------------------------------------------------
# Typical sets
# ---------------------------------------------------------------------------

class TypicalityTier(str, Enum):
    """Which marginal-typicality neighborhood the conditioning sequence x lies in."""
    BASE = "base"        # x typical at epsilon
    STRICT = "strict"    # x typical at epsilon / (2|Y|)


class TypicalityParams(BaseModel):
    """The epsilon and n of a strongly typical set."""
    model_config = ConfigDict(frozen=True)

    epsilon: float = Field(..., description="Typicality slack, > 0")
    n: int = Field(..., description="Blocklength, >= 1")

    @model_validator(mode="after")
    def _check(self) -> "TypicalityParams":
        if not self.epsilon > 0:
            raise InputError("epsilon must be positive", {"epsilon": self.epsilon})
        if self.n < 1:
            raise InputError("n must be positive", {"n": self.n})
        return self


class BoundReport(BaseModel):
    """Closed-form bracket [lower, upper] with the epsilon_m and delta_t that entered it."""
    lower: float = Field(..., description="Raw lower bracket value (may be <= 0 when vacuous)")
    upper: float = Field(..., description="Raw upper bracket value")
    epsilon_m: float = Field(..., description="epsilon_m of the matching PMF")
    delta_t: float = Field(..., ge=0, description="delta_t entering the lower bracket (0 if none)")
    vacuous: bool = Field(default=False, description="Bracket carries no information as evaluated")
    tier: Optional[TypicalityTier] = Field(None, description="Precondition tier met by x")
    quantity: str = Field(..., description="What the bracket bounds")
    exact: Optional[float] = Field(None, description="Exhaustively computed value, when requested")

    @model_validator(mode="after")
    def _check(self) -> "BoundReport":
        if self.lower > self.upper * (1 + 1e-12) + 1e-300:
            raise InputError("bound report has lower > upper", {"lower": self.lower, "upper": self.upper})
        return self


class EnumerationResult(BaseModel):
    """Exhaustively computed facts about a conditional typical set."""
    set_size: int
    total_probability: float
    min_sequence_probability: Optional[float] = None
    max_sequence_probability: Optional[float] = None
    sequences_checked: int


class MonteCarloEstimate(BaseModel):
    estimate: float
    standard_error: float
    samples: int


# ---------------------------------------------------------------------------
# Capacity problems and results
# ---------------------------------------------------------------------------

class MultipleProblem(BaseModel):
    """Per-state interference targets Q_s (exact pre-image constraints)."""
    model_config = ConfigDict(frozen=True)

    channel: CompoundChannel
    targets: Tuple[Distribution, ...]

    @model_validator(mode="after")
    def _check(self) -> "MultipleProblem":
        if len(self.targets) != self.channel.num_states:
            raise InputError("one target per channel state is required",
                             {"targets": len(self.targets), "states": self.channel.num_states})
        for s, target in enumerate(self.targets):
            if target.size != self.channel.z_alphabet.size:
                raise InputError("target does not live on the Z alphabet", {"state": s})
        return self


class AdaptiveProblem(BaseModel):
    """Common interference target Q with per-state precisions Delta_s."""
    model_config = ConfigDict(frozen=True)

    channel: CompoundChannel
    target: Distribution
    deltas: Tuple[float, ...]

    @model_validator(mode="after")
    def _check(self) -> "AdaptiveProblem":
        if len(self.deltas) != self.channel.num_states:
            raise InputError("one delta per channel state is required",
                             {"deltas": len(self.deltas), "states": self.channel.num_states})
        if any(not d >= 0 for d in self.deltas):
            raise InputError("deltas must be nonnegative", {"deltas": list(self.deltas)})
        if self.target.size != self.channel.z_alphabet.size:
            raise InputError("target does not live on the Z alphabet")
        return self


class SolverStatus(str, Enum):
    CONVERGED = "converged"
    ITERATION_CAP = "iteration_cap"
    STALLED = "stalled"
    INFEASIBLE = "infeasible"


class CapacityResult(BaseModel):
    """Optimal rate, optimizer and diagnostics of a max-min capacity program."""
    feasible: bool
    rate_nats: Optional[float] = None
    rate_bits: Optional[float] = None
    optimizer: Optional[Distribution] = None
    per_state_mi: List[float] = Field(default_factory=list)
    active_states: List[int] = Field(default_factory=list, description="States within 1e-6 of the minimum")
    induced_targets: List[Distribution] = Field(default_factory=list,
                                                description="Interference output N* kernel_z[s] per state")
    binding_constraints: List[int] = Field(default_factory=list,
                                           description="States whose interference constraint is tight")
    iterations: int = 0
    duality_gap_estimate: Optional[float] = None
    status: SolverStatus = SolverStatus.CONVERGED
    concavity_violations: int = 0
    boundary_smoothed: bool = False

    @model_validator(mode="after")
    def _check(self) -> "CapacityResult":
        if not self.feasible and (self.rate_nats is not None or self.rate_bits is not None):
            raise InputError("infeasible results carry no rate")
        if self.feasible and self.per_state_mi and self.rate_nats is not None:
            if abs(self.rate_nats - min(self.per_state_mi)) > 1e-9:
                raise InputError("rate must equal the minimum per-state mutual information")
        return self


class FeasibilityReport(BaseModel):
    feasible: bool
    witness: Optional[Distribution] = None
    interior: bool = Field(default=False, description="Witness has strictly positive slack")


class SweepPoint(BaseModel):
    deltas: List[float]
    feasible: bool
    rate_nats: Optional[float] = None
    rate_bits: Optional[float] = None
    active_states: List[int] = Field(default_factory=list)
    binding_constraints: List[int] = Field(default_factory=list)


class SweepTable(BaseModel):
    points: List[SweepPoint]


class OracleReport(BaseModel):
    """Lattice brute-force maximum; rates are None when no lattice point is feasible."""
    lattice_n: int
    lattice_points: int
    feasible_points: int
    rate_nats: Optional[float] = None
    rate_bits: Optional[float] = None
    optimizer: Optional[Distribution] = None


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------

class CodebookMode(str, Enum):
    FRESH = "fresh"          # new codebook per trial
    SHARED = "shared"        # one codebook for the whole batch
    ENSEMBLE = "ensemble"    # fresh-codebook ensemble, competitors sampled from their exact law


class SimConfig(BaseModel):
    """Everything that determines a simulation run, seed included."""
    model_config = ConfigDict(frozen=True)

    channel: CompoundChannel
    input_pmf: Distribution
    rate_nats: float = Field(..., description="Communication rate R in nats")
    blocklength: int
    epsilon: float = Field(default_factory=lambda: settings.decoder_epsilon)
    trials: int
    seed: int
    target: Optional[Distribution] = Field(None, description="Common interference type Q")
    deltas: Optional[Tuple[float, ...]] = Field(None, description="Per-state precisions for the adaptive check")
    targets: Optional[Tuple[Distribution, ...]] = Field(None, description="Per-state types Q_s for the multiple check")
    rate_slack: float = Field(default_factory=lambda: settings.rate_slack)
    codebook_mode: CodebookMode = CodebookMode.FRESH
    coordination_threshold: float = Field(default_factory=lambda: settings.coordination_threshold)
    histogram_bins: int = 20
    threads: Optional[int] = None

    @model_validator(mode="after")
    def _check(self) -> "SimConfig":
        states = self.channel.num_states
        if self.rate_nats < 0:
            raise InputError("rate must be nonnegative", {"rate_nats": self.rate_nats})
        if self.blocklength < 1 or self.trials < 1:
            raise InputError("blocklength and trials must be positive")
        if not self.epsilon > 0:
            raise InputError("decoder epsilon must be positive")
        if not 0 <= self.seed < 2**64:
            raise InputError("seed must be a 64-bit unsigned integer", {"seed": self.seed})
        if self.input_pmf.size != self.channel.x_alphabet.size:
            raise InputError("input PMF does not live on the X alphabet")
        if (self.target is None) == (self.targets is None):
            raise InputError("give either a common target (adaptive check) or per-state targets (multiple check)")
        if self.targets is not None and len(self.targets) != states:
            raise InputError("one target per state is required")
        if any(t.size != self.channel.z_alphabet.size for t in self.state_targets()):
            raise InputError("targets must live on the Z alphabet")
        if self.deltas is not None:
            if self.target is None or len(self.deltas) != states or any(d < 0 for d in self.deltas):
                raise InputError("deltas need a common target and one nonnegative value per state")
        return self

    def state_targets(self) -> List[Distribution]:
        if self.targets is not None:
            return list(self.targets)
        return [self.target] * self.channel.num_states  # type: ignore[list-item]

    @property
    def log_codebook_size(self) -> float:
        return max(0.0, self.blocklength * (self.rate_nats - self.rate_slack))


class Codebook(BaseModel):
    """Codewords x^C(m), one row per message."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    codewords: np.ndarray

    @model_validator(mode="after")
    def _check(self) -> "Codebook":
        if self.codewords.ndim != 2 or self.codewords.shape[0] < 1:
            raise InputError("codebook must be a nonempty matrix of codewords")
        return self

    @property
    def size(self) -> int:
        return int(self.codewords.shape[0])

    @property
    def blocklength(self) -> int:
        return int(self.codewords.shape[1])


class DecodeFailure(str, Enum):
    NONE_TYPICAL = "none_typical"
    AMBIGUOUS = "ambiguous"


class DecodeOutcome(BaseModel):
    message: Optional[int] = None
    failure: Optional[DecodeFailure] = None
    certifying_states: List[int] = Field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.message is not None


class SimReport(BaseModel):
    """Per-state decoding and coordination statistics of a simulation batch."""
    per_state_error_rate: List[float]
    per_state_error_ci: List[Tuple[float, float]]
    max_state_error: float
    per_state_none_typical: List[int]
    per_state_ambiguous: List[int]
    per_state_wrong_message: List[int]
    per_state_mean_V: List[float]
    per_state_V_ci: List[Tuple[float, float]]
    per_state_exceedance: List[float]
    per_state_exceedance_ci: List[Tuple[float, float]]
    per_state_coordination_met: Optional[List[bool]] = None
    per_state_V_histogram: List[List[int]]
    histogram_edges: List[float]
    coordination_threshold: float
    trials_run: int
    seed_used: int
    codebook_mode: CodebookMode
    blocklength: int
    rate_nats: float
    rate_bits: float
    log_codebook_size: float


class CoordinationReport(BaseModel):
    """Exceedance probability Pr(V(Q, P_z) > threshold) across blocklengths."""
    blocklengths: List[int]
    threshold: float
    exceedance: List[float]
    exceedance_ci: List[Tuple[float, float]]
    mean_V: List[float]
    trials: int
    decreasing: bool


class MeanTypeReport(BaseModel):
    expected: List[float]
    empirical_mean: List[float]
    standard_error: List[float]
    samples: int


# ---------------------------------------------------------------------------
# Channel spec files and run records
# ---------------------------------------------------------------------------

class AlphabetSpec(BaseModel):
    size: int = Field(..., ge=1)
    labels: Optional[List[str]] = None


class AlphabetsSpec(BaseModel):
    x: AlphabetSpec
    y: AlphabetSpec
    z: AlphabetSpec


class StateSpec(BaseModel):
    kernel_y: List[List[float]]
    kernel_z: List[List[float]]


class ChannelSpecFile(BaseModel):
    """On-disk JSON description of a compound channel."""
    alphabets: AlphabetsSpec
    states: List[StateSpec] = Field(..., min_length=1)
    name: Optional[str] = None
    description: Optional[str] = None

    @model_validator(mode="after")
    def _check(self) -> "ChannelSpecFile":
        sizes = {"kernel_y": self.alphabets.y.size, "kernel_z": self.alphabets.z.size}
        x_size = self.alphabets.x.size
        for s, state in enumerate(self.states):
            for label in ("kernel_y", "kernel_z"):
                matrix = getattr(state, label)
                location = f"states.{s}.{label}"
                if len(matrix) != x_size:
                    raise SpecError(f"{location} has {len(matrix)} rows, expected |X| = {x_size}",
                                    {"location": location, "state": s, "kernel": label})
                for r, row in enumerate(matrix):
                    row_location = f"{location}.{r}"
                    if len(row) != sizes[label]:
                        raise SpecError(f"{row_location} has {len(row)} entries, expected {sizes[label]}",
                                        {"location": row_location, "state": s, "kernel": label, "row": r})
                    if any((not math.isfinite(v)) or v < 0 for v in row):
                        raise SpecError(f"{row_location} has a negative or non-finite entry",
                                        {"location": row_location, "state": s, "kernel": label, "row": r})
                    total = math.fsum(row)
                    if abs(total - 1.0) > PROB_TOL:
                        raise SpecError(f"{row_location} sums to {total!r}; rows must be stochastic",
                                        {"location": row_location, "state": s, "kernel": label,
                                         "row": r, "sum": total})
        return self

    def to_channel(self) -> CompoundChannel:
        def alphabet(spec: AlphabetSpec) -> Alphabet:
            return Alphabet(size=spec.size, labels=tuple(spec.labels) if spec.labels else None)

        x, y, z = alphabet(self.alphabets.x), alphabet(self.alphabets.y), alphabet(self.alphabets.z)
        states = tuple(
            ChannelState(kernel_y=Kernel(rows=state.kernel_y, input_alphabet=x, output_alphabet=y),
                         kernel_z=Kernel(rows=state.kernel_z, input_alphabet=x, output_alphabet=z))
            for state in self.states)
        return CompoundChannel(x_alphabet=x, y_alphabet=y, z_alphabet=z, states=states,
                               name=self.name, description=self.description)

    @classmethod
    def from_channel(cls, channel: CompoundChannel) -> "ChannelSpecFile":
        def alphabet(a: Alphabet) -> AlphabetSpec:
            return AlphabetSpec(size=a.size, labels=list(a.labels) if a.labels else None)

        return cls(
            alphabets=AlphabetsSpec(x=alphabet(channel.x_alphabet), y=alphabet(channel.y_alphabet),
                                    z=alphabet(channel.z_alphabet)),
            states=[StateSpec(kernel_y=state.kernel_y.rows.tolist(), kernel_z=state.kernel_z.rows.tolist())
                    for state in channel.states],
            name=channel.name,
            description=channel.description,
        )


# Payload kind each subcommand must emit.
COMMAND_PAYLOADS: Dict[str, str] = {
    "capacity": "CapacityResult",
    "adaptive": "CapacityResult",
    "feasible": "FeasibilityReport",
    "sweep": "SweepTable",
    "simulate": "SimReport",
    "bounds": "BoundReport",
    "oracle": "OracleReport",
}


class RunRecord(BaseModel):
    """Everything needed to reproduce a CLI run, plus its result."""
    command: str
    config: Dict[str, Any]
    toolkit_version: str = Field(default_factory=lambda: settings.toolkit_version)
    timestamp: datetime = Field(default_factory=_utcnow)
    duration_seconds: float
    payload_kind: str
    payload: Dict[str, Any]

    @model_validator(mode="after")
    def _check(self) -> "RunRecord":
        expected = COMMAND_PAYLOADS.get(self.command)
        if expected is None or expected != self.payload_kind:
            raise InputError("payload kind does not match the command",
                             {"command": self.command, "payload_kind": self.payload_kind})
        return self

    @field_serializer("timestamp")
    def _dump_timestamp(self, timestamp: datetime) -> str:
        return timestamp.isoformat()


class ErrorResponse(BaseModel):
    """Model for error responses."""
    error_code: str = Field(..., description="Error code identifier")
    error_message: str = Field(..., description="Human-readable error message")
    details: Optional[Dict[str, Any]] = Field(None, description="Additional error details")
    timestamp: datetime = Field(default_factory=_utcnow, description="Error timestamp")

    @field_serializer("timestamp")
    def _dump_timestamp(self, timestamp: datetime) -> str:
        return timestamp.isoformat()
