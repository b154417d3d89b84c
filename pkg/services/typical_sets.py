"""Strong typicality predicates, the epsilon_m / delta_t quantities, closed-form size and
probability brackets, and the exact (type-class / exhaustive / Monte Carlo) oracles they are
checked against.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Optional, Sequence, Union

import numpy as np

from config.logger import get_logger
from config.settings import settings
from models.distributions import Distribution, JointDistribution, Kernel
from models.errors import InputError, PreconditionError, ResourceGuardError
from models.schemas import (
    BoundReport,
    EnumerationResult,
    MonteCarloEstimate,
    TypicalityParams,
    TypicalityTier,
)
from services import rng as rngs
from services.info_measures import conditional_entropy, conditional_of, joint_entropy, kl_divergence, mutual_information
from services.types_core import joint_counts, lattice_counts, lattice_size

logger = get_logger()

Measure = Union[Distribution, JointDistribution]

# Sequences per enumeration chunk handed to one worker.
ENUMERATION_CHUNK = 1 << 18
# Symbols per Monte Carlo batch.
SAMPLE_BATCH_SYMBOLS = 1 << 22

# Exponent above which exp() overflows a double.
_MAX_EXP = 709.0


def _exp(value: float) -> float:
    return math.exp(value) if value < _MAX_EXP else math.inf


def epsilon_m(p: Measure, epsilon: float) -> float:
    """-epsilon * log(smallest positive entry of p)."""

    positive = p.probs[p.probs > 0]
    return float(-epsilon * np.log(positive.min()))


def log_delta_t(n: int, epsilon: float, joint_alphabet_size: int) -> float:
    k = joint_alphabet_size
    return k * math.log(n + 1) - n * epsilon**2 / (2 * k**2)


def delta_t(n: int, epsilon: float, joint_alphabet_size: int) -> float:
    """(n+1)^K exp(-n eps^2 / (2 K^2)) with K = |X||Y|; >= 1 means the bound it enters is vacuous."""

    if n < 1 or not epsilon > 0 or joint_alphabet_size < 1:
        raise InputError("delta_t needs n >= 1, epsilon > 0 and a positive alphabet size",
                         {"n": n, "epsilon": epsilon, "size": joint_alphabet_size})
    return _exp(log_delta_t(n, epsilon, joint_alphabet_size))


def typicality_mask(counts: np.ndarray, n: int, probs: np.ndarray, epsilon: float) -> np.ndarray:
    """Two-clause strong typicality of count arrays (..., *probs.shape) against probs.

    Every type entry must be within strictly less than epsilon / probs.size of probs, and
    cells where probs is zero must have zero count.
    """

    axes = tuple(range(-probs.ndim, 0))
    close = np.all(np.abs(counts / n - probs) < epsilon / probs.size, axis=axes)
    on_support = np.all((counts == 0) | (probs > 0), axis=axes)
    return close & on_support


def _encode_pair(pair: Sequence[Sequence[Any]], P: JointDistribution):
    seq_x, seq_y = pair
    x = P.x_alphabet.encode(seq_x)
    y = P.y_alphabet.encode(seq_y)
    if x.size != y.size:
        raise InputError("sequences have different lengths", {"x": int(x.size), "y": int(y.size)})
    if x.size == 0:
        raise InputError("sequences must be nonempty")
    return x, y


def is_strongly_typical(seq: Sequence[Any], Q: Distribution, epsilon: float) -> bool:
    """Single-sequence strong typicality: |P_x(a) - Q(a)| < epsilon/|X| and zero-support clause."""

    x = Q.alphabet.encode(seq)
    if x.size == 0:
        raise InputError("sequence must be nonempty")
    counts = np.bincount(x, minlength=Q.size)
    return bool(typicality_mask(counts, x.size, Q.probs, epsilon))


def is_strongly_jointly_typical(pair: Sequence[Sequence[Any]], P: JointDistribution, epsilon: float) -> bool:
    x, y = _encode_pair(pair, P)
    counts = joint_counts(x, y, *P.shape)
    return bool(typicality_mask(counts, x.size, P.probs, epsilon))


def is_conditionally_typical(y: Sequence[Any], x: Sequence[Any], P: JointDistribution, epsilon: float) -> bool:
    """y lies in the conditional typical set of P given x."""
    return is_strongly_jointly_typical((x, y), P, epsilon)


def precondition_tier(x: Sequence[Any], Q: Distribution, epsilon: float, y_size: int) -> TypicalityTier:
    """Strictest marginal neighborhood x falls in; raises when x is not typical at epsilon."""

    if is_strongly_typical(x, Q, epsilon / (2 * y_size)):
        return TypicalityTier.STRICT
    if is_strongly_typical(x, Q, epsilon):
        return TypicalityTier.BASE
    raise PreconditionError("conditioning sequence is not strongly typical for the marginal of P",
                            {"epsilon": epsilon})


def _report(quantity: str, lower: float, upper: float, em: float, dt: float,
            tier: Optional[TypicalityTier] = None, probability: bool = False) -> BoundReport:
    vacuous = lower <= 0 or (probability and upper > 1)
    return BoundReport(quantity=quantity, lower=lower, upper=upper, epsilon_m=em, delta_t=dt,
                       vacuous=vacuous, tier=tier)


def jointly_typical_set_size_bounds(P: JointDistribution, params: TypicalityParams) -> BoundReport:
    """(1 - delta_t) e^{n(H(P) - eps_m)} <= |typical set| <= e^{n(H(P) + eps_m)}."""

    n, eps = params.n, params.epsilon
    H = joint_entropy(P)
    em = epsilon_m(P, eps)
    dt = delta_t(n, eps, P.probs.size)
    lower = (1.0 - dt) * _exp(n * (H - em))
    return _report("jointly_typical_set_size", lower, _exp(n * (H + em)), em, dt)


def _conditional_setup(P: JointDistribution, x: Sequence[Any], params: TypicalityParams):
    Q = P.marginal_x()
    tier = precondition_tier(x, Q, params.epsilon, P.y_alphabet.size)
    return conditional_entropy(Q, conditional_of(P)), tier


def conditional_sequence_probability_bounds(P: JointDistribution, x: Sequence[Any],
                                            params: TypicalityParams) -> BoundReport:
    """Probability under p_{Y|X} of any single conditionally typical y: e^{-n(H_Q(J) +- eps_m)}."""

    HJ, tier = _conditional_setup(P, x, params)
    em = epsilon_m(P, params.epsilon)
    n = params.n
    return _report("conditional_sequence_probability", _exp(-n * (HJ + em)), _exp(-n * (HJ - em)),
                   em, 0.0, tier, probability=True)


def conditional_set_probability_bounds(P: JointDistribution, x: Sequence[Any],
                                       params: TypicalityParams) -> BoundReport:
    """Total p_{Y|X}-probability of the conditional typical set: at most 1, and more than
    1 - delta_t(n, eps/2) once x sits in the strict neighborhood."""

    _, tier = _conditional_setup(P, x, params)
    em = epsilon_m(P, params.epsilon)
    if tier is TypicalityTier.STRICT:
        dt = delta_t(params.n, params.epsilon / 2, P.probs.size)
        lower = 1.0 - dt
    else:
        dt, lower = 0.0, 0.0
    return _report("conditional_set_probability", lower, 1.0, em, dt, tier, probability=True)


def conditional_set_size_bounds(P: JointDistribution, x: Sequence[Any], params: TypicalityParams) -> BoundReport:
    HJ, tier = _conditional_setup(P, x, params)
    em = epsilon_m(P, params.epsilon)
    n = params.n
    upper = _exp(n * (HJ + em))
    if tier is TypicalityTier.STRICT:
        dt = delta_t(n, params.epsilon / 2, P.probs.size)
        lower = (1.0 - dt) * _exp(n * (HJ - em))
    else:
        dt, lower = 0.0, 0.0
    return _report("conditional_set_size", lower, upper, em, dt, tier)


def cross_probability_bound(P: JointDistribution, q_Y: Distribution, x: Sequence[Any],
                            params: TypicalityParams) -> BoundReport:
    """Probability that y drawn i.i.d. from q_Y lands in the conditional typical set of x.

    Exponents are I(P) + D(S || q_Y) with S the Y-marginal of P, widened by eps_m(P) + eps_m(q_Y).
    """

    if q_Y.size != P.y_alphabet.size:
        raise InputError("q_Y does not live on the Y alphabet of P")
    HJ, tier = _conditional_setup(P, x, params)
    n, eps = params.n, params.epsilon
    I = mutual_information(P)
    D = kl_divergence(P.marginal_y(), q_Y)
    em = epsilon_m(P, eps) + epsilon_m(q_Y, eps)
    if math.isinf(D):
        # Only y avoiding the zeros of q_Y carry mass: set size times the largest q_Y^n(y).
        upper = _exp(n * (HJ + epsilon_m(P, eps) + math.log(q_Y.probs.max())))
        return _report("cross_probability", 0.0, upper, em, 0.0, tier, probability=True)
    upper = _exp(-n * (I + D - em))
    if tier is TypicalityTier.STRICT:
        dt = delta_t(n, eps / 2, P.probs.size)
        lower = (1.0 - dt) * _exp(-n * (I + D + em))
    else:
        dt, lower = 0.0, 0.0
    return _report("cross_probability", lower, upper, em, dt, tier, probability=True)


# ---------------------------------------------------------------------------
# Exact oracles
# ---------------------------------------------------------------------------

def _pool_size(threads: Optional[int]) -> int:
    return max(1, threads or settings.threads or 1)


def _guard(count: int, what: str) -> None:
    if count > settings.enumeration_guard:
        logger.warning("Enumeration guard tripped", what=what, count=count, guard=settings.enumeration_guard)
        raise ResourceGuardError(f"{what} would enumerate {count} sequences",
                                 {"count": count, "guard": settings.enumeration_guard})


def _digits(lo: int, hi: int, base: int, n: int) -> np.ndarray:
    """Base-`base` digits (least significant first) of every integer in [lo, hi)."""

    index = np.arange(lo, hi, dtype=np.int64)
    powers = base ** np.arange(n, dtype=np.int64)
    return (index[:, None] // powers[None, :]) % base


def batch_counts(symbols: np.ndarray, cells: int) -> np.ndarray:
    """Per-row histograms of a (rows, n) array of cell indices."""

    rows = symbols.shape[0]
    offsets = (np.arange(rows, dtype=np.int64) * cells)[:, None]
    return np.bincount((symbols + offsets).ravel(), minlength=rows * cells).reshape(rows, cells)


def typical_set_size(P: JointDistribution, params: TypicalityParams) -> int:
    """Exact size of the strongly jointly typical set, summed over joint type classes."""

    n, cells = params.n, P.probs.size
    _guard(lattice_size(n, cells), "joint type lattice")
    counts = lattice_counts(n, cells)
    typical = typicality_mask(counts.reshape(-1, *P.shape), n, P.probs, params.epsilon)
    total = 0
    for row in counts[typical]:
        size = math.factorial(n)
        for c in row:
            size //= math.factorial(int(c))
        total += size
    return total


def exhaustive_typical_count(P: JointDistribution, params: TypicalityParams,
                             threads: Optional[int] = None) -> int:
    """Count typical pairs by scanning all (|X||Y|)^n joint sequences."""

    n, cells = params.n, P.probs.size
    total = cells**n
    _guard(total, "joint sequence space")

    def count(bounds) -> int:
        pairs = _digits(bounds[0], bounds[1], cells, n)
        mask = typicality_mask(batch_counts(pairs, cells).reshape(-1, *P.shape), n, P.probs, params.epsilon)
        return int(mask.sum())

    chunks = [(lo, min(lo + ENUMERATION_CHUNK, total)) for lo in range(0, total, ENUMERATION_CHUNK)]
    with ThreadPoolExecutor(max_workers=_pool_size(threads)) as pool:
        result = sum(pool.map(count, chunks))
    logger.debug("Exhaustive typical count", n=n, cells=cells, count=result)
    return result


def exhaustive_conditional_probability(P: JointDistribution, x: Sequence[Any], params: TypicalityParams,
                                       kernel: Optional[Kernel] = None, q_Y: Optional[Distribution] = None,
                                       threads: Optional[int] = None) -> EnumerationResult:
    """Scan every y in Y^n: size and probability of the conditional typical set of x.

    y is weighted by kernel (default: the conditional of P) or, when q_Y is given, i.i.d. q_Y.
    """

    x_enc = P.x_alphabet.encode(x)
    n, ky = x_enc.size, P.y_alphabet.size
    if n != params.n:
        raise InputError("x length differs from params.n", {"length": int(n), "n": params.n})
    total = ky**n
    _guard(total, "output sequence space")
    with np.errstate(divide="ignore"):
        if q_Y is not None:
            log_weights = np.tile(np.log(q_Y.probs), (P.x_alphabet.size, 1))
        else:
            J = kernel if kernel is not None else conditional_of(P)
            log_weights = np.log(np.nan_to_num(J.rows, nan=0.0))
    cells = P.probs.size

    def scan(bounds):
        ys = _digits(bounds[0], bounds[1], ky, n)
        counts = batch_counts(x_enc[None, :] * ky + ys, cells).reshape(-1, *P.shape)
        mask = typicality_mask(counts, n, P.probs, params.epsilon)
        probs = np.exp(log_weights[x_enc[None, :], ys].sum(axis=1))[mask]
        if probs.size == 0:
            return 0, 0.0, math.inf, -math.inf
        return int(mask.sum()), float(probs.sum()), float(probs.min()), float(probs.max())

    chunks = [(lo, min(lo + ENUMERATION_CHUNK, total)) for lo in range(0, total, ENUMERATION_CHUNK)]
    with ThreadPoolExecutor(max_workers=_pool_size(threads)) as pool:
        parts = list(pool.map(scan, chunks))
    size = sum(p[0] for p in parts)
    lowest = min(p[2] for p in parts)
    highest = max(p[3] for p in parts)
    return EnumerationResult(
        set_size=size,
        total_probability=math.fsum(p[1] for p in parts),
        min_sequence_probability=lowest if size else None,
        max_sequence_probability=highest if size else None,
        sequences_checked=total,
    )


def monte_carlo_conditional_probability(P: JointDistribution, x: Sequence[Any], params: TypicalityParams,
                                        samples: int, seed: int,
                                        kernel: Optional[Kernel] = None) -> MonteCarloEstimate:
    """Fraction of y ~ kernel(.|x) that are conditionally typical, with its standard error."""

    if samples < 1:
        raise InputError("samples must be positive")
    x_enc = P.x_alphabet.encode(x)
    n, ky = x_enc.size, P.y_alphabet.size
    J = kernel if kernel is not None else conditional_of(P)
    if np.any(~J.defined[x_enc]):
        raise InputError("kernel row is undefined for a symbol of x")
    rows = np.nan_to_num(J.rows, nan=0.0)
    generator = rngs.substream(seed, rngs.SAMPLING_STREAM)
    batch = max(1, SAMPLE_BATCH_SYMBOLS // n)
    hits, done = 0, 0
    while done < samples:
        size = min(batch, samples - done)
        ys = rngs.sample_through(generator, np.broadcast_to(x_enc, (size, n)), rows)
        counts = batch_counts(x_enc[None, :] * ky + ys, P.probs.size).reshape(-1, *P.shape)
        hits += int(typicality_mask(counts, n, P.probs, params.epsilon).sum())
        done += size
    estimate = hits / samples
    return MonteCarloEstimate(estimate=estimate,
                              standard_error=math.sqrt(max(estimate * (1 - estimate), 0.0) / samples),
                              samples=samples)
