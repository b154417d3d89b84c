"""Empirical types, variational distance, neighborhoods and pre-image membership.

All functions are pure; inputs are the frozen models from `models.distributions`.
"""

import itertools
import math
from typing import Any, Sequence, Union

import numpy as np

from models.distributions import Alphabet, Distribution, JointDistribution, Kernel
from models.errors import InputError

# Tolerance on V that stands in for exact equality (delta = 0 pre-images, matching PMFs).
EXACT_TOL = 1e-9

AlphabetLike = Union[Alphabet, int]


def as_alphabet(alphabet: AlphabetLike) -> Alphabet:
    return alphabet if isinstance(alphabet, Alphabet) else Alphabet(size=int(alphabet))


def _encode_nonempty(seq: Sequence[Any], alphabet: Alphabet) -> np.ndarray:
    encoded = alphabet.encode(seq)
    if encoded.size == 0:
        raise InputError("sequence must be nonempty")
    return encoded


def _check_same_alphabet(first: Alphabet, second: Alphabet) -> None:
    if not first.compatible(second):
        raise InputError("alphabet mismatch", {"left": first.size, "right": second.size})


def type_of_sequence(seq: Sequence[Any], alphabet: AlphabetLike) -> Distribution:
    """Empirical type P_x with denominator len(seq)."""

    alphabet = as_alphabet(alphabet)
    encoded = _encode_nonempty(seq, alphabet)
    counts = np.bincount(encoded, minlength=alphabet.size)
    return Distribution(probs=counts / encoded.size, denominator=int(encoded.size), alphabet=alphabet)


def joint_counts(x: np.ndarray, y: np.ndarray, x_size: int, y_size: int) -> np.ndarray:
    """Count matrix N(a, b | x, y) for already-encoded sequences."""
    return np.bincount(x * y_size + y, minlength=x_size * y_size).reshape(x_size, y_size)


def joint_type(seq_x: Sequence[Any], seq_y: Sequence[Any],
               x_alphabet: AlphabetLike, y_alphabet: AlphabetLike) -> JointDistribution:
    x_alphabet, y_alphabet = as_alphabet(x_alphabet), as_alphabet(y_alphabet)
    x = _encode_nonempty(seq_x, x_alphabet)
    y = _encode_nonempty(seq_y, y_alphabet)
    if x.size != y.size:
        raise InputError("sequences have different lengths", {"x": int(x.size), "y": int(y.size)})
    counts = joint_counts(x, y, x_alphabet.size, y_alphabet.size)
    return JointDistribution(probs=counts / x.size, denominator=int(x.size),
                             x_alphabet=x_alphabet, y_alphabet=y_alphabet)


def conditional_type(seq_y: Sequence[Any], seq_x: Sequence[Any],
                     x_alphabet: AlphabetLike, y_alphabet: AlphabetLike) -> Kernel:
    """Conditional type P_{y|x}; rows of symbols absent from x are flagged undefined."""

    joint = joint_type(seq_x, seq_y, x_alphabet, y_alphabet)
    row_mass = joint.probs.sum(axis=1)
    defined = row_mass > 0
    rows = np.full(joint.shape, np.nan)
    rows[defined] = joint.probs[defined] / row_mass[defined, None]
    return Kernel(rows=rows, defined=defined,
                  input_alphabet=joint.x_alphabet, output_alphabet=joint.y_alphabet)


def compose(marginal: Distribution, kernel: Kernel) -> JointDistribution:
    """Chain rule P = QJ; rows of J with Q(a) = 0 may be undefined."""

    _check_same_alphabet(marginal.alphabet, kernel.input_alphabet)
    needed = marginal.probs > 0
    if np.any(needed & ~kernel.defined):
        raise InputError("kernel row is undefined where the marginal has mass",
                         {"rows": np.flatnonzero(needed & ~kernel.defined).tolist()})
    rows = np.where(kernel.defined[:, None], kernel.rows, 0.0)
    return JointDistribution(probs=marginal.probs[:, None] * rows,
                             x_alphabet=kernel.input_alphabet, y_alphabet=kernel.output_alphabet)


def variational_distance(P: Distribution, Q: Distribution) -> float:
    _check_same_alphabet(P.alphabet, Q.alphabet)
    return float(np.abs(P.probs - Q.probs).sum())


def in_delta_neighborhood(Q: Distribution, N: Distribution, delta: float) -> bool:
    if delta < 0:
        raise InputError("delta must be nonnegative", {"delta": delta})
    return variational_distance(Q, N) <= delta


def push_forward(N: Distribution, kernel: Kernel) -> Distribution:
    """Output distribution M(b) = sum_a N(a) kernel[a][b]."""

    _check_same_alphabet(N.alphabet, kernel.input_alphabet)
    if np.any((N.probs > 0) & ~kernel.defined):
        raise InputError("kernel row is undefined where the input has mass")
    rows = np.where(kernel.defined[:, None], kernel.rows, 0.0)
    return Distribution(probs=N.probs @ rows, alphabet=kernel.output_alphabet)


def delta_preimage_membership(N: Distribution, Q: Distribution, kernel: Kernel, delta: float) -> bool:
    """N lies in the delta-pre-image of Q under kernel (delta = 0: exact pre-image within EXACT_TOL)."""

    if delta < 0:
        raise InputError("delta must be nonnegative", {"delta": delta})
    image = push_forward(N, kernel)
    _check_same_alphabet(image.alphabet, Q.alphabet)
    return variational_distance(Q, image) <= delta + (EXACT_TOL if delta == 0 else 0.0)


def lattice_size(n: int, k: int) -> int:
    """Number of types with denominator n over k symbols."""
    return math.comb(n + k - 1, k - 1)


def lattice_counts(n: int, k: int) -> np.ndarray:
    """Every count vector of length k summing to n, one per row (stars and bars)."""

    if k == 1:
        return np.array([[n]], dtype=np.int64)
    bars = np.fromiter(itertools.chain.from_iterable(itertools.combinations(range(n + k - 1), k - 1)),
                       dtype=np.int64).reshape(-1, k - 1)
    edges = np.hstack([np.full((bars.shape[0], 1), -1), bars, np.full((bars.shape[0], 1), n + k - 1)])
    return np.diff(edges, axis=1) - 1


def representative_sequence(Q: Distribution, n: int) -> np.ndarray:
    """A length-n sequence whose type is the denominator-n type nearest Q (largest remainders)."""

    if n < 1:
        raise InputError("sequence length must be positive", {"n": n})
    scaled = Q.probs * n
    counts = np.floor(scaled).astype(np.int64)
    short = n - int(counts.sum())
    if short > 0:
        counts[np.argsort(-(scaled - counts), kind="stable")[:short]] += 1
    return np.repeat(np.arange(Q.size), counts)
