"""Entropy, conditional entropy, KL-divergence and mutual information, all in nats."""

import math
from typing import Literal, Tuple, Union, overload

import numpy as np
from scipy.special import entr, rel_entr

from config.logger import get_logger
from models.distributions import Distribution, JointDistribution, Kernel
from models.errors import InputError
from services.types_core import compose

logger = get_logger()

# Interior offset used when a supergradient is requested at the simplex boundary.
BOUNDARY_SMOOTHING = 1e-12

Measure = Union[Distribution, JointDistribution]


def nats_to_bits(value: float) -> float:
    return value / math.log(2.0)


def entropy(P: Distribution) -> float:
    return float(entr(P.probs).sum())


def joint_entropy(P: JointDistribution) -> float:
    return float(entr(P.probs).sum())


def _row_entropies(rows: np.ndarray) -> np.ndarray:
    return entr(np.nan_to_num(rows, nan=0.0)).sum(axis=1)


def conditional_entropy(Q: Distribution, J: Kernel) -> float:
    """H_Q(J) = sum_a Q(a) H(J(.|a)); rows with Q(a) = 0 contribute nothing."""

    if Q.size != J.input_alphabet.size:
        raise InputError("marginal and kernel input alphabets differ")
    weighted = Q.probs > 0
    if np.any(weighted & ~J.defined):
        raise InputError("kernel row is undefined where the marginal has mass")
    return float(np.sum(Q.probs[weighted] * _row_entropies(J.rows[weighted])))


def kl_divergence(P: Measure, B: Measure) -> float:
    """D(P || B); returns +inf when the support of P is not inside the support of B."""

    if type(P) is not type(B) or P.probs.shape != B.probs.shape:
        raise InputError("KL-divergence arguments must have the same shape",
                         {"left": list(P.probs.shape), "right": list(B.probs.shape)})
    return float(rel_entr(P.probs, B.probs).sum())


def conditional_of(P: JointDistribution) -> Kernel:
    """Marginal conditional J of P (rows with zero marginal mass flagged undefined)."""

    row_mass = P.probs.sum(axis=1)
    defined = row_mass > 0
    rows = np.full(P.shape, np.nan)
    rows[defined] = P.probs[defined] / row_mass[defined, None]
    return Kernel(rows=rows, defined=defined, input_alphabet=P.x_alphabet, output_alphabet=P.y_alphabet)


def mutual_information(P: JointDistribution) -> float:
    """I(P) = D(P || p_X p_Y)."""

    product = np.outer(P.probs.sum(axis=1), P.probs.sum(axis=0))
    return max(0.0, float(rel_entr(P.probs, product).sum()))


def mutual_information_array(input_probs: np.ndarray, rows: np.ndarray) -> float:
    """I(NJ) = H(NJ) - sum_a N(a) H(J(.|a)) on raw arrays; also valid off the simplex."""

    output = input_probs @ rows
    return float(entr(output).sum() - input_probs @ _row_entropies(rows))


def mi_of_input_through(N: Distribution, J: Kernel) -> float:
    return mutual_information(compose(N, J))


def supergradient_array(input_probs: np.ndarray, rows: np.ndarray) -> Tuple[np.ndarray, bool]:
    """Gradient D(J(.|a) || NJ) - 1 of I(NJ) in N; second value flags boundary smoothing."""

    smoothed = bool(np.any(input_probs <= 0))
    if smoothed:
        input_probs = (input_probs + BOUNDARY_SMOOTHING) / (1.0 + BOUNDARY_SMOOTHING * input_probs.size)
    output = input_probs @ rows
    return rel_entr(rows, output[None, :]).sum(axis=1) - 1.0, smoothed


@overload
def mi_supergradient(N: Distribution, J: Kernel, *, report_smoothing: Literal[False] = ...) -> np.ndarray: ...


@overload
def mi_supergradient(N: Distribution, J: Kernel, *,
                     report_smoothing: Literal[True]) -> Tuple[np.ndarray, bool]: ...


def mi_supergradient(N: Distribution, J: Kernel, *, report_smoothing: bool = False):
    """Supergradient of N -> I(NJ); with report_smoothing, also whether N was moved off the boundary."""

    if N.size != J.input_alphabet.size:
        raise InputError("input distribution and kernel alphabets differ")
    if not J.is_total:
        raise InputError("supergradient needs a kernel with every row defined")
    gradient, smoothed = supergradient_array(N.probs, J.rows)
    if smoothed:
        logger.warning("Supergradient evaluated at smoothed interior point", input=N.probs.tolist())
    return (gradient, smoothed) if report_smoothing else gradient
