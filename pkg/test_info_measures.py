"""Tests for entropy, KL-divergence, mutual information and its supergradient."""

import math

import numpy as np
import pytest

from models.distributions import Distribution, JointDistribution, Kernel
from models.errors import InputError
from services.info_measures import (
    conditional_entropy,
    conditional_of,
    entropy,
    joint_entropy,
    kl_divergence,
    mi_of_input_through,
    mi_supergradient,
    mutual_information,
    mutual_information_array,
    nats_to_bits,
)

NOISY = Kernel(rows=[[0.9, 0.1], [0.2, 0.8]])
LOG2 = math.log(2.0)


def _h(p: float) -> float:
    return -sum(v * math.log(v) for v in (p, 1.0 - p) if v > 0)


def test_entropy_examples():
    assert entropy(Distribution.point(2, 0)) == 0.0, "Point mass has zero entropy"
    assert math.isclose(entropy(Distribution.uniform(2)), LOG2, rel_tol=1e-12), "Uniform binary is log 2"
    assert math.isclose(entropy(Distribution(probs=[0.75, 0.25])), 0.562335144618808, rel_tol=1e-12), \
        "h(1/4) in nats"
    assert math.isclose(nats_to_bits(LOG2), 1.0), "log 2 nats is one bit"


def test_conditional_entropy_examples():
    rng = np.random.default_rng(3)
    Q = Distribution(probs=rng.dirichlet(np.ones(3)))
    deterministic = Kernel(rows=[[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    assert conditional_entropy(Q, deterministic) == 0.0, "Deterministic kernel has zero conditional entropy"

    assert math.isclose(conditional_entropy(Distribution.uniform(2), Kernel.constant(2, [0.5, 0.5])), LOG2), \
        "Fair coin rows give log 2"
    expected = (_h(0.9) + _h(0.2)) / 2
    assert math.isclose(conditional_entropy(Distribution.uniform(2), NOISY), expected, rel_tol=1e-12), \
        f"Expected {expected}"
    assert math.isclose(expected, 0.412743, abs_tol=1e-6), "Reference value of (h(0.9) + h(0.2)) / 2"


def test_conditional_entropy_ignores_undefined_rows_without_mass():
    partial = Kernel(rows=[[0.5, 0.5], [np.nan, np.nan]], defined=[True, False])
    assert math.isclose(conditional_entropy(Distribution.point(2, 0), partial), LOG2), \
        "Rows with zero marginal mass do not contribute"
    with pytest.raises(InputError):
        conditional_entropy(Distribution.uniform(2), partial)


def test_kl_divergence_examples():
    P = Distribution(probs=[0.2, 0.8])
    assert kl_divergence(P, P) == 0.0, "D(P||P) = 0"
    assert math.isclose(kl_divergence(Distribution.point(2, 0), Distribution.uniform(2)), LOG2), \
        "D((1,0)||(1/2,1/2)) = log 2"
    assert kl_divergence(Distribution.uniform(2), Distribution.point(2, 0)) == math.inf, \
        "Support violation gives +inf"
    with pytest.raises(InputError):
        kl_divergence(P, JointDistribution(probs=[[0.5, 0.5]]))


def test_mutual_information_examples():
    product = JointDistribution(probs=np.outer([0.3, 0.7], [0.6, 0.4]))
    assert mutual_information(product) == pytest.approx(0.0, abs=1e-12), "Independent joint has zero MI"

    diagonal = JointDistribution(probs=np.diag([0.5, 0.5]))
    assert math.isclose(mutual_information(diagonal), LOG2), "Y = X uniform gives log 2"

    expected = _h(0.55) - (_h(0.9) + _h(0.2)) / 2
    value = mi_of_input_through(Distribution.uniform(2), NOISY)
    assert math.isclose(value, expected, rel_tol=1e-12), f"Expected {expected}, got {value}"
    assert math.isclose(value, 0.275396, abs_tol=1e-6), "Reference MI of the noisy channel"
    assert math.isclose(mutual_information_array(np.array([0.5, 0.5]), NOISY.rows), value, rel_tol=1e-12), \
        "Array form agrees with the model form"


def test_joint_entropy_chain_rule():
    rng = np.random.default_rng(11)
    P = JointDistribution(probs=rng.dirichlet(np.ones(6)).reshape(2, 3))
    Q = P.marginal_x()
    chained = entropy(Q) + conditional_entropy(Q, conditional_of(P))
    assert math.isclose(joint_entropy(P), chained, rel_tol=1e-12), "H(X,Y) = H(X) + H(Y|X)"


def test_supergradient_examples():
    uniform3 = Distribution.uniform(3)
    grad = mi_supergradient(uniform3, Kernel.identity(3))
    assert np.allclose(grad, math.log(3) - 1), f"Identity kernel gradient should be log 3 - 1, got {grad}"

    grad = mi_supergradient(Distribution(probs=[0.2, 0.8]), Kernel.constant(2, [0.3, 0.7]))
    assert np.allclose(grad, -1.0), "Constant kernel gradient is -1 everywhere"

    M = np.array([0.55, 0.45])
    expected = [sum(r * math.log(r / m) for r, m in zip(row, M)) - 1 for row in NOISY.rows]
    grad = mi_supergradient(Distribution.uniform(2), NOISY)
    assert np.allclose(grad, expected, atol=1e-12), f"Expected {expected}, got {grad}"


def test_supergradient_matches_finite_differences():
    rng = np.random.default_rng(20240601)
    step = 1e-6
    worst = 0.0
    for _ in range(100):
        k = int(rng.integers(2, 5))
        N = rng.dirichlet(np.ones(k)) * 0.9 + 0.1 / k
        rows = rng.dirichlet(np.ones(int(rng.integers(2, 5))), size=k)
        grad = mi_supergradient(Distribution(probs=N), Kernel(rows=rows))
        for a in range(k):
            e = np.zeros(k)
            e[a] = step
            numeric = (mutual_information_array(N + e, rows) - mutual_information_array(N - e, rows)) / (2 * step)
            worst = max(worst, abs(numeric - grad[a]))
    assert worst <= 1e-5, f"Largest finite-difference mismatch {worst}"


def test_supergradient_at_boundary_is_finite():
    grad = mi_supergradient(Distribution.point(2, 0), NOISY)
    assert np.all(np.isfinite(grad)), "Boundary points are smoothed before differentiating"


def test_supergradient_reports_boundary_smoothing():
    grad, smoothed = mi_supergradient(Distribution.point(2, 0), NOISY, report_smoothing=True)
    assert smoothed, "A zero-probability input must be reported as smoothed"
    assert np.all(np.isfinite(grad)), "Smoothed gradient is finite"

    grad, smoothed = mi_supergradient(Distribution.uniform(2), NOISY, report_smoothing=True)
    assert not smoothed, "Interior inputs are differentiated as given"
    assert np.allclose(grad, mi_supergradient(Distribution.uniform(2), NOISY)), \
        "The flag does not change the gradient"


def test_mutual_information_decomposition():
    rng = np.random.default_rng(404)
    for _ in range(100):
        shape = (int(rng.integers(2, 5)), int(rng.integers(2, 5)))
        P = JointDistribution(probs=rng.dirichlet(np.ones(shape[0] * shape[1])).reshape(shape))
        expected = entropy(P.marginal_y()) - conditional_entropy(P.marginal_x(), conditional_of(P))
        assert math.isclose(mutual_information(P), expected, abs_tol=1e-12), \
            f"I(P) = H(M) - H_Q(J) fails: {mutual_information(P)} vs {expected}"


def test_information_measures_are_nonnegative():
    rng = np.random.default_rng(505)
    for _ in range(200):
        k = int(rng.integers(2, 6))
        P, B = (Distribution(probs=rng.dirichlet(np.full(k, 0.5))) for _ in range(2))
        assert kl_divergence(P, B) >= 0.0, f"D(P||B) must be nonnegative for {P.probs}, {B.probs}"
        joint = JointDistribution(probs=rng.dirichlet(np.full(k * 3, 0.5)).reshape(k, 3))
        assert mutual_information(joint) >= 0.0, f"I(P) must be nonnegative for {joint.probs}"


def test_mutual_information_is_concave_in_the_input():
    rng = np.random.default_rng(606)
    for _ in range(200):
        k = int(rng.integers(2, 5))
        J = Kernel(rows=rng.dirichlet(np.ones(int(rng.integers(2, 5))), size=k))
        first, second = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
        middle = mi_of_input_through(Distribution(probs=(first + second) / 2), J)
        chord = (mi_of_input_through(Distribution(probs=first), J)
                 + mi_of_input_through(Distribution(probs=second), J)) / 2
        assert middle >= chord - 1e-12, f"Midpoint value {middle} below the chord {chord}"
