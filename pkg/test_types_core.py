"""Tests for empirical types, variational distance and pre-image membership."""

import math

import numpy as np
import pytest

from models.distributions import Alphabet, Distribution, Kernel
from models.errors import InputError
from services.types_core import (
    compose,
    conditional_type,
    delta_preimage_membership,
    in_delta_neighborhood,
    joint_type,
    lattice_counts,
    lattice_size,
    push_forward,
    representative_sequence,
    type_of_sequence,
    variational_distance,
)

AB = Alphabet(size=2, labels=("a", "b"))
CD = Alphabet(size=2, labels=("c", "d"))
NOISY = Kernel(rows=[[0.9, 0.1], [0.2, 0.8]])


def test_type_of_sequence_counts_symbols():
    P = type_of_sequence(["a", "a", "b", "a"], AB)
    assert np.allclose(P.probs, [0.75, 0.25]), f"Expected (3/4, 1/4), got {P.probs}"
    assert P.denominator == 4, "Type denominator should be the sequence length"

    constant = type_of_sequence(["a"] * 4, AB)
    assert np.array_equal(constant.probs, [1.0, 0.0]), "Constant sequence has a point-mass type"


def test_type_of_sequence_rejects_bad_input():
    with pytest.raises(InputError):
        type_of_sequence([], AB)
    with pytest.raises(InputError):
        type_of_sequence(["a", "z"], AB)
    with pytest.raises(InputError):
        type_of_sequence([0, 2], 2)


def test_uniform_sequence_types_concentrate():
    uniform = Distribution.uniform(2)
    close = 0
    for seed in range(1000):
        seq = np.random.default_rng(seed).integers(0, 2, size=1000)
        if variational_distance(type_of_sequence(seq, 2), uniform) <= 0.1:
            close += 1
    assert close >= 990, f"Only {close}/1000 types within 0.1 of uniform"


def test_joint_type_and_marginals():
    P = joint_type(["a", "b"], ["c", "c"], AB, CD)
    assert np.allclose(P.probs, [[0.5, 0.0], [0.5, 0.0]]), f"Unexpected joint type {P.probs}"

    diagonal = joint_type(["a", "b", "b", "a"], ["a", "b", "b", "a"], AB, AB)
    assert np.allclose(diagonal.probs, np.diag([0.5, 0.5])), "x = y gives a diagonal joint type"

    rng = np.random.default_rng(7)
    x = rng.integers(0, 3, size=50)
    y = rng.integers(0, 4, size=50)
    joint = joint_type(x, y, 3, 4)
    assert np.allclose(joint.marginal_x().probs, type_of_sequence(x, 3).probs), \
        "Row sums of the joint type must equal the type of x"


def test_joint_type_length_mismatch():
    with pytest.raises(InputError):
        joint_type(["a", "b"], ["c"], AB, CD)


def test_conditional_type_rows_and_chain_rule():
    J = conditional_type(["c", "d", "c"], ["a", "a", "b"], AB, CD)
    assert np.allclose(J.rows[0], [0.5, 0.5]), f"Row a should be (1/2, 1/2), got {J.rows[0]}"
    assert np.allclose(J.rows[1], [1.0, 0.0]), f"Row b should be (1, 0), got {J.rows[1]}"

    partial = conditional_type(["c", "d"], ["a", "a"], AB, CD)
    assert not partial.defined[1], "Row of an absent symbol must be flagged undefined"
    assert np.all(np.isnan(partial.rows[1])), "Undefined rows carry NaN"

    x, y = ["a", "b", "b", "a", "a"], ["c", "c", "d", "d", "c"]
    chained = compose(type_of_sequence(x, AB), conditional_type(y, x, AB, CD))
    assert np.allclose(chained.probs, joint_type(x, y, AB, CD).probs), \
        "Type of x composed with the conditional type must reproduce the joint type"


def test_variational_distance_examples():
    Q = Distribution(probs=[0.3, 0.7])
    assert variational_distance(Q, Q) == 0.0, "V(Q, Q) must be 0"
    assert variational_distance(Distribution.point(2, 0), Distribution.point(2, 1)) == 2.0, \
        "Disjoint supports are at distance 2"
    assert math.isclose(variational_distance(Distribution(probs=[0.75, 0.25]), Distribution.uniform(2)), 0.5), \
        "V((3/4,1/4), (1/2,1/2)) = 1/2"
    with pytest.raises(InputError):
        variational_distance(Distribution.uniform(2), Distribution.uniform(3))


def test_in_delta_neighborhood():
    Q = Distribution(probs=[0.25, 0.75])
    assert in_delta_neighborhood(Q, Q, 0.0), "Q is in its own 0-neighborhood"
    assert not in_delta_neighborhood(Distribution.point(2, 0), Distribution.point(2, 1), 1.9), "V = 2 > 1.9"
    assert in_delta_neighborhood(Distribution.uniform(2), Distribution(probs=[0.75, 0.25]), 0.5), \
        "Boundary of the neighborhood is included"
    with pytest.raises(InputError):
        in_delta_neighborhood(Q, Q, -0.1)


def test_push_forward_examples():
    N = Distribution(probs=[0.3, 0.7])
    assert np.allclose(push_forward(N, Kernel.identity(2)).probs, N.probs), "Identity kernel keeps N"
    constant = Kernel.constant(2, [0.6, 0.4])
    assert np.allclose(push_forward(N, constant).probs, [0.6, 0.4]), "Constant rows ignore N"
    assert np.allclose(push_forward(Distribution.uniform(2), NOISY).probs, [0.55, 0.45]), \
        "Direct matrix-vector product"


def test_push_forward_undefined_row():
    partial = Kernel(rows=[[1.0, 0.0], [np.nan, np.nan]], defined=[True, False])
    assert np.allclose(push_forward(Distribution.point(2, 0), partial).probs, [1.0, 0.0]), \
        "Undefined rows without input mass are ignored"
    with pytest.raises(InputError):
        push_forward(Distribution.uniform(2), partial)


def test_delta_preimage_membership():
    Q = Distribution(probs=[0.4, 0.6])
    assert delta_preimage_membership(Q, Q, Kernel.identity(2), 0.0), "N = Q under identity is in the pre-image"

    constant = Kernel.constant(2, [0.9, 0.1])
    for probs in ([1.0, 0.0], [0.5, 0.5], [0.0, 1.0]):
        assert not delta_preimage_membership(Distribution(probs=probs), Q, constant, 0.5), \
            "Constant output (0.9, 0.1) is 1.0 away from Q"

    assert delta_preimage_membership(Distribution.uniform(2), Distribution(probs=[0.55, 0.45]), NOISY, 0.0), \
        "Exact pre-image within the equality tolerance"


def test_lattice_enumeration():
    counts = lattice_counts(4, 3)
    assert counts.shape == (lattice_size(4, 3), 3) == (15, 3), "C(6, 2) = 15 types"
    assert np.all(counts.sum(axis=1) == 4), "Every count vector sums to n"
    assert len({tuple(row) for row in counts}) == 15, "Count vectors are distinct"
    assert np.array_equal(lattice_counts(5, 1), [[5]]), "One-symbol alphabet has a single type"


def test_representative_sequence_has_nearest_type():
    Q = Distribution(probs=[0.55, 0.45])
    x = representative_sequence(Q, 11)
    assert x.size == 11, "Sequence has the requested length"
    counts = np.bincount(x, minlength=2)
    assert np.all(np.abs(counts / 11 - Q.probs) <= 1 / 11), f"Counts {counts} are not the rounded type"
    with pytest.raises(InputError):
        representative_sequence(Q, 0)


def test_variational_distance_is_a_metric():
    rng = np.random.default_rng(101)
    for _ in range(200):
        k = int(rng.integers(2, 6))
        P, Q, R = (Distribution(probs=rng.dirichlet(np.ones(k))) for _ in range(3))
        assert variational_distance(P, Q) == variational_distance(Q, P), "V must be symmetric"
        assert variational_distance(P, R) <= variational_distance(P, Q) + variational_distance(Q, R) + 1e-12, \
            "V must satisfy the triangle inequality"
        assert variational_distance(P, P) == 0.0, "V(P, P) must be 0"
        assert variational_distance(P, Q) > 0.0, "Distinct random PMFs are at positive distance"


def test_preimage_membership_matches_neighborhood_search():
    # N on a 1/10 grid and kernel rows on a 1/4 grid put N kernel on the 1/40 output lattice.
    rng = np.random.default_rng(202)
    inputs = lattice_counts(10, 2) / 10
    rows = lattice_counts(4, 3) / 4
    outputs = lattice_counts(40, 3) / 40
    agreed = {True: 0, False: 0}
    for _ in range(200):
        N = Distribution(probs=inputs[rng.integers(len(inputs))])
        kernel = Kernel(rows=rows[rng.integers(len(rows), size=2)])
        Q = Distribution(probs=outputs[rng.integers(len(outputs))])
        delta = int(rng.integers(0, 40)) / 40 + 1 / 80
        image = N.probs @ kernel.rows
        near_q = np.abs(outputs - Q.probs).sum(axis=1) <= delta
        matches = np.abs(outputs - image).max(axis=1) <= 1e-9
        expected = bool(np.any(near_q & matches))
        assert delta_preimage_membership(N, Q, kernel, delta) == expected, \
            f"Membership disagrees with the neighborhood search for N={N.probs}, Q={Q.probs}, delta={delta}"
        agreed[expected] += 1
    assert agreed[True] > 0 and agreed[False] > 0, f"Both outcomes should occur, got {agreed}"


def test_variational_distance_is_convex():
    rng = np.random.default_rng(303)
    for _ in range(200):
        k = int(rng.integers(2, 6))
        Q, S, N = (rng.dirichlet(np.ones(k)) for _ in range(3))
        lam = float(rng.uniform())
        mixed = Distribution(probs=lam * S + (1 - lam) * N)
        left = lam * variational_distance(Distribution(probs=Q), Distribution(probs=S)) \
            + (1 - lam) * variational_distance(Distribution(probs=Q), Distribution(probs=N))
        right = variational_distance(Distribution(probs=Q), mixed)
        assert left >= right - 1e-12, f"Convexity of V fails: {left} < {right}"
