import functools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anosov_lab.asymptotics import synthetic_instance
from anosov_lab.cone import ChamberSpace, LinearMapPhi, cone_from_directions
from anosov_lab.critical import CriticalVectorProblem, solve_critical_vector, sqrt_product_model
from anosov_lab.hypertube import (
    BoxFamily,
    Decomposition,
    HypertubeError,
    OffsetFunction,
    TruncationSpec,
    build_from_box_family,
    truncation_contains,
    verify_difference_identity,
)


@functools.cache
def cached_instance():
    return synthetic_instance()


@pytest.fixture(scope="module")
def inst():
    return cached_instance()


@pytest.fixture(scope="module")
def tube_case():
    """d = rank = 2: the hypertube is a tube with no kernel directions."""
    space = ChamberSpace.euclidean(2)
    cone = cone_from_directions(np.array([[1.0, 0.1], [0.1, 1.0]]))
    phi = LinearMapPhi(np.eye(2))
    r = np.array([1.0, 1.0])
    crit = solve_critical_vector(CriticalVectorProblem(sqrt_product_model(), phi, r, cone, space))
    family = BoxFamily(phi, r, np.array([0.5, 0.5]))
    return family, crit, cone, space


def test_offset_function_modes():
    f = OffsetFunction(np.array([[1.0], [-1.0]]), np.array([0.0, 1.0]), "min")
    g = OffsetFunction(np.array([[1.0], [-1.0]]), np.array([0.0, 1.0]), "max")
    q = np.array([[0.0], [0.5], [2.0]])
    assert np.allclose(f(q), [0.0, 0.5, -1.0])
    assert np.allclose(g(q), [1.0, 0.5, 2.0])
    assert np.allclose(f.shifted(2.0)(q), f(q) + 2.0)
    assert np.allclose(OffsetFunction.constant(3.0, 2)(np.zeros((4, 2))), 3.0)
    with pytest.raises(ValueError):
        OffsetFunction(np.zeros((1, 1)), np.zeros(1), "mean")


def test_box_family_validation():
    phi = LinearMapPhi([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(HypertubeError):
        BoxFamily(phi, [1.0], [1.0, 1.0])
    with pytest.raises(HypertubeError):
        BoxFamily(phi, [1.0, 1.0], [1.0, 0.0])
    fam = BoxFamily(phi, [1.0, 2.0], [0.5, 0.5])
    assert fam.contains(np.array([[2.2, 4.1]]), 2.0)[0]
    assert not fam.contains(np.array([[2.6, 4.1]]), 2.0)[0]


def test_offsets_are_ordered_on_q(inst):
    h = inst.hypertube
    qs = np.linspace(h.q_vertices.min(), h.q_vertices.max(), 101)[:, None]
    assert np.all(inst.b1(qs) >= inst.b2(qs) - 1e-12)
    assert h.w_dim == inst.d - 1
    assert np.allclose(h.q_vertices @ h.w_basis.T @ h.psi_v, 0)


@pytest.mark.parametrize("T", [0.0, 3.0, 25.0, 120.0])
def test_difference_identity_on_synthetic_instance(inst, T):
    res = verify_difference_identity(inst.hypertube, inst.spec(0, "b1"), inst.spec(0, "b2"), inst.family, T, 10_000, 1)
    assert res["violations"] == 0
    assert res["in_box"] > 0


def test_corrupted_offset_is_detected(inst):
    bad = TruncationSpec(inst.hypertube.v, inst.b1.shifted(0.05), 0.0)
    res = verify_difference_identity(inst.hypertube, bad, inst.spec(0, "b2"), inst.family, 10.0, 10_000, 1)
    assert res["violations"] > 0


def test_tube_case(tube_case):
    family, crit, cone, space = tube_case
    h, b1, b2 = build_from_box_family(family, crit.v_star, crit.tangent, cone, space)
    assert h.kernel.size == 0
    res = verify_difference_identity(h, TruncationSpec(h.v, b1, 0), TruncationSpec(h.v, b2, 0), family, 7.0, 10_000)
    assert res["violations"] == 0 and res["in_box"] > 0


def test_d1_case_has_point_q():
    space = ChamberSpace((3,))
    phi = LinearMapPhi([[0.5, 0.0, -0.5]])
    cone = cone_from_directions(np.array([[1.0, 0.0, -1.0], [1.0, -0.5, -0.5], [0.5, 0.5, -1.0]]))
    v = phi.preimage([1.0], space)
    psi = phi.rows[0] * 0.4
    family = BoxFamily(phi, [1.0], [2.0])
    h, b1, b2 = build_from_box_family(family, v, psi, cone, space)
    assert h.w_dim == 0
    assert np.isclose(b1(np.zeros((1, 0)))[0], 2.0) and np.isclose(b2(np.zeros((1, 0)))[0], 0.0)
    res = verify_difference_identity(h, TruncationSpec(h.v, b1, 0), TruncationSpec(h.v, b2, 0), family, 9.0, 10_000)
    assert res["violations"] == 0


def test_build_rejects_inconsistent_inputs(inst):
    with pytest.raises(HypertubeError):
        build_from_box_family(inst.family, 2 * inst.critical.v_star, inst.critical.tangent, inst.hypertube.cone, inst.space)
    with pytest.raises(HypertubeError):
        build_from_box_family(inst.family, inst.critical.v_star, np.array([1.0, 0.0, 0.0]), inst.hypertube.cone, inst.space)


def test_truncations_are_nested_in_T(inst):
    h = inst.hypertube
    rng = np.random.default_rng(5)
    q = rng.uniform(h.q_vertices.min(), h.q_vertices.max(), size=(4000, 1))
    t = rng.uniform(0, 30, size=4000)
    k = rng.normal(size=(4000, 1)) * 5
    u = h.reassemble(Decomposition(q, k @ h.kernel.T, t))
    prev = np.zeros(len(u), dtype=bool)
    for T in (0.0, 5.0, 10.0, 20.0, 40.0):
        cur = truncation_contains(h, inst.spec(T), u)
        assert np.all(cur >= prev)
        prev = cur


def test_truncation_requires_matching_direction(inst):
    spec = TruncationSpec(inst.hypertube.v + 1.0, inst.b1, 1.0)
    with pytest.raises(HypertubeError):
        truncation_contains(inst.hypertube, spec, np.ones((1, 3)))
    with pytest.raises(HypertubeError):
        TruncationSpec(inst.hypertube.v, inst.b1, -1.0)


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3))
@settings(max_examples=60, deadline=None)
def test_decompose_reassemble_round_trip(x):
    h = cached_instance().hypertube
    u = np.array([x])
    dec = h.decompose(u)
    assert np.allclose(h.reassemble(dec), u, atol=1e-9)
    assert np.allclose(dec.v_part @ h.psi_v, 0, atol=1e-9)
