import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from anosov_lab.cone import (
    ChamberSpace,
    ConeError,
    LinearFunctional,
    LinearMapPhi,
    SliceQuadraticModel,
    TangentEnvelope,
    check_properness,
    cone_from_directions,
    directional_count,
    estimate_delta,
    estimate_limit_cone,
    estimate_tangent_form,
    fit_concave_model,
    gap_constants,
    lower_bound_at_length,
    min_norm_on_hull,
    root_coordinates,
    tangent_envelope,
)
from anosov_lab.sampling import SpectrumSample, build_sample
from anosov_lab.spectra import Representation

from conftest import hyperbolic


def quadrant_cone(n=3, spread=0.2):
    return cone_from_directions(np.eye(n) + spread)


def line_sample(delta, n=20_000):
    """Element sample whose functional (1, -1) takes the values log(k)/delta,
    so #{value < T} = ceil(exp(delta T)) - 1."""
    x = np.log(np.arange(2, n + 2)) / delta / 2
    return SpectrumSample("elements", 2, (2,), np.ones(n, np.int16), np.arange(n), np.column_stack([x, -x]))


@pytest.fixture(scope="module")
def product_elements():
    reps = [
        Representation("a", [hyperbolic(2.0, 0.0), hyperbolic(3.0, np.pi / 4)]),
        Representation("b", [hyperbolic(3.0, 0.1), hyperbolic(2.0, np.pi / 4 + 0.3)]),
    ]
    return reps, build_sample(reps, 9, "elements"), build_sample(reps, 9, "classes")


def test_chamber_space_projection():
    space = ChamberSpace((2, 3))
    x = np.array([1.0, 2.0, 3.0, 3.0, 3.0])
    assert np.allclose(space.project(x), [-0.5, 0.5, 0, 0, 0])
    assert space.rank == 3
    assert space.in_chamber([[1, -1, 2, 0, -2]])[0]
    assert not space.in_chamber([[-1, 1, 2, 0, -2]])[0]
    with pytest.raises(ValueError):
        ChamberSpace((1,))


def test_linear_map_kernel_and_preimage():
    space = ChamberSpace((3,))
    phi = LinearMapPhi([[1.0, 0.0, -1.0]])
    K = phi.kernel_basis(space)
    assert K.shape == (3, 1)
    assert np.allclose(phi(K.T), 0)
    assert np.allclose(K[:, 0] @ np.ones(3), 0)
    v = phi.preimage([2.0], space)
    assert np.allclose(phi(v), 2.0)
    assert np.isclose(v.sum(), 0)
    assert np.allclose(phi.scaled(3.0)(v), 6.0)
    assert np.allclose(LinearFunctional((1.0, 2.0)).scaled(2)([1.0, 1.0]), 6.0)


def test_cone_from_directions_membership():
    cone = quadrant_cone()
    dirs = np.eye(3) + 0.2
    assert cone.contains(dirs, 1e-9).all()
    assert cone.contains(dirs.mean(axis=0)[None]).all()
    assert not cone.contains(np.array([[1.0, -0.1, 0.0], [-1.0, -1.0, -1.0]])).any()
    # extreme rays are the generating directions
    got = sorted(map(tuple, np.round(cone.rays, 12)))
    want = sorted(map(tuple, np.round(dirs / np.linalg.norm(dirs, axis=1)[:, None], 12)))
    assert got == want
    with pytest.raises(ConeError):
        cone_from_directions(np.array([[1.0, 0.0], [-1.0, 0.0]]))


def test_low_dimensional_cones():
    ray = cone_from_directions(np.array([[1.0, -1.0], [2.0, -2.0]]))
    assert ray.slice_dim == 0
    assert ray.contains(np.array([[3.0, -3.0]]))[0]
    fan = cone_from_directions(np.array([[1.0, 0.1, 0.0], [0.1, 1.0, 0.0]]))
    assert fan.slice_dim == 1
    assert fan.contains(np.array([[1.0, 1.0, 0.0]]))[0]
    assert not fan.contains(np.array([[1.0, 1.0, 0.1]]))[0]


def test_dilation_nests_and_intersection_cuts():
    cone = quadrant_cone()
    wide = cone.dilated(0.3)
    pts = np.random.default_rng(0).dirichlet(np.ones(3), 500) @ (np.eye(3) + 0.2)
    assert wide.contains(pts, 1e-9).all()
    assert np.all(wide.margins(pts) >= cone.margins(pts) - 1e-12)
    cut = wide.intersected(-ChamberSpace.euclidean(3).roots)
    assert cut.contains(pts, 1e-9).all()
    assert np.all(cut.rays >= -1e-12)
    assert cone.contains(cone.interior_point()[None])[0]


def test_min_norm_on_hull_against_optimizer():
    rng = np.random.default_rng(1)
    for _ in range(5):
        P = rng.normal(size=(6, 3)) + np.array([1.0, 0.5, 0.0])
        value, weights = min_norm_on_hull(P)
        res = minimize(
            lambda a: np.linalg.norm(np.abs(a) / np.abs(a).sum() @ P), np.ones(6), method="Nelder-Mead",
            options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20000},
        )
        assert value <= res.fun + 1e-6
        assert np.isclose(np.linalg.norm(weights @ P), value)
        assert np.isclose(weights.sum(), 1) and np.all(weights >= 0)


def test_properness():
    cone = cone_from_directions(np.eye(2) + 0.1)
    assert check_properness(LinearMapPhi([[1.0, 1.0]]), cone)
    assert not check_properness(LinearMapPhi([[1.0, -1.0]]), cone)
    assert check_properness(LinearMapPhi(np.eye(2)), cone)


def test_directional_count_simple():
    x = np.array([[1.0, 0.0], [2.0, 0.1], [0.0, 1.0], [5.0, 0.0]])
    assert directional_count(x, [1.0, 0.0], 0.2, 3.0) == 2
    assert directional_count(x, [1.0, 0.0], np.pi, 10.0) == 4
    with pytest.raises(ValueError):
        directional_count(x, [1.0, 0.0], 0.0, 1.0)


def test_root_coordinates_and_lower_bound():
    coords = root_coordinates(np.array([1.0, 0.0, -1.0, 0.5, -0.5]), (3, 2))
    assert np.allclose(coords[0], [1.0, 1.0]) and np.allclose(coords[1], [0.5])
    assert lower_bound_at_length([1.0, -1.0], (2,), [1.0], 10, safety=1.0) == 9.0
    assert lower_bound_at_length([-1.0, 1.0], (2,), [1.0], 10) == -np.inf


@pytest.mark.parametrize("delta", [0.4, 0.7, 1.3])
def test_estimate_delta_recovers_known_rate(delta):
    s = line_sample(delta)
    vmax = 2 * s.vectors[:, 0].max()
    est = estimate_delta(s, [1.0, -1.0], T_max=vmax)
    assert abs(est - delta) < 0.01 * delta


def test_estimate_delta_rejects_nonpositive_functional():
    with pytest.raises(ConeError):
        estimate_delta(line_sample(0.5), [-1.0, 1.0], T_max=5.0)


def test_gap_constants_bound_sample(product_elements):
    _, elements, _ = product_elements
    C = gap_constants(elements)
    keep = elements.lengths > 0
    for i, c in enumerate(C):
        gap = -np.diff(elements.block(i)[keep], axis=1)[:, 0]
        assert np.all(gap >= c * elements.lengths[keep] - 1 / c - 1e-9)


def test_limit_cone_contains_every_direction(product_elements):
    _, _, classes = product_elements
    lc = estimate_limit_cone(classes)
    assert lc.contains(lc.directions, 1e-9).all()
    with pytest.raises(ConeError):
        estimate_limit_cone(product_elements[1])


def test_tangent_form_of_smooth_function():
    space = ChamberSpace.euclidean(2)
    psi = lambda w: 2 * np.sqrt(w[0] * w[1])  # noqa: E731
    t = estimate_tangent_form(psi, np.array([1.0, 1.0]), space, step=1e-4)
    assert np.allclose(t.vector, [1.0, 1.0], atol=1e-6)


def test_fit_concave_model_recovers_quadratic():
    cone = quadrant_cone()
    true = SliceQuadraticModel(cone.center, cone.frame, 1.3, np.array([0.2, -0.1]), np.array([[2.0, 0.3], [0.3, 1.0]]))
    fit = fit_concave_model(true, cone)
    assert fit.residual < 1e-10
    assert np.isclose(fit.f0, 1.3) and np.allclose(fit.g, true.g) and np.allclose(fit.H, true.H)
    w = cone.interior_point()
    eps = 1e-6
    num = np.array([(fit(w + eps * e) - fit(w - eps * e)) / (2 * eps) for e in np.eye(3)])
    assert np.allclose(fit.gradient(w), num, atol=1e-6)


def test_fit_concave_model_projects_convex_fits():
    cone = quadrant_cone()
    convex = SliceQuadraticModel(cone.center, cone.frame, 1.0, np.zeros(2), -np.eye(2))
    fit = fit_concave_model(convex, cone)
    assert np.linalg.eigvalsh(fit.H).min() > 0


def test_envelope_is_minimum_of_linear_bounds():
    env = TangentEnvelope(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([2.0, 1.0]))
    assert env([1.0, 1.0]) == 1.0
    assert env.active([3.0, 1.0]) == 1 and env.active([0.2, 1.0]) == 0
    assert np.allclose(env.gradient([0.2, 1.0]), [2.0, 0.0])
    with pytest.raises(ConeError):
        TangentEnvelope(np.eye(2), np.array([1.0]))


def test_tangent_envelope_upper_model(product_elements):
    reps, elements, classes = product_elements
    space = ChamberSpace((2, 2))
    cone = estimate_limit_cone(classes).working_cone(space)
    rows = [np.array([1.0, -1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0, -1.0])]
    env = tangent_envelope(elements, cone, space, extra=rows)
    assert len(env.deltas) >= 2 and np.all(env.deltas > 0)
    # each extra row enters with its own exponent
    for u in rows:
        d = estimate_delta(elements, u)
        k = [np.allclose(f, u) for f in env.functionals].index(True)
        assert np.isclose(env.deltas[k], d)
    with pytest.raises(ConeError):
        tangent_envelope(classes, cone, space)


@given(st.lists(st.floats(0.05, 1.0), min_size=3, max_size=3), st.lists(st.floats(0.05, 1.0), min_size=3, max_size=3))
@settings(max_examples=40, deadline=None)
def test_envelope_is_concave_and_homogeneous(a, b):
    env = TangentEnvelope(np.array([[1.0, 0.2, 0.0], [0.0, 1.0, 0.3], [0.5, 0.0, 1.0]]), np.array([0.7, 0.9, 1.1]))
    a, b = np.array(a), np.array(b)
    assert env(0.5 * (a + b)) >= 0.5 * (env(a) + env(b)) - 1e-12
    assert np.isclose(env(2.5 * a), 2.5 * env(a))
