import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ddpmi.core import DimensionError, FeaturePointSet, FeedbackFeatureVector, stack_features
from ddpmi.ffv import (
    EPS_GEOM,
    Curvature,
    DegenerateGeometryError,
    Overlay,
    eval_ffv,
    ffv_error,
    numerical_feature_jacobian,
    three_point_curvature,
)

coords = st.floats(min_value=-1000, max_value=1000, allow_nan=False)
triples = arrays(float, (3, 2), elements=coords)


def circumradius(p1, p2, p3):
    """Radius from the circumcenter, found by solving the perpendicular-bisector system."""
    A = 2 * np.array([p2 - p1, p3 - p1])
    rhs = np.array([p2 @ p2 - p1 @ p1, p3 @ p3 - p1 @ p1])
    center = np.linalg.solve(A, rhs)
    return float(np.linalg.norm(p1 - center))


def analytic_curvature_gradient(p1, p2, p3):
    """d(kappa)/d(p1, p2, p3) by differentiating 2|C| / (la lb lc) by hand."""
    a, b, c = p1 - p2, p2 - p3, p3 - p1
    C = a[0] * b[1] - a[1] * b[0]
    la, lb, lc = np.linalg.norm(a), np.linalg.norm(b), np.linalg.norm(c)
    kappa = 2 * abs(C) / (la * lb * lc)
    dC = [np.array([b[1], -b[0]]), np.array([-b[1] - a[1], b[0] + a[0]]), np.array([a[1], -a[0]])]
    dla = [a / la, -a / la, np.zeros(2)]
    dlb = [np.zeros(2), b / lb, -b / lb]
    dlc = [-c / lc, np.zeros(2), c / lc]
    g = [kappa * (np.sign(C) * dC[i] / abs(C) - dla[i] / la - dlb[i] / lb - dlc[i] / lc) for i in range(3)]
    return np.concatenate(g)


# -- eval_ffv ---------------------------------------------------------------


def test_curvature_of_circle_radius_100():
    fs = stack_features([(100, 0), (0, 100), (-100, 0)])
    assert eval_ffv(Curvature((0, 1, 2)), fs).values[0] == pytest.approx(0.01, rel=1e-12)


def test_curvature_of_collinear_points_is_zero():
    assert eval_ffv(Curvature((0, 1, 2)), stack_features([(0, 0), (1, 0), (2, 0)])).values[0] == 0.0


def test_overlay_selects_in_index_order():
    fs = stack_features([(1, 2), (3, 4), (5, 6)])
    assert eval_ffv(Overlay((0, 2)), fs).tolist() == [1, 2, 5, 6]


def test_overlay_index_validation():
    with pytest.raises(DimensionError):
        Overlay(())
    with pytest.raises(ValueError):
        Overlay((2, 1))
    with pytest.raises(ValueError):
        Overlay((1, 1))
    with pytest.raises(DimensionError):
        eval_ffv(Overlay((3,)), stack_features([(1, 2), (3, 4)]))


def test_curvature_index_validation():
    with pytest.raises(ValueError):
        Curvature((0, 1))
    with pytest.raises(ValueError):
        Curvature((0, 1, 1))
    with pytest.raises(DimensionError):
        eval_ffv(Curvature((0, 1, 5)), stack_features([(0, 0), (1, 0), (2, 1)]))


def test_coincident_markers_are_degenerate():
    with pytest.raises(DegenerateGeometryError):
        three_point_curvature((0, 0), (0, 0), (1, 1))
    with pytest.raises(DegenerateGeometryError):
        three_point_curvature((0, 0), (1, 1), (EPS_GEOM / 10, 0))


def test_objective_sizes():
    assert Overlay((0, 3)).N == 4
    assert Curvature((0, 1, 2)).N == 1


def test_curvature_objective_error_is_radius_error():
    k = Curvature((0, 1, 2))
    assert k.objective_error([1 / 250], [1 / 300]) == pytest.approx(50.0)
    assert k.objective_error([0.0], [1 / 300]) == float("inf")


# -- ffv_error --------------------------------------------------------------


@pytest.mark.parametrize(
    "gamma,gamma_d,expected",
    [([5, 5], [5, 5], [0, 0]), ([3], [1], [2]), ([10, 20], [4, 25], [6, -5])],
)
def test_ffv_error_examples(gamma, gamma_d, expected):
    out = ffv_error(FeedbackFeatureVector(gamma), FeedbackFeatureVector(gamma_d))
    assert out.tolist() == expected


def test_ffv_error_dimension_mismatch():
    with pytest.raises(DimensionError):
        ffv_error(FeedbackFeatureVector([1, 2]), FeedbackFeatureVector([1]))


# -- numerical Jacobian -----------------------------------------------------


def test_overlay_jacobian_is_exact_selector():
    fs = stack_features([(1.3, 2.7), (3.1, -4.9), (5e3, 6.25)])
    Jn = numerical_feature_jacobian(Overlay((0, 2)), fs)
    S = np.zeros((4, 6))
    S[0, 0] = S[1, 1] = S[2, 4] = S[3, 5] = 1
    assert np.array_equal(Jn, S)


def test_curvature_jacobian_matches_analytic_oracle():
    pts = np.array([(100.0, 0.0), (0.0, 100.0), (-100.0, 0.0)])
    Jn = numerical_feature_jacobian(Curvature((0, 1, 2)), FeaturePointSet(pts.ravel()), h=1e-4)
    assert np.max(np.abs(Jn[0] - analytic_curvature_gradient(*pts))) < 1e-6


def test_curvature_jacobian_analytic_oracle_random():
    rng = np.random.default_rng(7)
    for _ in range(50):
        pts = rng.uniform(-300, 300, size=(3, 2))
        Jn = numerical_feature_jacobian(Curvature((0, 1, 2)), FeaturePointSet(pts.ravel()), h=1e-4)
        g = analytic_curvature_gradient(*pts)
        assert np.allclose(Jn[0], g, rtol=1e-5, atol=1e-9)


def test_curvature_jacobian_at_collinear_points():
    pts = np.array([(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)])
    Jn = numerical_feature_jacobian(Curvature((0, 1, 2)), FeaturePointSet(pts.ravel()), h=1e-4)
    # |.| makes kappa even in the normal offset, so central differences vanish
    assert np.allclose(Jn, 0.0, atol=1e-9)
    mirrored = pts * [1, -1]
    Jm = numerical_feature_jacobian(Curvature((0, 1, 2)), FeaturePointSet(mirrored.ravel()), h=1e-4)
    assert np.allclose(Jm, Jn, atol=1e-9)


def test_numerical_jacobian_needs_positive_step():
    with pytest.raises(ValueError):
        numerical_feature_jacobian(Overlay((0,)), stack_features([(0, 0)]), h=0.0)


# -- properties -------------------------------------------------------------


@given(
    arrays(float, 6, elements=coords),
    arrays(float, 6, elements=coords),
    st.floats(-10, 10),
    st.floats(-10, 10),
)
def test_overlay_is_linear(v, w, a, b):
    kind = Overlay((0, 2))
    lhs = eval_ffv(kind, FeaturePointSet(a * v + b * w)).values
    rhs = a * eval_ffv(kind, FeaturePointSet(v)).values + b * eval_ffv(kind, FeaturePointSet(w)).values
    assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-9)


def well_spread(pts):
    d = [np.linalg.norm(pts[i] - pts[j]) for i, j in ((0, 1), (1, 2), (2, 0))]
    return min(d) > 1.0


@given(triples, st.floats(-np.pi, np.pi), arrays(float, 2, elements=coords))
def test_curvature_rigid_motion_invariance(pts, ang, shift):
    assume(well_spread(pts))
    R = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
    k0 = three_point_curvature(*pts)
    k1 = three_point_curvature(*(pts @ R.T + shift))
    assert k1 == pytest.approx(k0, rel=1e-9, abs=1e-13)


@given(triples, st.floats(0.01, 100))
def test_curvature_scales_inversely(pts, s):
    assume(well_spread(pts) and well_spread(s * pts))
    assert three_point_curvature(*(s * pts)) == pytest.approx(three_point_curvature(*pts) / s, rel=1e-9, abs=1e-13)


@given(triples, st.permutations([0, 1, 2]))
def test_curvature_permutation_invariance(pts, perm):
    assume(well_spread(pts))
    assert three_point_curvature(*pts[list(perm)]) == pytest.approx(three_point_curvature(*pts), rel=1e-12, abs=1e-15)


@given(
    st.floats(10, 1000),
    arrays(float, 2, elements=st.floats(-500, 500)),
    arrays(float, 3, elements=st.floats(0, 2 * np.pi)),
)
def test_curvature_matches_circumcircle(R, c, ang):
    d = np.abs(np.sin((ang[:, None] - ang[None, :]) / 2))[np.triu_indices(3, 1)]
    assume(d.min() > 0.05)
    pts = c + R * np.column_stack([np.cos(ang), np.sin(ang)])
    assume(abs(circumradius(*pts) - R) < 1e-9 * R)  # oracle itself well conditioned
    assert three_point_curvature(*pts) == pytest.approx(1 / R, rel=1e-9)
