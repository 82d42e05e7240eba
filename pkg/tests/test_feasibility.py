import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial import ConvexHull

from riskcbf.exceptions import EmptyInterior
from riskcbf.feasibility import (FeasiblePolytope, InscribedEllipsoid, assemble_polytope, box_rows,
                                 halfplane_polygon, max_inscribed_ellipsoid, polygon_area_centroid, volume_cbf,
                                 volume_of)
from riskcbf.geometry import Ellipsoid, RobotShape

from .conftest import rotated_ellipse
from .oracles import inscribed_grid_search, random_polytope

BOX = (-1.0, 1.0, -0.5, 0.5)
UNIT = RobotShape(1.0, 1.0)


def _box_polytope(box):
    return FeasiblePolytope(*box_rows(box))


def test_box_rows():
    P = assemble_polytope([0.0, 0.0, 0.0], UNIT, [], BOX, 3.3, 1.2)
    assert P.n_rows == 4
    rows = {(tuple(a), bj) for a, bj in zip(P.A, P.b)}
    assert rows == {((1.0, 0.0), 1.0), ((-1.0, 0.0), 1.0), ((0.0, 1.0), 0.5), ((0.0, -1.0), 0.5)}
    with pytest.raises(ValueError):
        box_rows((1.0, 1.0, 0.0, 1.0))


def test_obstacle_row_substitution():
    # facing away from a unit disk at (3, 0): lg_h = (4, 0), h = 2.8
    P = assemble_polytope([0.0, 0.0, math.pi], UNIT, [Ellipsoid([3.0, 0.0], np.eye(2))], BOX, 3.3, 1.2)
    assert P.n_rows == 5
    np.testing.assert_allclose(P.A[4], [-4.0, 0.0], atol=1e-8)
    assert P.b[4] == pytest.approx(9.24, abs=1e-8)


def test_row_count_and_kinds(rng):
    obstacles = [rotated_ellipse(rng.uniform(2, 4, 2), [0.4, 0.3], 0.2) for _ in range(5)]
    P = assemble_polytope([0.0, 0.0, 0.3], UNIT, obstacles, BOX, 3.3, 1.2)
    assert P.n_rows == 9
    assert P.kinds == ["bound"] * 4 + list(range(5))
    assert len(P.cbf_rows) == 5
    with pytest.raises(ValueError):
        assemble_polytope([0.0, 0.0, 0.3], UNIT, obstacles, BOX, [3.3], 1.2)


def test_inscribed_unit_square():
    E = max_inscribed_ellipsoid(_box_polytope((-1.0, 1.0, -1.0, 1.0)))
    np.testing.assert_allclose(E.H, np.eye(2), atol=1e-6)
    np.testing.assert_allclose(E.c, 0.0, atol=1e-6)
    assert abs(E.v_star) < 1e-6
    assert volume_of(E) == pytest.approx(math.pi, abs=1e-6)


def test_inscribed_rectangle():
    E = max_inscribed_ellipsoid(_box_polytope(BOX))
    np.testing.assert_allclose(E.H, np.diag([1.0, 0.5]), atol=1e-6)
    np.testing.assert_allclose(E.c, 0.0, atol=1e-6)
    assert E.v_star == pytest.approx(math.log(2.0), abs=1e-6)
    assert volume_of(E) == pytest.approx(math.pi / 2, abs=1e-6)


@pytest.mark.parametrize("seed", range(3))
def test_inscribed_matches_grid_search(seed):
    A, b = random_polytope(np.random.default_rng(seed))
    E = max_inscribed_ellipsoid(FeasiblePolytope(A, b))
    assert E.v_star <= inscribed_grid_search(A, b) + 1e-4


def test_empty_interior():
    P = FeasiblePolytope(np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]), np.array([-1.0, -1.0, 1.0, 1.0]))
    with pytest.raises(EmptyInterior):
        max_inscribed_ellipsoid(P)
    Z = FeasiblePolytope(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([-1.0, 1.0]))
    with pytest.raises(EmptyInterior):
        max_inscribed_ellipsoid(Z)


@given(st.integers(0, 2**31), st.integers(3, 10))
def test_inscribed_invariants(seed, n_rows):
    A, b = random_polytope(np.random.default_rng(seed), n_rows)
    E = max_inscribed_ellipsoid(FeasiblePolytope(A, b))
    assert np.all(np.linalg.eigvalsh(E.H) > 0)
    np.testing.assert_allclose(E.H, E.H.T)
    assert np.all(np.linalg.norm(A @ E.H, axis=1) + A @ E.c <= b + 1e-7)
    assert np.all(E.multipliers * E.slacks <= 1e-6)
    assert volume_of(E) == pytest.approx(math.pi * np.linalg.det(E.H), rel=1e-12)


@pytest.mark.parametrize("H,V", [(np.eye(2), math.pi), (np.diag([1.0, 0.5]), math.pi / 2), (np.diag([0.1, 0.1]), 0.01 * math.pi)])
def test_volume_of_examples(H, V):
    E = InscribedEllipsoid(H, np.zeros(2), -math.log(np.linalg.det(H)), np.zeros(4), np.array([], int), np.zeros(4), 0, 1.0)
    assert volume_of(E) == pytest.approx(V, rel=1e-14)


def test_volume_cbf_constant_polytope():
    P = assemble_polytope([0.3, 0.2, 0.1], UNIT, [], BOX, 3.3, 1.2)
    E = max_inscribed_ellipsoid(P)
    vc = volume_cbf([0.3, 0.2, 0.1], P, E, V0=0.01, kappa_v=1.1)
    np.testing.assert_array_equal(vc.dV_dx, 0.0)
    np.testing.assert_array_equal(vc.lg_hv, 0.0)
    assert vc.h_v == pytest.approx(math.pi / 2 - 0.01, abs=1e-6)


def _pipeline_volume(x, obstacles, second_order="fd"):
    return volume_of(max_inscribed_ellipsoid(assemble_polytope(x, RobotShape(), obstacles, BOX, 3.3, 1.2, second_order)))


@pytest.mark.parametrize("second_order", ["fd", "kkt"])
def test_volume_gradient_matches_full_pipeline(second_order):
    rng = np.random.default_rng(4)
    checked = 0
    while checked < 10:
        E = rotated_ellipse(rng.uniform(1.2, 2.0) * np.array([1.0, rng.uniform(-1, 1)]), rng.uniform(0.3, 1.0, 2),
                            rng.uniform(0, math.pi))
        x = np.array([0.0, 0.0, rng.uniform(-math.pi, math.pi)])
        P = assemble_polytope(x, RobotShape(), [E], BOX, 3.3, 1.2, second_order)
        Ein = max_inscribed_ellipsoid(P)
        if Ein.near_degenerate or 4 not in Ein.active_set:
            continue
        vc = volume_cbf(x, P, Ein, 0.01, 1.1)
        if np.linalg.norm(vc.dV_dx) < 1e-6:
            continue
        h = 1e-5
        fd = np.array([(_pipeline_volume(x + h * e, [E], second_order) - _pipeline_volume(x - h * e, [E], second_order))
                       / (2 * h) for e in np.eye(3)])
        assert np.linalg.norm(vc.dV_dx - fd) <= 2e-3 * np.linalg.norm(fd)
        checked += 1


def _reference_polygon(A, b, bound):
    # every pairwise intersection that satisfies all rows, ordered by convex hull
    A = np.vstack([A, [[1, 0], [-1, 0], [0, 1], [0, -1]]])
    b = np.concatenate([b, [bound] * 4])
    pts = []
    for i, j in itertools.combinations(range(len(b)), 2):
        M = A[[i, j]]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        v = np.linalg.solve(M, b[[i, j]])
        if np.all(A @ v <= b + 1e-9 * max(1.0, bound)):
            pts.append(v)
    return np.array(pts)


@given(st.integers(0, 2**31), st.integers(1, 8))
def test_halfplane_polygon_matches_enumeration(seed, k):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(k, 2))
    b = rng.normal(size=k)
    V = halfplane_polygon(A, b, bound=10.0)
    ref = _reference_polygon(A, b, 10.0)
    if len(ref) < 3 or ConvexHull(ref, qhull_options="QJ").volume < 1e-9:
        assert len(V) == 0 or polygon_area_centroid(V)[0] < 1e-6
        return
    hull = ConvexHull(ref)
    area, centroid = polygon_area_centroid(V)
    assert area == pytest.approx(hull.volume, rel=1e-9)
    assert np.all(A @ V.T <= b[:, None] + 1e-9)
