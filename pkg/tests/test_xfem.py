import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradxfem.crack import CrackGeometry, signed_distance, tangential_coordinate
from gradxfem.mesh import generate_structured_mesh
from gradxfem.shapes import inverse_map
from gradxfem.xfem import (
    TRIANGLE_RULES,
    EnrichedDofMap,
    EnrichmentConfig,
    blending_weight,
    classify_nodes,
    element_basis,
    element_quadrature,
    heaviside,
    partition_element,
    tip_function_gradients,
    tip_functions,
    triangle_quadrature,
)


@pytest.fixture
def patch():
    """5 x 5 unit elements with a horizontal crack at mid-row ending in an element centre."""
    mesh = generate_structured_mesh(5.0, 5.0, density=(5, 5))
    crack = CrackGeometry.straight((0.0, 2.5), (2.5, 2.5))
    return mesh, crack


def _area(poly):
    x, y = np.asarray(poly).T
    return 0.5 * abs(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


class TestFunctions:
    def test_heaviside(self):
        assert heaviside(0.3) == 1
        assert heaviside(-1e-9) == -1

    @given(st.floats(1e-12, 1e6))
    def test_heaviside_antisymmetric(self, phi):
        assert heaviside(-phi) == -heaviside(phi)

    def test_tip_axis(self):
        np.testing.assert_allclose(tip_functions(1.0, 0.0, 0.5), [0, 1, 0, 0], atol=1e-15)

    def test_tip_face(self):
        np.testing.assert_allclose(tip_functions(1.0, np.pi, 0.5), [1, 0, 0, 0], atol=1e-15)

    @given(st.floats(1e-3, 1e2), st.floats(-3.1, 3.1))
    def test_tip_homogeneity(self, r, t):
        np.testing.assert_allclose(tip_functions(4 * r, t, 0.5), 2 * tip_functions(r, t, 0.5), rtol=1e-12, atol=1e-300)

    def test_tip_needs_positive_r(self):
        with pytest.raises(ValueError):
            tip_functions(0.0, 0.0, 0.5)

    @settings(max_examples=50)
    @given(
        st.floats(1e-2, 10.0),
        st.floats(-3.0, 3.0),
        st.sampled_from([0.5, 2 / 3, 0.3]),
        st.floats(0, 2 * np.pi),
    )
    def test_gradients_match_finite_differences(self, r, t, lam, rot):
        tangent = np.array([np.cos(rot), np.sin(rot)])
        normal = np.array([-tangent[1], tangent[0]])
        x = r * (np.cos(t) * tangent + np.sin(t) * normal)

        def F(p):
            rl = np.hypot(p @ tangent, p @ normal)
            return tip_functions(rl, np.arctan2(p @ normal, p @ tangent), lam)

        h = 1e-6 * r
        fd = np.stack([(F(x + h * e) - F(x - h * e)) / (2 * h) for e in np.eye(2)], axis=-1)
        g = tip_function_gradients(r, t, lam, tangent)
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-6 * np.abs(fd).max())

    def test_gradient_on_axis(self):
        lam, r = 2 / 3, 0.3
        g = tip_function_gradients(r, 0.0, lam)
        assert g[1, 0] == pytest.approx(lam * r ** (lam - 1))
        assert g[1, 1] == pytest.approx(0.0, abs=1e-15)

    @given(st.floats(1e-2, 10.0), st.floats(-3.0, 3.0))
    def test_gradient_homogeneity(self, r, t):
        lam = 2 / 3
        np.testing.assert_allclose(
            tip_function_gradients(4 * r, t, lam), 4 ** (lam - 1) * tip_function_gradients(r, t, lam), rtol=1e-10, atol=1e-14
        )


class TestClassification:
    def test_topological_four_tip_nodes(self, patch):
        mesh, crack = patch
        dm = classify_nodes(mesh, crack, EnrichmentConfig("topological"))
        assert len(dm.tip_nodes) == 4
        assert set(dm.tip_nodes) == set(mesh.elements[dm.tip_element])

    def test_dof_formula_and_disjoint(self, patch):
        mesh, crack = patch
        dm = classify_nodes(mesh, crack, EnrichmentConfig("topological"))
        assert np.intersect1d(dm.heaviside_nodes, dm.tip_nodes).size == 0
        assert dm.n_dofs == 2 * mesh.n_nodes + 2 * len(dm.heaviside_nodes) + 8 * len(dm.tip_nodes)

    def test_heaviside_nodes_brute_force(self, patch):
        mesh, crack = patch
        dm = classify_nodes(mesh, crack, EnrichmentConfig("topological"))
        expected = set()
        for e, conn in enumerate(mesh.elements):
            phi = signed_distance(mesh.nodes[conn], crack)
            psi = tangential_coordinate(mesh.nodes[conn], crack)
            if phi.min() < 0 < phi.max() and psi.max() <= 0:
                expected |= set(conn.tolist())
        expected -= set(dm.tip_nodes.tolist())
        assert set(dm.heaviside_nodes.tolist()) == expected
        # two cut element columns behind the tip element: 3 node columns x 2 rows, minus 2 tip nodes
        assert len(expected) == 4

    def test_geometrical_brute_force(self, patch):
        mesh, crack = patch
        r_e = 0.6  # between the tip element's inradius and circumradius
        dm = classify_nodes(mesh, crack, EnrichmentConfig("geometrical", r_e=r_e))
        d = np.hypot(*(mesh.nodes - crack.tip).T)
        expected = set(np.flatnonzero(d <= r_e)) | set(mesh.elements[dm.tip_element])
        assert set(dm.tip_nodes.tolist()) == expected
        dm2 = classify_nodes(mesh, crack, EnrichmentConfig("geometrical", r_e=1.6))
        assert len(dm2.tip_nodes) > 4

    def test_none_strategy(self, patch):
        mesh, crack = patch
        dm = classify_nodes(mesh, crack, EnrichmentConfig("none"))
        assert dm.n_dofs == 2 * mesh.n_nodes

    def test_dofs_layout(self):
        dm = EnrichedDofMap(9, [0, 1], [4, 5, 7, 8])
        assert dm.n_dofs == 18 + 4 + 32
        np.testing.assert_array_equal(dm.heaviside_dofs(1), [20, 21])
        assert dm.tip_dofs(5).shape == (4, 2)
        assert dm.tip_dofs(8)[-1, -1] == dm.n_dofs - 1
        with pytest.raises(ValueError):
            EnrichedDofMap(9, [1], [1])

    def test_bad_config(self):
        with pytest.raises(ValueError):
            EnrichmentConfig("sideways")
        with pytest.raises(ValueError):
            EnrichmentConfig("geometrical", r_e=0.0)


class TestBlending:
    def test_values(self, patch):
        mesh, crack = patch
        dm = classify_nodes(mesh, crack, EnrichmentConfig("topological"))
        e = dm.tip_element
        centre = mesh.corners[e].mean(axis=0)
        assert blending_weight([centre], dm, mesh)[0] == pytest.approx(1.0)
        assert blending_weight([(4.5, 0.5)], dm, mesh)[0] == 0.0
        # neighbour to the right shares the edge x = 3 with two enriched nodes
        assert blending_weight([(3.5, 2.5)], dm, mesh)[0] == pytest.approx(0.5)


class TestPartition:
    def test_uncut(self):
        c = np.array([(0, 0), (2, 0), (2, 1), (0, 1)], dtype=float)
        tris = partition_element(c, CrackGeometry.straight((-5, 3), (-4, 3)))
        assert len(tris) == 2
        assert sum(_area(t) for t in tris) == pytest.approx(2.0, rel=1e-12)

    def test_fully_cut(self):
        c = np.array([(0, 0), (1, 0), (1, 1), (0, 1)], dtype=float)
        crack = CrackGeometry.straight((-1, 0.3), (2, 0.45))
        tris = partition_element(c, crack)
        assert len(tris) >= 4
        assert sum(_area(t) for t in tris) == pytest.approx(1.0, rel=1e-12)
        for t in tris:
            phi = signed_distance(t, crack)
            assert phi.min() >= -1e-12 or phi.max() <= 1e-12

    def test_tip_at_centre(self):
        c = np.array([(0, 0), (1, 0), (1, 1), (0, 1)], dtype=float)
        tris = partition_element(c, CrackGeometry.straight((-1, 0.5), (0.5, 0.5)))
        assert sum(_area(t) for t in tris) == pytest.approx(1.0, rel=1e-12)
        assert all(np.any(np.all(np.isclose(t, (0.5, 0.5)), axis=1)) for t in tris)

    @settings(max_examples=60, deadline=None)
    @given(
        st.floats(-0.5, 1.5), st.floats(0.05, 0.95), st.floats(-0.5, 0.5), st.floats(0, 1), st.floats(-0.2, 0.2)
    )
    def test_area_conserved(self, tx, ty, slope, skew, shear):
        c = np.array([(0, 0), (1, shear), (1 + skew * 0.3, 1), (skew * 0.3, 1 + shear)], dtype=float)
        crack = CrackGeometry.straight((-3.0, ty - 3.0 * slope), (tx, ty + tx * slope))
        tris = partition_element(c, crack)
        assert sum(_area(t) for t in tris) == pytest.approx(_area(c), rel=1e-12)


REF = np.array([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)])


class TestTriangleQuadrature:
    def test_order_one(self):
        p, w = triangle_quadrature(REF, 1)
        np.testing.assert_allclose(p, [[1 / 3, 1 / 3]])
        np.testing.assert_allclose(w, [0.5])

    @pytest.mark.parametrize("order", sorted(TRIANGLE_RULES))
    @pytest.mark.parametrize("levels", [0, 2])
    def test_monomial_exactness(self, order, levels):
        p, w = triangle_quadrature(REF, order, levels)
        for a in range(order + 1):
            for b in range(order + 1 - a):
                exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
                assert np.sum(w * p[:, 0] ** a * p[:, 1] ** b) == pytest.approx(exact, rel=1e-12, abs=1e-15)

    @pytest.mark.parametrize("order", sorted(TRIANGLE_RULES))
    def test_weights_positive(self, order):
        _, w = triangle_quadrature(REF, order)
        assert np.all(w > 0)
        assert w.sum() == pytest.approx(0.5, rel=1e-14)

    @given(st.lists(st.floats(-5, 5), min_size=6, max_size=6), st.integers(0, 3))
    def test_area_conserved(self, xs, levels):
        tri = np.array(xs).reshape(3, 2)
        area = _area(tri)
        if area < 1e-3:
            return
        _, w = triangle_quadrature(tri, 5, levels)
        assert w.sum() == pytest.approx(area, rel=1e-12)

    def test_unknown_order(self):
        with pytest.raises(ValueError):
            triangle_quadrature(REF, 9)


class TestElementBasis:
    @pytest.fixture
    def enriched(self, patch):
        mesh, crack = patch
        cfg = EnrichmentConfig("topological", lam=2 / 3)
        return mesh, crack, cfg, classify_nodes(mesh, crack, cfg)

    def _basis(self, mesh, crack, cfg, dm, e, xy):
        nat = inverse_map(mesh.corners[e], xy)
        return element_basis(mesh, e, nat, xy, crack, dm, cfg)

    def test_standard_partition_of_unity(self, enriched, rng):
        mesh, crack, cfg, dm = enriched
        e = dm.tip_element
        xy = mesh.corners[e].min(axis=0) + rng.uniform(0.01, 0.99, (30, 2))
        N, dN, *_ = self._basis(mesh, crack, cfg, dm, e, xy)
        np.testing.assert_allclose(N.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(dN.sum(axis=1), 0.0, atol=1e-12)

    @pytest.mark.parametrize("which", ["tip", "heaviside"])
    def test_shifted_enrichment_vanishes_at_nodes(self, enriched, which):
        mesh, crack, cfg, dm = enriched
        if which == "tip":
            e = dm.tip_element
        else:
            e = next(k for k, conn in enumerate(mesh.elements) if np.all(dm.heaviside_index(conn) >= 0))
        conn = mesh.elements[e]
        xy = mesh.nodes[conn] + 1e-9 * (mesh.corners[e].mean(axis=0) - mesh.nodes[conn])
        N, _, vals, _, dofs = self._basis(mesh, crack, cfg, dm, e, xy)
        assert vals.shape[1] > 4
        np.testing.assert_allclose(vals[:, 4:], 0.0, atol=1e-6)

    def test_gradients_match_finite_differences(self, enriched, rng):
        mesh, crack, cfg, dm = enriched
        e = dm.tip_element
        xy = mesh.corners[e].min(axis=0) + rng.uniform(0.1, 0.9, (5, 2))
        xy = xy[np.abs(xy[:, 1] - 2.5) > 0.05]
        _, _, vals, grads, _ = self._basis(mesh, crack, cfg, dm, e, xy)
        h = 1e-7
        for k in range(2):
            dx = np.zeros(2)
            dx[k] = h
            vp = self._basis(mesh, crack, cfg, dm, e, xy + dx)[2]
            vm = self._basis(mesh, crack, cfg, dm, e, xy - dx)[2]
            np.testing.assert_allclose(grads[..., k], (vp - vm) / (2 * h), rtol=1e-5, atol=1e-6)

    def test_quadrature_covers_element(self, enriched):
        mesh, crack, cfg, dm = enriched
        for e in range(mesh.n_elements):
            q = element_quadrature(mesh, e, crack, dm, cfg)
            if q is not None:
                assert q[1].sum() == pytest.approx(mesh.areas[e], rel=1e-12)
                assert np.all(q[1] > 0)

    def test_enrichment_off_equals_standard(self, patch, rng):
        mesh, crack = patch
        cfg = EnrichmentConfig("none")
        dm = EnrichedDofMap.empty(mesh.n_nodes)
        e = 7
        xy = mesh.corners[e].min(axis=0) + rng.uniform(0, 1, (9, 2))
        N, dN, vals, grads, dofs = self._basis(mesh, crack, cfg, dm, e, xy)
        np.testing.assert_array_equal(vals, N)
        np.testing.assert_array_equal(grads, dN)
        np.testing.assert_array_equal(dofs[:, 0], 2 * mesh.elements[e])
