import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradxfem.mesh import GradingSpec, generate_disc_mesh, generate_structured_mesh, read_mesh, write_mesh
from gradxfem.shapes import gauss_legendre_2d, physical_gradients, shape_functions


def _signed_areas(mesh):
    c = mesh.corners
    x, y = c[..., 0], c[..., 1]
    return 0.5 * np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1)


class TestUniform:
    def test_two_by_two_linear(self):
        m = generate_structured_mesh(1.0, 1.0, density=(2, 2))
        assert (m.n_nodes, m.n_elements) == (9, 4)
        np.testing.assert_allclose(m.element_size, 0.5)

    def test_single_quadratic(self):
        m = generate_structured_mesh(1.0, 1.0, density=(1, 1), order=2)
        assert (m.n_nodes, m.n_elements) == (8, 1)

    @pytest.mark.parametrize("order", [1, 2])
    def test_connectivity_valid_and_ccw(self, order):
        m = generate_structured_mesh(3.0, 2.0, density=(4, 3), order=order)
        assert m.elements.min() >= 0 and m.elements.max() < m.n_nodes
        assert np.all(_signed_areas(m) > 0)
        assert m.min_jacobian() > 0

    def test_node_sets(self):
        m = generate_structured_mesh(2.0, 1.0, density=(4, 2))
        np.testing.assert_allclose(m.nodes[m.node_set("top"), 1], 1.0)
        np.testing.assert_allclose(m.nodes[m.node_set("right"), 0], 2.0)
        with pytest.raises(KeyError, match="available"):
            m.node_set("nope")

    def test_area_sums_to_domain(self):
        m = generate_structured_mesh(3.0, 2.0, density=(5, 4), order=2)
        assert m.areas.sum() == pytest.approx(6.0, rel=1e-12)


class TestShapes:
    @pytest.mark.parametrize("order", [1, 2])
    def test_partition_of_unity(self, order, rng):
        xi, eta = rng.uniform(-1, 1, (2, 50))
        N, dxi, deta = shape_functions(order, xi, eta)
        np.testing.assert_allclose(N.sum(axis=-1), 1.0, atol=1e-12)
        np.testing.assert_allclose(dxi.sum(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(deta.sum(axis=-1), 0.0, atol=1e-12)

    @pytest.mark.parametrize("order", [1, 2])
    def test_kronecker_delta(self, order):
        from gradxfem.shapes import Q4_NODES, Q8_NODES

        ref = Q4_NODES if order == 1 else Q8_NODES
        N, _, _ = shape_functions(order, ref[:, 0], ref[:, 1])
        np.testing.assert_allclose(N, np.eye(len(ref)), atol=1e-14)

    def test_gauss_weights(self):
        for n in (1, 2, 3):
            _, w = gauss_legendre_2d(n)
            assert w.sum() == pytest.approx(4.0)

    def test_physical_gradients_reproduce_linear_field(self):
        m = generate_structured_mesh(2.0, 1.0, density=(2, 1), order=2)
        m.nodes[:, 0] += 0.05 * np.sin(3 * m.nodes[:, 1])  # distort
        pts, _ = gauss_legendre_2d(3)
        coords = m.nodes[m.elements]
        _, dN, _ = physical_gradients(2, coords, pts[:, 0][None, :], pts[:, 1][None, :])
        f = 2.0 * m.nodes[:, 0] - 3.0 * m.nodes[:, 1]
        g = np.einsum("eqna,en->eqa", dN, f[m.elements])
        np.testing.assert_allclose(g, np.broadcast_to([2.0, -3.0], g.shape), atol=1e-10)


class TestGraded:
    @pytest.fixture(scope="class")
    @staticmethod
    def half_plate():
        spec = GradingSpec(focus=(14.0, 0.0), tip_size=1e-3, core=32, half=True)
        return generate_structured_mesh(35.0, 50.0, order=1, grading=spec)

    def test_plate_dof_count_near_reference(self, half_plate):
        # reference coarse plate: 15280 DOFs with 1000 nm tip elements
        assert abs(half_plate.n_dofs / 15280 - 1) <= 0.10

    def test_size_ratio_bound(self, half_plate):
        assert half_plate.max_adjacent_size_ratio() <= 1.5

    def test_tip_elements_have_tip_size(self, half_plate):
        e = half_plate.find_element((14.0 + 1e-5, 1e-5))
        assert half_plate.element_size[e] == pytest.approx(1e-3, rel=1e-9)

    def test_valid(self, half_plate):
        assert half_plate.min_jacobian() > 0
        assert np.all(_signed_areas(half_plate) > 0)
        assert half_plate.areas.sum() == pytest.approx(35.0 * 50.0, rel=1e-10)

    def test_half_sets(self, half_plate):
        lig = half_plate.node_set("ligament")
        assert np.all(half_plate.nodes[lig, 0] >= 14.0 - 1e-12)
        assert np.all(half_plate.nodes[half_plate.node_set("crack_face"), 0] < 14.0)

    def test_full_plate_odd_core_centres_focus(self):
        spec = GradingSpec(focus=(14.0, 0.0), tip_size=1e-3, core=19)
        m = generate_structured_mesh(35.0, 100.0, grading=spec, origin=(0.0, -50.0))
        e = m.find_element((14.0, 0.0))
        np.testing.assert_allclose(m.corners[e].mean(axis=0), [14.0, 0.0], atol=1e-12)
        assert m.max_adjacent_size_ratio() <= 1.5

    def test_ratio_guard(self):
        spec = GradingSpec(focus=(14.0, 0.0), tip_size=1e-3, core=20, half=True, ratio_bound=1.01)
        with pytest.raises(ValueError, match="ratio"):
            generate_structured_mesh(35.0, 50.0, grading=spec)

    def test_bad_spec(self):
        with pytest.raises(ValueError):
            GradingSpec(focus=(0, 0), tip_size=0.0)
        with pytest.raises(ValueError):
            GradingSpec(focus=(0, 0), tip_size=1.0, ratio_bound=1.0)

    @pytest.mark.parametrize("half", [False, True])
    def test_disc(self, half):
        spec = GradingSpec(focus=(0.0, 0.0), tip_size=0.01, core=12, half=half)
        m = generate_disc_mesh(10.0, spec, order=2)
        assert m.min_jacobian() > 0
        r = np.hypot(*m.nodes[m.node_set("remote")].T)
        np.testing.assert_allclose(r, 10.0, rtol=1e-12)
        assert m.max_adjacent_size_ratio() <= 1.5

    @settings(max_examples=15, deadline=None)
    @given(
        st.floats(0.35, 0.65),
        st.sampled_from([1e-3, 5e-3, 2e-2]),
        st.sampled_from([10, 12, 16, 20]),
    )
    def test_plate_like_gradings_valid(self, fx, h, core):
        spec = GradingSpec(focus=(fx * 4.0, 0.0), tip_size=h, core=core, half=True)
        m = generate_structured_mesh(4.0, 3.0, grading=spec)
        assert m.min_jacobian() > 0
        assert m.max_adjacent_size_ratio() <= 1.5 + 1e-12
        assert m.areas.sum() == pytest.approx(12.0, rel=1e-10)

    @settings(max_examples=25, deadline=None)
    @given(
        st.floats(1.0, 6.0),
        st.floats(1.0, 6.0),
        st.floats(0.05, 0.95),
        st.floats(0.1, 0.9),
        st.floats(-4.0, -1.5),
        st.sampled_from([9, 11, 12, 14]),
    )
    def test_any_grading_valid_or_refused(self, W, H, fx, fy, log_h, core):
        # the generator never returns a mesh that breaks the size-ratio bound
        spec = GradingSpec(focus=(fx * W, fy * H), tip_size=10**log_h * min(W, H), core=core)
        try:
            m = generate_structured_mesh(W, H, grading=spec)
        except ValueError as exc:
            assert "bound" in str(exc)
            return
        assert m.min_jacobian() > 0
        assert m.max_adjacent_size_ratio() <= 1.5 + 1e-12
        assert m.areas.sum() == pytest.approx(W * H, rel=1e-10)


def test_mesh_file_round_trip(tmp_path):
    m = generate_structured_mesh(2.0, 1.0, density=(3, 2), order=2)
    p = tmp_path / "m.npz"
    write_mesh(m, p)
    m2 = read_mesh(p)
    np.testing.assert_array_equal(m2.elements, m.elements)
    np.testing.assert_allclose(m2.nodes, m.nodes)
    assert m2.order == 2
    np.testing.assert_array_equal(m2.node_set("top"), m.node_set("top"))
