import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gradxfem.gradients import (
    PlasticGradientOperator,
    effective_gradient,
    effective_gradient_from_mandel,
    gradient_tensor,
    mandel_gradient_to_tensor,
    recover_nodal_plastic_increments,
)
from gradxfem.material import SQ2
from gradxfem.mesh import generate_structured_mesh
from gradxfem.solver import build_discretization


def brute_eta(d):
    """Index-by-index expansion of eta_ijk = eps_ik,j + eps_jk,i - eps_ij,k."""
    eta = np.zeros((3, 3, 3))
    for i, j, k in itertools.product(range(3), repeat=3):
        eta[i, j, k] = d[i, k, j] + d[j, k, i] - d[i, j, k]
    return eta


def brute_effective(eta):
    return np.sqrt(sum(eta[i, j, k] ** 2 for i, j, k in itertools.product(range(3), repeat=3)) / 4.0)


def sym_gradient(a):
    return 0.5 * (a + np.swapaxes(a, 0, 1))


grad_st = arrays(np.float64, (3, 3, 3), elements=st.floats(-10, 10)).map(sym_gradient)


class TestGradientTensor:
    def test_uniform_field(self):
        assert np.all(gradient_tensor(np.zeros((3, 3, 3))) == 0)
        assert effective_gradient(np.zeros((3, 3, 3))) == 0

    def test_linear_eps11(self):
        c = 2.5
        d = np.zeros((3, 3, 3))
        d[0, 0, 0] = c  # eps_11 = c x_1
        eta = gradient_tensor(d)
        np.testing.assert_allclose(eta, brute_eta(d))
        assert eta[0, 0, 0] == pytest.approx(c)
        assert eta[0, 0, 1] == 0
        assert np.count_nonzero(eta) == 1
        assert effective_gradient(eta) == pytest.approx(c / 2)

    def test_linear_eps11_along_x2(self):
        c = 3.0
        d = np.zeros((3, 3, 3))
        d[0, 0, 1] = c  # eps_11 = c x_2
        eta = gradient_tensor(d)
        np.testing.assert_allclose(eta, brute_eta(d))
        # eta_121 = eta_211 = c and eta_112 = -c
        assert (eta[0, 1, 0], eta[1, 0, 0], eta[0, 0, 1]) == (c, c, -c)
        assert effective_gradient(eta) == pytest.approx(brute_effective(brute_eta(d)))
        assert effective_gradient(eta) == pytest.approx(np.sqrt(3) * c / 2)

    @given(grad_st)
    def test_matches_brute_force(self, d):
        np.testing.assert_allclose(gradient_tensor(d), brute_eta(d), atol=1e-12)
        assert effective_gradient(gradient_tensor(d)) == pytest.approx(brute_effective(brute_eta(d)), abs=1e-10)

    @given(grad_st)
    def test_symmetric_in_first_pair(self, d):
        eta = gradient_tensor(d)
        np.testing.assert_allclose(eta, np.swapaxes(eta, 0, 1), atol=1e-12)

    @given(grad_st, st.floats(-50, 50))
    def test_homogeneous(self, d, c):
        eta = gradient_tensor(d)
        assert effective_gradient(c * eta) == pytest.approx(abs(c) * effective_gradient(eta), rel=1e-12, abs=1e-12)

    def test_mandel_unpacking(self):
        g = np.zeros((4, 2))
        g[3, 1] = SQ2 * 1.5  # eps_12 = 1.5 y
        d = mandel_gradient_to_tensor(g)
        assert d[0, 1, 1] == pytest.approx(1.5) and d[1, 0, 1] == pytest.approx(1.5)
        assert np.count_nonzero(d) == 2
        assert effective_gradient_from_mandel(g) == pytest.approx(brute_effective(brute_eta(d)))


def _qp(mesh):
    disc = build_discretization(mesh)
    return disc.qp_element, disc.qp_xy, disc.qp_dN


class TestRecovery:
    @pytest.fixture(params=[1, 2], ids=["q4", "q8"])
    def distorted(self, request):
        m = generate_structured_mesh(2.0, 1.0, density=(4, 3), order=request.param)
        x, y = m.nodes.T
        # affine map keeps elements parallelograms
        m.nodes[:] = np.column_stack([x + 0.3 * y, 0.2 * x + y])
        return m

    def test_uniform(self, distorted):
        qe, qxy, qdn = _qp(distorted)
        vals = np.tile([1.0, -2.0, 0.5, 0.25], (len(qe), 1))
        nodal, isolated = recover_nodal_plastic_increments(distorted, qe, qxy, vals)
        assert not isolated.any()
        np.testing.assert_allclose(nodal, np.broadcast_to(vals[0], nodal.shape), atol=1e-12)
        g = PlasticGradientOperator(distorted, qe, qxy, qdn).gradients(vals)
        np.testing.assert_allclose(g, 0.0, atol=1e-10)

    def test_linear_field_exact(self, distorted):
        qe, qxy, qdn = _qp(distorted)
        a = np.array([[1.0, 2.0, -1.0], [0.5, -3.0, 0.0], [0.0, 0.0, 0.0], [-2.0, 1.0, 4.0]])
        lin = lambda xy: a[:, 0] + xy[:, :1] * a[:, 1] + xy[:, 1:] * a[:, 2]
        nodal, _ = recover_nodal_plastic_increments(distorted, qe, qxy, lin(qxy))
        np.testing.assert_allclose(nodal, lin(distorted.nodes), atol=1e-10)
        g = PlasticGradientOperator(distorted, qe, qxy, qdn).gradients(lin(qxy))
        np.testing.assert_allclose(g, np.broadcast_to(a[:, 1:], g.shape), atol=1e-8)

    def test_single_element_bilinear_centre_gradient(self):
        m = generate_structured_mesh(2.0, 2.0, density=(1, 1))
        m.nodes[:] -= 1.0
        qe, qxy, qdn = _qp(m)
        f = lambda xy: 1.0 + 2.0 * xy[:, 0] - 1.0 * xy[:, 1] + 3.0 * xy[:, 0] * xy[:, 1]
        nodal, _ = recover_nodal_plastic_increments(m, qe, qxy, f(qxy)[:, None])
        nodal = nodal[m.elements[0]]
        # gradient of the nodal interpolant at the centre versus the analytic one there
        centre_grad = np.array([(nodal[1] + nodal[2] - nodal[0] - nodal[3])[0] / 4, (nodal[2] + nodal[3] - nodal[0] - nodal[1])[0] / 4])
        h = 1e-6
        c = np.array([[0.0, 0.0]])
        fd = [(f(c + [h, 0]) - f(c - [h, 0]))[0] / (2 * h), (f(c + [0, h]) - f(c - [0, h]))[0] / (2 * h)]
        np.testing.assert_allclose(centre_grad, fd, atol=1e-8)

    def test_isolated_nodes_flagged(self):
        m = generate_structured_mesh(2.0, 1.0, density=(2, 1))
        qe, qxy, _ = _qp(m)
        keep = qe == 0
        _, isolated = recover_nodal_plastic_increments(m, qe[keep], qxy[keep], np.ones((keep.sum(), 4)))
        assert set(np.flatnonzero(isolated)) == set(range(m.n_nodes)) - set(m.elements[0])

    @settings(max_examples=20, deadline=None)
    @given(arrays(np.float64, (4, 3), elements=st.floats(-5, 5)))
    def test_linear_reproduction_property(self, a):
        m = generate_structured_mesh(1.0, 1.0, density=(3, 2))
        qe, qxy, qdn = _qp(m)
        vals = a[:, 0] + qxy[:, :1] * a[:, 1] + qxy[:, 1:] * a[:, 2]
        g = PlasticGradientOperator(m, qe, qxy, qdn).gradients(vals)
        np.testing.assert_allclose(g, np.broadcast_to(a[:, 1:], g.shape), atol=1e-8)
