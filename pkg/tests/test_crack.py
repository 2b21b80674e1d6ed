import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gradxfem.crack import CrackGeometry, polar_at_tip, signed_distance, tangential_coordinate

H = CrackGeometry.straight((-1.0, 0.0), (0.0, 0.0))


class TestGeometry:
    def test_tip_is_last_vertex(self):
        c = CrackGeometry([(0, 0), (1, 0.2), (2, 0.1)])
        np.testing.assert_allclose(c.tip, (2, 0.1))
        np.testing.assert_allclose(c.mouth, (0, 0))

    def test_tangent_normal_orthonormal(self):
        c = CrackGeometry([(0, 0), (1, 0.2), (2, 1.1)])
        assert np.linalg.norm(c.tangent) == pytest.approx(1.0)
        assert np.linalg.norm(c.normal) == pytest.approx(1.0)
        assert c.tangent @ c.normal == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize(
        "pts",
        [[(0, 0)], [(0, 0), (0, 0)], [(0, 0), (2, 0), (2, 1), (1, -1)]],
    )
    def test_invalid(self, pts):
        with pytest.raises(ValueError):
            CrackGeometry(pts)


class TestLevelSets:
    def test_above_interior(self):
        assert signed_distance([(-0.5, 0.3)], H)[0] == pytest.approx(0.3)
        assert signed_distance([(-0.5, -0.3)], H)[0] == pytest.approx(-0.3)

    def test_on_surface(self):
        assert signed_distance([(-0.5, 0.0)], H)[0] == 0.0

    def test_beyond_tip(self):
        assert signed_distance([(1.0, 1.0)], H)[0] == pytest.approx(1.0)

    def test_psi(self):
        np.testing.assert_allclose(tangential_coordinate([(-0.5, 0.2), (0.0, 0.3), (0.4, 0)], H), [-0.5, 0.0, 0.4])

    def test_polar(self):
        r, t = polar_at_tip([(0.7, 0.0), (0.0, 0.7)], H)
        np.testing.assert_allclose(r, 0.7)
        np.testing.assert_allclose(t, [0.0, np.pi / 2])

    def test_face_limit(self):
        _, t = polar_at_tip([(-0.5, 1e-12), (-0.5, -1e-12)], H)
        assert t[0] == pytest.approx(np.pi)
        assert t[1] == pytest.approx(-np.pi)

    @given(st.floats(-1.9, 3), st.floats(-3, 3), st.floats(0, 2 * np.pi))
    def test_polar_invariants(self, x, y, rot):
        # points level with the crack (mouth at x = -2) so the nearest crack point is interior or the tip
        R = np.array([[np.cos(rot), -np.sin(rot)], [np.sin(rot), np.cos(rot)]])
        c = CrackGeometry([R @ (-2.0, 0.0), R @ (0.0, 0.0)])
        p = R @ (x, y)
        r, t = polar_at_tip([p], c)
        assert r[0] >= 0
        assert -np.pi <= t[0] <= np.pi
        # straight crack: level sets equal the rotated Cartesian coordinates
        assert signed_distance([p], c)[0] == pytest.approx(y, abs=1e-9)
        assert tangential_coordinate([p], c)[0] == pytest.approx(x, abs=1e-9)

    def test_sign_change_across_kinked_crack(self):
        c = CrackGeometry([(0, 0), (1, 0), (2, 1)])
        phi = signed_distance([(0.5, 0.1), (0.5, -0.1), (1.6, 0.7), (1.6, 0.5)], c)
        assert phi[0] > 0 > phi[1]
        assert phi[2] > 0 > phi[3]
