import numpy as np
import pytest

from mortar_iga.errors import DomainError, InversionError, SingularMapError
from mortar_iga.patches import (
    Face,
    Patch,
    PatchQuadrature,
    QuadratureRule,
    box_patch,
    eval_field,
    invert_point,
    jacobian,
    map_point,
    physical_gradient,
)
from mortar_iga.splines import KnotVector, SplineSpace, open_uniform_knots


def quarter_annulus():
    ang = SplineSpace(
        KnotVector(np.array([0.0, 0, 0, 1, 1, 1]), 2), np.array([1.0, np.sqrt(2) / 2, 1.0])
    )
    rad = SplineSpace(open_uniform_knots(1, 1))
    ctrl = np.zeros((2, 3, 2))
    for ir, r in enumerate([1.0, 2.0]):
        ctrl[ir] = r * np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    return Patch([rad, ang], ctrl)


def simple_box(p=2, nel=(3, 2), size=(2.0, 3.0)):
    spaces = [SplineSpace(open_uniform_knots(p, n)) for n in nel]
    return box_patch(spaces, [0.0] * len(nel), list(size))


class TestMapPoint:
    def test_affine_identity(self):
        sp = SplineSpace(open_uniform_knots(1, 4))
        patch = box_patch([sp, sp], [0.0, 0.0], [1.0, 1.0])
        rng = np.random.default_rng(0)
        for _ in range(10):
            xi = rng.uniform(0, 1, 2)
            np.testing.assert_allclose(map_point(patch, xi), xi, atol=1e-14)

    def test_quarter_circle_on_unit_circle(self):
        patch = quarter_annulus()
        for t in np.linspace(0, 1, 25):
            x = map_point(patch, (0.0, t))
            assert abs(np.linalg.norm(x) - 1.0) < 1e-13

    def test_convex_hull(self):
        patch = quarter_annulus()
        cp = patch.control_points.reshape(-1, 2)
        rng = np.random.default_rng(5)
        for _ in range(20):
            x = map_point(patch, rng.uniform(0, 1, 2))
            assert np.all(x >= cp.min(axis=0) - 1e-14)
            assert np.all(x <= cp.max(axis=0) + 1e-14)

    def test_out_of_domain(self):
        with pytest.raises(DomainError):
            map_point(simple_box(), (1.5, 0.5))


class TestJacobian:
    def test_box_constant_diagonal(self):
        patch = simple_box(size=(2.0, 3.0))
        J, det = jacobian(patch, (0.4, 0.9))
        np.testing.assert_allclose(J, np.diag([2.0, 3.0]), atol=1e-13)
        assert abs(det - 6.0) < 1e-12

    def test_finite_difference(self):
        patch = quarter_annulus()
        rng = np.random.default_rng(1)
        h = 1e-6
        for _ in range(6):
            xi = rng.uniform(0.05, 0.95, 2)
            J, _ = jacobian(patch, xi)
            for l in range(2):
                e = np.zeros(2)
                e[l] = h
                fd = (map_point(patch, xi + e) - map_point(patch, xi - e)) / (2 * h)
                np.testing.assert_allclose(J[:, l], fd, atol=1e-6)

    def test_quadrature_volume(self):
        patch = simple_box(p=2, nel=(3, 4), size=(2.0, 3.0))
        pq = PatchQuadrature(patch)
        assert abs(pq.element_volume_measure().sum() - 6.0) < 1e-10

    def test_singular_map_detected(self):
        sp = SplineSpace(open_uniform_knots(1, 1))
        # degenerate control grid: zero width in x
        ctrl = np.array([[[0.0, 0.0], [0.0, 1.0]], [[0.0, 0.0], [0.0, 1.0]]])
        patch = Patch([sp, sp], ctrl)
        with pytest.raises(SingularMapError):
            jacobian(patch, (0.5, 0.5))


class TestPhysicalGradient:
    def test_linear_field_reproduced(self):
        patch = simple_box(p=2, nel=(3, 2), size=(2.0, 3.0))
        grids = np.meshgrid(*[s.greville() for s in patch.spaces], indexing="ij")
        x, y = 2.0 * grids[0], 3.0 * grids[1]
        coeffs = (1.5 * x - 2.5 * y + 4.0).ravel()
        rng = np.random.default_rng(2)
        for _ in range(10):
            g = physical_gradient(patch, coeffs, rng.uniform(0, 1, 2))
            np.testing.assert_allclose(g, [1.5, -2.5], atol=1e-11)

    def test_constant_field(self):
        patch = simple_box()
        coeffs = np.full(patch.n_dofs, 7.0)
        g = physical_gradient(patch, coeffs, (0.3, 0.6))
        np.testing.assert_allclose(g, [0.0, 0.0], atol=1e-12)

    def test_cubic_field_matches_fd(self):
        patch = simple_box(p=3, nel=(2, 2), size=(1.0, 1.0))
        rng = np.random.default_rng(3)
        coeffs = rng.standard_normal(patch.n_dofs)
        h = 1e-6
        for _ in range(8):
            xi = rng.uniform(0.05, 0.95, 2)
            g = physical_gradient(patch, coeffs, xi)
            for l in range(2):
                e = np.zeros(2)
                e[l] = h
                fd = (eval_field(patch, coeffs, xi + e) - eval_field(patch, coeffs, xi - e)) / (
                    2 * h
                )
                # physical == parametric here (unit box)
                assert abs(g[l] - fd) < 1e-5


class TestInvertPoint:
    def test_affine_box_closed_form(self):
        patch = simple_box(p=1, nel=(1, 1), size=(2.0, 4.0))
        xi = invert_point(patch, np.array([0.5, 3.0]))
        np.testing.assert_allclose(xi, [0.25, 0.75], atol=1e-12)

    def test_round_trip(self):
        patch = quarter_annulus()
        rng = np.random.default_rng(4)
        tol = 1e-10 * patch.diameter()
        for _ in range(100):
            xi = rng.uniform(0, 1, 2)
            x = map_point(patch, xi)
            xi2 = invert_point(patch, x)
            assert np.linalg.norm(map_point(patch, xi2) - x) <= tol

    def test_outside_image_fails(self):
        patch = quarter_annulus()
        with pytest.raises(InversionError):
            invert_point(patch, np.array([5.0, 5.0]))


class TestQuadratureTables:
    def test_polynomial_exactness_2p(self):
        # Gauss with p+1 points integrates degree 2p exactly on each element
        p = 2
        patch = simple_box(p=p, nel=(3, 3), size=(1.0, 1.0))
        pq = PatchQuadrature(patch)
        total = 0.0
        for chunk in pq.iter_chunks():
            data = pq.chunk_tables(chunk)
            xq = data["xq"]
            total += (data["wdet"] * (xq[..., 0] ** (2 * p)) * (xq[..., 1] ** p)).sum()
        exact = 1.0 / (2 * p + 1) / (p + 1)
        assert abs(total - exact) < 1e-12

    def test_chunk_tables_match_pointwise_eval(self):
        patch = quarter_annulus()
        pq = PatchQuadrature(patch, QuadratureRule((3, 4)))
        data = pq.chunk_tables(np.arange(pq.n_elements))
        rng = np.random.default_rng(8)
        coeffs = rng.standard_normal(patch.n_dofs)
        # reconstruct field values at quadrature points two ways
        for e in range(pq.n_elements):
            for q in range(0, pq.nq_per_element, 5):
                val_table = data["N"][e, q] @ coeffs[data["idx"][e]]
                # physical point -> parametric via inversion, then eval
                xi = invert_point(patch, data["xq"][e, q])
                val_direct = eval_field(patch, coeffs, xi)
                assert abs(val_table - val_direct) < 1e-9

    def test_face_dof_indices(self):
        patch = simple_box(p=2, nel=(3, 2))
        idx = patch.face_dof_indices(Face.parse("xi_min"))
        n1, n2 = [s.n_basis for s in patch.spaces]
        assert len(idx) == n2
        assert np.all(idx == np.arange(n2))
        idx = patch.face_dof_indices(Face.parse("eta_max"))
        assert len(idx) == n1
