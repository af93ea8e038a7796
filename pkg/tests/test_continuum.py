import numpy as np
import pytest

from mortar_iga.continuum import (
    BoundaryCondition,
    Material,
    PatchAssembler,
    assemble_neumann,
    svk_stress,
)
from mortar_iga.errors import DomainError, ElementInversionError
from mortar_iga.patches import Face, PatchQuadrature, box_patch
from mortar_iga.splines import SplineSpace, open_uniform_knots


def make_box(p=2, nel=(2, 2), size=(1.0, 1.0), dim=2):
    spaces = [SplineSpace(open_uniform_knots(p, n)) for n in nel]
    return box_patch(spaces, [0.0] * dim, list(size))


SVK = Material("saint-venant-kirchhoff", E=10.0, nu=0.3)


class TestSvkStress:
    def test_reference_is_stress_free(self):
        P, psi = svk_stress(np.eye(3), SVK)
        np.testing.assert_allclose(P, 0.0, atol=1e-15)
        assert psi == 0.0

    def test_uniaxial_nu_zero(self):
        # hand evaluation: nu=0 -> lam=0, mu=E/2; P11 = stretch*E*(stretch^2-1)/2
        mat = Material("saint-venant-kirchhoff", E=7.0, nu=0.0)
        lam = 1.3
        P, _ = svk_stress(np.diag([lam, 1.0, 1.0]), mat)
        expected = np.zeros((3, 3))
        expected[0, 0] = lam * 7.0 * (lam ** 2 - 1) / 2
        np.testing.assert_allclose(P, expected, atol=1e-13)

    def test_energy_gradient_matches_stress(self):
        rng = np.random.default_rng(0)
        h = 1e-6
        for _ in range(20):
            F = np.eye(3) + 0.05 * rng.standard_normal((3, 3))
            P, _ = svk_stress(F, SVK)
            Pfd = np.empty((3, 3))
            for a in range(3):
                for b in range(3):
                    dF = np.zeros((3, 3))
                    dF[a, b] = h
                    _, ep = svk_stress(F + dF, SVK)
                    _, em = svk_stress(F - dF, SVK)
                    Pfd[a, b] = (ep - em) / (2 * h)
            np.testing.assert_allclose(P, Pfd, atol=1e-7)

    def test_frame_indifference(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            F = np.eye(3) + 0.1 * rng.standard_normal((3, 3))
            A = rng.standard_normal((3, 3))
            Q, _ = np.linalg.qr(A)
            if np.linalg.det(Q) < 0:
                Q[:, 0] *= -1
            _, psi = svk_stress(F, SVK)
            _, psi_rot = svk_stress(Q @ F, SVK)
            assert abs(psi - psi_rot) < 1e-12 * max(1.0, abs(psi))

    def test_inverted_element_rejected(self):
        with pytest.raises(ElementInversionError):
            svk_stress(np.diag([-1.0, 1.0, 1.0]), SVK)


class TestInternalAssembly:
    def test_zero_state_zero_residual(self):
        patch = make_box()
        a = PatchAssembler(patch, SVK)
        r, _ = a.assemble(np.zeros(a.n_dofs))
        np.testing.assert_allclose(r, 0.0, atol=1e-14)

    @pytest.mark.parametrize(
        "mat",
        [
            Material("poisson"),
            Material("linear-elastic-plane-strain", E=3.0, nu=0.25),
            Material("saint-venant-kirchhoff", E=10.0, nu=0.3),
        ],
    )
    def test_tangent_matches_fd(self, mat):
        patch = make_box(p=2, nel=(2, 1))
        a = PatchAssembler(patch, mat)
        rng = np.random.default_rng(3)
        u = 0.01 * rng.standard_normal(a.n_dofs)
        r0, K = a.assemble(u)
        K = K.toarray()
        h = 1e-7
        cols = rng.choice(a.n_dofs, size=min(12, a.n_dofs), replace=False)
        for j in cols:
            du = np.zeros(a.n_dofs)
            du[j] = h
            rp, _ = a.assemble(u + du)
            rm, _ = a.assemble(u - du)
            fd = (rp - rm) / (2 * h)
            scale = max(1.0, np.abs(K[:, j]).max())
            assert np.abs(K[:, j] - fd).max() < 1e-6 * scale

    def test_tangent_symmetry(self):
        patch = make_box(p=2, nel=(2, 2))
        a = PatchAssembler(patch, SVK)
        rng = np.random.default_rng(4)
        u = 0.02 * rng.standard_normal(a.n_dofs)
        _, K = a.assemble(u)
        K = K.toarray()
        asym = np.abs(K - K.T).max() / np.abs(K).max()
        assert asym < 1e-10

    def test_linear_elastic_equals_svk_tangent_at_reference(self):
        patch = make_box(p=2, nel=(3, 2))
        lin = PatchAssembler(patch, Material("linear-elastic-plane-strain", E=5.0, nu=0.3))
        svk = PatchAssembler(patch, Material("saint-venant-kirchhoff", E=5.0, nu=0.3))
        _, Kl = lin.assemble(np.zeros(lin.n_dofs))
        _, Ks = svk.assemble(np.zeros(svk.n_dofs))
        diff = np.abs((Kl - Ks).toarray()).max()
        assert diff < 1e-10 * np.abs(Kl.toarray()).max()

    def test_single_element_uniaxial_stretch_forces(self):
        # p=1 single element, prescribed uniaxial stretch; closed-form nodal
        # forces from one-point-exact integration of the constant P field
        mat = Material("saint-venant-kirchhoff", E=2.0, nu=0.0)
        patch = make_box(p=1, nel=(1, 1), size=(1.0, 1.0))
        a = PatchAssembler(patch, mat)
        lam = 1.2
        # displacement u_x = (lam-1) x: control points at greville (corners)
        u = np.zeros((2, 2, 2))
        for i, x in enumerate([0.0, 1.0]):
            u[i, :, 0] = (lam - 1) * x
        r, _ = a.assemble(u.reshape(-1))
        P11 = lam * 2.0 * (lam ** 2 - 1) / 2
        # residual on the x=1 edge nodes: integral of P11 * dN/dx over the
        # element; each of the two edge nodes gets P11 * 1/2
        r = r.reshape(2, 2, 2)
        np.testing.assert_allclose(r[1, :, 0], P11 / 2, atol=1e-12)
        np.testing.assert_allclose(r[0, :, 0], -P11 / 2, atol=1e-12)
        np.testing.assert_allclose(r[..., 1], 0.0, atol=1e-12)


class TestNeumann:
    def test_constant_traction_total_force(self):
        patch = make_box(p=2, nel=(3, 2), size=(2.0, 3.0))
        t = np.array([0.7, -0.4])
        bc = BoundaryCondition(0, Face.parse("xi_max"), "neumann", t)
        f = assemble_neumann([patch], [bc], [2])
        total = f.reshape(-1, 2).sum(axis=0)
        np.testing.assert_allclose(total, t * 3.0, atol=1e-12)

    def test_zero_traction(self):
        patch = make_box()
        bc = BoundaryCondition(0, Face.parse("eta_min"), "neumann", np.zeros(2))
        f = assemble_neumann([patch], [bc], [2])
        np.testing.assert_allclose(f, 0.0, atol=1e-15)

    def test_linearly_varying_traction_resultant(self):
        patch = make_box(p=2, nel=(2, 2), size=(1.0, 2.0))
        # traction t_x = y on face x = 1: resultant = int_0^2 y dy = 2
        bc = BoundaryCondition(
            0, Face.parse("xi_max"), "neumann", lambda x: np.array([x[1], 0.0])
        )
        f = assemble_neumann([patch], [bc], [2])
        total = f.reshape(-1, 2).sum(axis=0)
        np.testing.assert_allclose(total, [2.0, 0.0], atol=1e-12)

    def test_3d_face_area(self):
        spaces = [SplineSpace(open_uniform_knots(1, 2))] * 3
        patch = box_patch(spaces, [0, 0, 0], [2.0, 3.0, 4.0])
        t = np.array([0.0, 0.0, 1.0])
        bc = BoundaryCondition(0, Face.parse("zeta_max"), "neumann", t)
        f = assemble_neumann([patch], [bc], [3])
        total = f.reshape(-1, 3).sum(axis=0)
        np.testing.assert_allclose(total, [0, 0, 6.0], atol=1e-12)


class TestMaterialValidation:
    def test_bad_kind(self):
        with pytest.raises(DomainError):
            Material("rubber")

    def test_bad_nu(self):
        with pytest.raises(DomainError):
            Material("saint-venant-kirchhoff", E=1.0, nu=0.5)

    def test_bad_E(self):
        with pytest.raises(DomainError):
            Material("saint-venant-kirchhoff", E=-1.0, nu=0.3)
