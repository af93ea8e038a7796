import numpy as np
import pytest

from mortar_iga.errors import DomainError, UnsupportedInputError
from mortar_iga.splines import (
    KnotVector,
    SplineSpace,
    eval_basis,
    eval_basis_derivs,
    find_span,
    greville,
    knot_insertion_matrix,
    nurbs_eval,
    open_uniform_knots,
    subdivide,
    tensor_basis,
)

BERN2 = KnotVector(np.array([0.0, 0, 0, 1, 1, 1]), 2)
HAT = KnotVector(np.array([0.0, 0, 1, 2, 2]), 1)
KV3SPAN = KnotVector(np.array([0.0, 0, 0, 1, 2, 3, 3, 3]), 2)


def linear_scan_span(kv, xi):
    # oracle: dumb linear scan with the right-closed last span
    n = kv.n_basis
    for i in range(kv.degree, n):
        if kv.knots[i] <= xi < kv.knots[i + 1]:
            return i
    for i in range(n - 1, kv.degree - 1, -1):
        if kv.knots[i] < kv.knots[i + 1]:
            return i
    raise AssertionError


class TestFindSpan:
    def test_single_element_clamped(self):
        assert find_span(BERN2, 0.3) == 2

    def test_right_closed_last_span(self):
        assert find_span(HAT, 2.0) == 2

    def test_interior(self):
        assert find_span(KV3SPAN, 1.5) == 3
        assert find_span(KV3SPAN, 1.5) == linear_scan_span(KV3SPAN, 1.5)

    def test_matches_linear_scan(self):
        rng = np.random.default_rng(1)
        for kv in (BERN2, HAT, KV3SPAN):
            lo, hi = kv.domain
            for xi in rng.uniform(lo, hi, 40):
                assert find_span(kv, xi) == linear_scan_span(kv, xi)

    def test_out_of_range(self):
        with pytest.raises(DomainError):
            find_span(BERN2, -0.1)
        with pytest.raises(DomainError):
            find_span(BERN2, 1.1)


class TestEvalBasis:
    def test_bernstein_midpoint(self):
        _, vals = eval_basis(BERN2, 0.5)
        np.testing.assert_allclose(vals, [0.25, 0.5, 0.25], atol=1e-15)

    def test_hats(self):
        _, vals = eval_basis(HAT, 0.5)
        np.testing.assert_allclose(vals, [0.5, 0.5], atol=1e-15)

    def test_interior_quadratic(self):
        # direct recursion gives N3=1/8, N4=3/4, N5=1/8 at xi=1.5
        _, vals = eval_basis(KV3SPAN, 1.5)
        np.testing.assert_allclose(vals, [0.125, 0.75, 0.125], atol=1e-15)

    @pytest.mark.parametrize("kv", [BERN2, HAT, KV3SPAN])
    def test_partition_of_unity_and_nonnegativity(self, kv):
        rng = np.random.default_rng(7)
        lo, hi = kv.domain
        for xi in np.concatenate([[lo, hi], rng.uniform(lo, hi, 60)]):
            _, vals = eval_basis(kv, xi)
            assert abs(vals.sum() - 1.0) < 1e-13
            assert np.all(vals >= -1e-15)

    def test_local_support(self):
        # each function vanishes outside knots[i] .. knots[i+p+1]
        kv = KV3SPAN
        rng = np.random.default_rng(3)
        for xi in rng.uniform(0, 3, 80):
            span, vals = eval_basis(kv, xi)
            for loc, v in enumerate(vals):
                i = span - kv.degree + loc
                inside = kv.knots[i] <= xi <= kv.knots[i + kv.degree + 1]
                if not inside:
                    assert abs(v) < 1e-15

    def test_linear_independence_via_greville_collocation(self):
        for kv in (BERN2, KV3SPAN, open_uniform_knots(3, 7)):
            pts = greville(kv)
            A = np.zeros((len(pts), kv.n_basis))
            for r, xi in enumerate(pts):
                span, vals = eval_basis(kv, xi)
                A[r, span - kv.degree : span + 1] = vals
            assert abs(np.linalg.det(A)) > 1e-12


class TestDerivatives:
    def test_clamped_endpoint(self):
        _, ders = eval_basis_derivs(BERN2, 0.0, 1)
        np.testing.assert_allclose(ders[1], [-2.0, 2.0, 0.0], atol=1e-14)

    def test_interior_first_derivatives(self):
        # central finite differences, step 1e-6, tol 1e-6
        _, ders = eval_basis_derivs(KV3SPAN, 1.5, 1)
        np.testing.assert_allclose(ders[1], [-0.5, 0.0, 0.5], atol=1e-13)
        h = 1e-6
        _, vp = eval_basis(KV3SPAN, 1.5 + h)
        _, vm = eval_basis(KV3SPAN, 1.5 - h)
        np.testing.assert_allclose(ders[1], (vp - vm) / (2 * h), atol=1e-6)

    @pytest.mark.parametrize("kv", [BERN2, HAT, KV3SPAN])
    def test_derivative_rows_sum_to_zero(self, kv):
        rng = np.random.default_rng(11)
        lo, hi = kv.domain
        for xi in rng.uniform(lo, hi, 40):
            _, ders = eval_basis_derivs(kv, xi, kv.degree)
            for order in range(1, kv.degree + 1):
                assert abs(ders[order].sum()) < 1e-10

    def test_order_zero_matches_eval_basis(self):
        rng = np.random.default_rng(5)
        for xi in rng.uniform(0, 3, 20):
            _, ders = eval_basis_derivs(KV3SPAN, xi, 2)
            _, vals = eval_basis(KV3SPAN, xi)
            np.testing.assert_allclose(ders[0], vals, atol=1e-15)

    def test_order_above_degree_rejected(self):
        with pytest.raises(DomainError):
            eval_basis_derivs(HAT, 0.5, 2)


class TestGreville:
    def test_examples(self):
        np.testing.assert_allclose(greville(BERN2), [0.0, 0.5, 1.0])
        np.testing.assert_allclose(greville(HAT), [0.0, 1.0, 2.0])
        kv = KnotVector(np.array([0.0, 0, 0, 0, 1, 2, 2, 2, 2]), 3)
        np.testing.assert_allclose(greville(kv), [0.0, 1 / 3, 1.0, 5 / 3, 2.0])

    def test_endpoints_for_open_vectors(self):
        kv = open_uniform_knots(3, 9, 2.0, 5.0)
        g = greville(kv)
        assert g[0] == 2.0 and g[-1] == 5.0
        assert np.all(np.diff(g) > 0)


class TestNurbs:
    def test_unit_weights_degenerate_to_polynomial(self):
        space = SplineSpace(KV3SPAN, np.ones(KV3SPAN.n_basis))
        rng = np.random.default_rng(2)
        for xi in rng.uniform(0, 3, 20):
            _, R = nurbs_eval(space, xi, 2)
            _, N = eval_basis_derivs(KV3SPAN, xi, 2)
            np.testing.assert_allclose(R, N, atol=1e-14)

    def test_quarter_circle(self):
        space = SplineSpace(BERN2, np.array([1.0, np.sqrt(2) / 2, 1.0]))
        ctrl = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
        for xi in np.linspace(0, 1, 100):
            span, R = nurbs_eval(space, xi, 0)
            x = R[0] @ ctrl[span - 2 : span + 1]
            assert abs(np.linalg.norm(x) - 1.0) < 1e-14

    def test_rational_derivatives_match_finite_differences(self):
        space = SplineSpace(BERN2, np.array([1.0, np.sqrt(2) / 2, 1.0]))
        rng = np.random.default_rng(4)
        h = 1e-6
        for xi in rng.uniform(0.01, 0.99, 20):
            _, R = nurbs_eval(space, xi, 1)
            _, Rp = nurbs_eval(space, xi + h, 0)
            _, Rm = nurbs_eval(space, xi - h, 0)
            np.testing.assert_allclose(R[1], (Rp[0] - Rm[0]) / (2 * h), atol=1e-6)

    def test_rational_partition_of_unity(self):
        space = SplineSpace(BERN2, np.array([1.0, 0.3, 2.5]))
        for xi in np.linspace(0, 1, 37):
            _, R = nurbs_eval(space, xi, 1)
            assert abs(R[0].sum() - 1.0) < 1e-13
            assert abs(R[1].sum()) < 1e-12
            assert np.all(R[0] >= -1e-15)

    def test_nonpositive_weight_rejected(self):
        with pytest.raises(DomainError):
            SplineSpace(BERN2, np.array([1.0, 0.0, 1.0]))


class TestSubdivision:
    def test_interior_rows_binomial(self):
        # 2^-p * binom(p+1, j): [0.5, 1, 0.5] and [0.25, 0.75, 0.75, 0.25]
        S = subdivide(open_uniform_knots(1, 4))
        row = S.entries[2]
        np.testing.assert_allclose(row[np.abs(row) > 1e-14], [0.5, 1.0, 0.5], atol=1e-14)
        S = subdivide(open_uniform_knots(2, 6))
        row = S.entries[4]
        np.testing.assert_allclose(
            row[np.abs(row) > 1e-14], [0.25, 0.75, 0.75, 0.25], atol=1e-14
        )

    @pytest.mark.parametrize("p,nel", [(1, 4), (2, 6), (3, 5)])
    def test_pointwise_reproduction(self, p, nel):
        kv = open_uniform_knots(p, nel)
        S = subdivide(kv)
        rng = np.random.default_rng(p)
        for xi in rng.uniform(0, 1, 50):
            sc, vc = eval_basis(kv, xi)
            coarse = np.zeros(kv.n_basis)
            coarse[sc - p : sc + 1] = vc
            sf, vf = eval_basis(S.fine, xi)
            fine = np.zeros(S.fine.n_basis)
            fine[sf - p : sf + 1] = vf
            assert np.abs(coarse - S.entries @ fine).max() < 1e-12

    def test_nonuniform_rejected(self):
        kv = KnotVector(np.array([0.0, 0, 0, 1, 3, 4, 4, 4]), 2)
        with pytest.raises(UnsupportedInputError):
            subdivide(kv)

    def test_knot_insertion_reproduces_curve(self):
        kv = open_uniform_knots(2, 3)
        T, fine = knot_insertion_matrix(kv, [0.4, 0.6])
        rng = np.random.default_rng(9)
        coef = rng.standard_normal(kv.n_basis)
        coef_f = T.T @ coef
        for xi in rng.uniform(0, 1, 30):
            sc, vc = eval_basis(kv, xi)
            sf, vf = eval_basis(fine, xi)
            a = vc @ coef[sc - 2 : sc + 1]
            b = vf @ coef_f[sf - 2 : sf + 1]
            assert abs(a - b) < 1e-13


class TestTensorBasis:
    def test_separable_values(self):
        sp = SplineSpace(BERN2)
        _, T = tensor_basis([sp, sp], (0.5, 0.5), 1)
        one_d = np.array([0.25, 0.5, 0.25])
        np.testing.assert_allclose(T[0, 0], np.outer(one_d, one_d), atol=1e-15)

    def test_partition_of_unity_random_points(self):
        sp1 = SplineSpace(open_uniform_knots(2, 3))
        sp2 = SplineSpace(open_uniform_knots(3, 2))
        rng = np.random.default_rng(12)
        for _ in range(20):
            xi = rng.uniform(0, 1, 2)
            _, T = tensor_basis([sp1, sp2], xi, 0)
            assert abs(T[0, 0].sum() - 1.0) < 1e-13

    def test_mixed_partial_matches_finite_differences(self):
        w = np.array([1.0, 0.8, 1.3])
        sp = SplineSpace(BERN2, w)
        rng = np.random.default_rng(13)
        h = 1e-5
        for _ in range(10):
            x, y = rng.uniform(0.05, 0.95, 2)
            _, T = tensor_basis([sp, sp], (x, y), 1)
            vals = lambda a, b: tensor_basis([sp, sp], (a, b), 0)[1][0, 0]
            fd = (
                vals(x + h, y + h) - vals(x + h, y - h) - vals(x - h, y + h) + vals(x - h, y - h)
            ) / (4 * h * h)
            np.testing.assert_allclose(T[1, 1], fd, atol=1e-5)

    def test_dimension_mismatch(self):
        sp = SplineSpace(BERN2)
        with pytest.raises(DomainError):
            tensor_basis([sp, sp], (0.5,), 0)


class TestKnotVectorValidation:
    def test_decreasing_rejected(self):
        with pytest.raises(DomainError):
            KnotVector(np.array([0.0, 0, 1, 0.5, 2, 2]), 1)

    def test_excess_multiplicity_rejected(self):
        with pytest.raises(DomainError):
            KnotVector(np.array([0.0, 0, 0, 0, 1, 1, 1, 1]), 2)
