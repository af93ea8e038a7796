"""Biorthogonal Lagrange-multiplier bases on interface trace spaces.

The construction proceeds in three stages:

  I.   elementwise duals from inverting (p+1) x (p+1) local mass matrices,
  II.  gluing the elementwise pieces function-by-function, which yields one
       dual per trace function with identical support and a partition of
       unity,
  III. adding corrections from the trace-orthogonal complement so that all
       monomials up to the trace degree lie in the dual span, enlarging the
       support to at most 2p+1 elements.

Crosspoint handling reduces the multiplier space at interface ends: the
first l functions are removed and the next p are recombined with an exact
rational coefficient matrix chosen so that the reduced space still
reproduces monomials up to degree p-1.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from math import comb

import numpy as np

from .errors import DomainError, UnsupportedInputError
from .patches import gauss_points
from .splines import SplineSpace, nurbs_eval

__all__ = [
    "TraceSpace",
    "DualBasis",
    "CrosspointModification",
    "step1_elementwise_dual",
    "step2_glue",
    "step3_optimal",
    "crosspoint_matrix",
    "modification_matrix",
    "apply_crosspoint_modification",
    "MultiplierBasis",
    "TraceMultiplier",
    "DualMultiplier",
    "ModifiedMultiplier",
]


class TraceSpace:
    """Univariate trace space of a primal space on the slave interface side.

    Precomputes per-element quadrature and local primal values; elements are
    the nonzero knot spans.
    """

    def __init__(self, space: SplineSpace, n_quad: int | None = None):
        self.space = space
        p = space.degree
        self.degree = p
        self.elements = space.kv.spans()
        self.n_elements = len(self.elements)
        self.n_funcs = space.n_basis
        nq = n_quad or (2 * p + 4)
        xg, wg = gauss_points(nq)
        E = self.n_elements
        self.qp = np.empty((E, nq))
        self.qw = np.empty((E, nq))
        self.local_vals = np.empty((E, nq, p + 1))
        self.first_func = np.empty(E, dtype=int)
        for e, (span, a, b) in enumerate(self.elements):
            self.qp[e] = 0.5 * (a + b) + 0.5 * (b - a) * xg
            self.qw[e] = 0.5 * (b - a) * wg
            self.first_func[e] = span - p
            for q, xi in enumerate(self.qp[e]):
                _, vals = nurbs_eval(space, xi, 0)
                self.local_vals[e, q] = vals[0]

    def is_uniform(self) -> bool:
        sizes = np.array([b - a for _, a, b in self.elements])
        return bool(np.allclose(sizes, sizes[0], rtol=1e-12, atol=0.0))

    def func_integrals(self) -> np.ndarray:
        """d_i = integral of each trace function over the interface."""
        d = np.zeros(self.n_funcs)
        for e in range(self.n_elements):
            loc = np.einsum("qm,q->m", self.local_vals[e], self.qw[e])
            d[self.first_func[e] : self.first_func[e] + self.degree + 1] += loc
        return d

    def support_elements(self, i: int) -> list[int]:
        return [
            e
            for e in range(self.n_elements)
            if self.first_func[e] <= i <= self.first_func[e] + self.degree
        ]

    def values_matrix(self, points_per_element: np.ndarray) -> np.ndarray:
        """Trace function values at points grouped by element: (I, E, nq)."""
        E, nq = points_per_element.shape
        out = np.zeros((self.n_funcs, E, nq))
        for e in range(E):
            for q in range(nq):
                _, vals = nurbs_eval(self.space, points_per_element[e, q], 0)
                out[self.first_func[e] : self.first_func[e] + self.degree + 1, e, q] = vals[0]
        return out


@dataclass
class DualBasis:
    """Elementwise-polynomial dual basis, coefficients in the local primal basis.

    ``coeffs[e, i, m]`` is the coefficient of the m-th active primal function
    on element e in the representation of dual function i.
    """

    stage: str  # "elementwise" | "glued" | "optimal"
    trace: TraceSpace
    coeffs: np.ndarray

    @property
    def n_funcs(self) -> int:
        return self.coeffs.shape[1]

    def values_on_quad(self) -> np.ndarray:
        """Dual values at the trace quadrature grid: (E, nq, n_funcs)."""
        return np.einsum("eim,eqm->eqi", self.coeffs, self.trace.local_vals)

    def values_at(self, points_per_element: np.ndarray) -> np.ndarray:
        """Dual values at arbitrary points grouped by element: (n_funcs, E, nq)."""
        E, nq = points_per_element.shape
        p = self.trace.degree
        out = np.zeros((self.n_funcs, E, nq))
        for e in range(E):
            for q in range(nq):
                _, vals = nurbs_eval(self.trace.space, points_per_element[e, q], 0)
                out[:, e, q] = self.coeffs[e] @ vals[0]
        return out

    def support_elements(self, i: int) -> list[int]:
        return [e for e in range(self.trace.n_elements) if np.any(self.coeffs[e, i] != 0.0)]

    def biorthogonality_matrix(self) -> np.ndarray:
        """B[i, j] = integral of psi_i phi_j over the interface."""
        tr = self.trace
        B = np.zeros((self.n_funcs, tr.n_funcs))
        for e in range(tr.n_elements):
            Mloc = np.einsum("qm,qn,q->mn", tr.local_vals[e], tr.local_vals[e], tr.qw[e])
            block = self.coeffs[e] @ Mloc
            j0 = tr.first_func[e]
            B[:, j0 : j0 + tr.degree + 1] += block
        return B

    def element_monomial_coeffs(self, e: int) -> np.ndarray:
        """Dual coefficients on element e in the shifted monomial basis.

        Polynomials are expressed in t = (s - a) / (b - a) on the element.
        """
        tr = self.trace
        p = tr.degree
        _, a, b = tr.elements[e]
        ts = np.linspace(0.0, 1.0, p + 1)
        V = np.vander(ts, p + 1, increasing=True)
        prim = np.zeros((p + 1, p + 1))
        for c, t in enumerate(ts):
            _, vals = nurbs_eval(tr.space, a + t * (b - a), 0)
            prim[c] = vals[0]
        # primal values at sample pts = V @ mono-coeff  ->  mono = V^-1 prim
        mono_of_primal = np.linalg.solve(V, prim)
        return self.coeffs[e] @ mono_of_primal


def step1_elementwise_dual(trace: TraceSpace) -> DualBasis:
    """Stage I: per-element biorthogonal duals from local mass matrices.

    Dual slot (e, m) is globally numbered e*(p+1) + m and supported on
    element e alone.
    """
    p = trace.degree
    E = trace.n_elements
    coeffs = np.zeros((E, E * (p + 1), p + 1))
    for e in range(E):
        M = np.einsum("qm,qn,q->mn", trace.local_vals[e], trace.local_vals[e], trace.qw[e])
        d = np.einsum("qm,q->m", trace.local_vals[e], trace.qw[e])
        local = np.diag(d) @ np.linalg.inv(M)
        coeffs[e, e * (p + 1) : (e + 1) * (p + 1), :] = local
    return DualBasis("elementwise", trace, coeffs)


def step2_glue(dual: DualBasis, trace: TraceSpace) -> DualBasis:
    """Stage II: glue elementwise duals into one dual per trace function."""
    if dual.stage != "elementwise":
        raise DomainError("step2_glue expects a stage-I elementwise dual basis")
    p = trace.degree
    E = trace.n_elements
    I = trace.n_funcs
    coeffs = np.zeros((E, I, p + 1))
    for e in range(E):
        for m in range(p + 1):
            i = trace.first_func[e] + m
            coeffs[e, i, :] = dual.coeffs[e, e * (p + 1) + m, :]
    return DualBasis("glued", trace, coeffs)


def _orthogonal_pair_functions(trace: TraceSpace):
    """Per adjacent-element pair: basis of functions orthogonal to the trace.

    Each row of the returned arrays holds coefficients (2*(p+1),) on the
    local primal bases of the pair (e, e+1); there are p such functions.
    """
    p = trace.degree
    E = trace.n_elements
    out = []
    for e in range(E - 1):
        gset = sorted(
            set(range(trace.first_func[e], trace.first_func[e] + p + 1))
            | set(range(trace.first_func[e + 1], trace.first_func[e + 1] + p + 1))
        )
        A = np.zeros((len(gset), 2 * (p + 1)))
        for col, ee in enumerate((e, e + 1)):
            Mloc = np.einsum(
                "qm,qn,q->mn", trace.local_vals[ee], trace.local_vals[ee], trace.qw[ee]
            )
            for gi, g in enumerate(gset):
                loc = g - trace.first_func[ee]
                if 0 <= loc <= p:
                    A[gi, col * (p + 1) : (col + 1) * (p + 1)] += Mloc[loc]
        _, sv, Vt = np.linalg.svd(A)
        rank = int((sv > 1e-12 * sv[0]).sum())
        out.append(Vt[rank:])
    return out


def step3_optimal(dual: DualBasis, trace: TraceSpace) -> DualBasis:
    """Stage III: restore polynomial reproduction in the dual span.

    Corrections live in the trace-orthogonal complement (so biorthogonality
    is untouched) and are supported within a window of at most 2p+1 elements
    around each dual function.  The correction coefficients solve the forced
    reproduction identities  sum_i (int phi_i s^k / int phi_i) psi_i = s^k
    for k = 1..p in a least-squares sense; on uniform meshes the residual is
    at machine precision.

    For p = 1 the glued basis already reproduces linears and is returned
    unchanged (a same-support optimal basis does not exist for p > 1).
    """
    if dual.stage != "glued":
        raise DomainError("step3_optimal expects a stage-II glued dual basis")
    p = trace.degree
    if p == 1:
        return DualBasis("optimal", trace, dual.coeffs.copy())
    if not trace.is_uniform():
        raise UnsupportedInputError("stage III requires a uniform interface mesh")
    E = trace.n_elements
    I = trace.n_funcs
    nq = trace.qp.shape[1]
    psi = dual.values_on_quad()  # (E, nq, I)
    d = trace.func_integrals()
    # forced representation coefficients b_i^k and residual functions rho_k;
    # k = 0 is included so the partition of unity survives the correction
    b = np.zeros((p + 1, I))
    for k in range(p + 1):
        mom = np.zeros(I)
        for e in range(E):
            loc = np.einsum("qm,q->m", trace.local_vals[e], trace.qw[e] * trace.qp[e] ** k)
            mom[trace.first_func[e] : trace.first_func[e] + p + 1] += loc
        b[k] = mom / d
    rho = np.zeros((p + 1, E, nq))
    for k in range(p + 1):
        rho[k] = trace.qp ** k - np.einsum("i,eqi->eq", b[k], psi)
    pairs = _orthogonal_pair_functions(trace)
    ext = p // 2
    supp_first = np.array([trace.support_elements(i)[0] for i in range(I)])
    supp_last = np.array([trace.support_elements(i)[-1] for i in range(I)])
    unknowns = []  # (i, pair e, row r)
    for i in range(I):
        lo = max(0, supp_first[i] - ext)
        hi = min(E - 1, supp_last[i] + ext)
        while (hi - lo + 1) > 2 * p + 1:  # keep (LS): support <= 2p+1 elements
            if hi - supp_last[i] > supp_first[i] - lo:
                hi -= 1
            else:
                lo += 1
        for e in range(lo, hi):
            for r in range(pairs[e].shape[0]):
                unknowns.append((i, e, r))
    sqw = np.sqrt(trace.qw)
    A = np.zeros(((p + 1) * E * nq, len(unknowns)))
    for c, (i, e, r) in enumerate(unknowns):
        ns = pairs[e][r]
        w_e = np.einsum("m,qm->q", ns[: p + 1], trace.local_vals[e])
        w_e1 = np.einsum("m,qm->q", ns[p + 1 :], trace.local_vals[e + 1])
        for k in range(p + 1):
            base = k * E * nq
            A[base + e * nq : base + (e + 1) * nq, c] += b[k, i] * w_e * sqw[e]
            A[base + (e + 1) * nq : base + (e + 2) * nq, c] += b[k, i] * w_e1 * sqw[e + 1]
    rhs = np.concatenate([(rho[k] * sqw).ravel() for k in range(p + 1)])
    sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    res = np.linalg.norm(A @ sol - rhs) / max(np.linalg.norm(rhs), 1e-30)
    if res > 1e-9:
        raise UnsupportedInputError(
            f"stage III reproduction system not solvable (residual {res:.2e})"
        )
    coeffs = dual.coeffs.copy()
    for c, (i, e, r) in enumerate(unknowns):
        ns = pairs[e][r]
        coeffs[e, i, :] += sol[c] * ns[: p + 1]
        coeffs[e + 1, i, :] += sol[c] * ns[p + 1 :]
    return DualBasis("optimal", trace, coeffs)


@dataclass(frozen=True)
class CrosspointModification:
    """Recombination coefficients for the multiplier space at a crosspoint.

    ``entries[i][j]`` are exact rationals; the float matrix is in ``C``.
    The modified functions are R_i^m = sum_j C[i, j] R_j + R_{i+l}.
    """

    C: np.ndarray
    entries: tuple
    degree: int
    continuity_count: int


def _marsden_coeff(knots, p, j, k) -> Fraction:
    """Coefficient of basis function j in the expansion of s^k (exact)."""
    ts = knots[j + 1 : j + p + 1]
    if k == 0:
        return Fraction(1)
    tot = Fraction(0)
    for idx in combinations(range(p), k):
        prod = Fraction(1)
        for m in idx:
            prod *= ts[m]
        tot += prod
    return tot / comb(p, k)


def crosspoint_matrix(p: int, l: int) -> CrosspointModification:
    """Coefficient matrix C in R^{p x l} for the crosspoint modification.

    Computed in exact rational arithmetic from the condition that the
    reduced multiplier space keeps reproducing the monomials 1, s, ...,
    s^{p-1} near the crosspoint of a locally uniform open knot vector with
    p+1 repeated knots.

    Raises
    ------
    UnsupportedInputError
        If l is outside 1..p.
    """
    if not (isinstance(p, int) and isinstance(l, int)) or p < 1 or not (1 <= l <= p):
        raise UnsupportedInputError(f"unsupported crosspoint combination p={p}, l={l}")
    knots = [Fraction(0)] * (p + 1) + [Fraction(i) for i in range(1, 2 * p + l + 2)]
    V = [[_marsden_coeff(knots, p, l + i, k) for i in range(p)] for k in range(p)]
    U = [[_marsden_coeff(knots, p, j, k) for j in range(l)] for k in range(p)]
    # exact Gaussian elimination of V C = U
    A = [V[i][:] + U[i][:] for i in range(p)]
    for col in range(p):
        piv = next(r for r in range(col, p) if A[r][col] != 0)
        A[col], A[piv] = A[piv], A[col]
        pv = A[col][col]
        A[col] = [x / pv for x in A[col]]
        for r in range(p):
            if r != col and A[r][col] != 0:
                f = A[r][col]
                A[r] = [x - f * y for x, y in zip(A[r], A[col])]
    entries = tuple(tuple(A[i][p + j] for j in range(l)) for i in range(p))
    C = np.array([[float(x) for x in row] for row in entries])
    return CrosspointModification(C=C, entries=entries, degree=p, continuity_count=l)


def modification_matrix(n_funcs: int, mod: CrosspointModification, end: str) -> np.ndarray:
    """Reduction matrix T with  modified_basis = T @ original_basis.

    ``end`` selects which interface end the crosspoint sits at.
    """
    p, l = mod.degree, mod.continuity_count
    if n_funcs < p + l:
        raise DomainError(f"need at least p+l={p + l} functions, have {n_funcs}")
    T = np.zeros((n_funcs - l, n_funcs))
    for i in range(p):
        T[i, :l] = mod.C[i]
        T[i, l + i] = 1.0
    for i in range(p, n_funcs - l):
        T[i, l + i] = 1.0
    if end == "left":
        return T
    if end == "right":
        return T[::-1, ::-1].copy()
    raise DomainError(f"end must be 'left' or 'right', got {end!r}")


class MultiplierBasis:
    """Interface multiplier basis: values at points grouped by slave element."""

    n_funcs: int

    def values_at(self, points_per_element: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class TraceMultiplier(MultiplierBasis):
    """Standard multiplier: the slave trace basis itself."""

    def __init__(self, trace: TraceSpace):
        self.trace = trace
        self.n_funcs = trace.n_funcs

    def values_at(self, pts):
        return self.trace.values_matrix(pts)


class DualMultiplier(MultiplierBasis):
    """Biorthogonal multiplier from a DualBasis (stage II or III)."""

    def __init__(self, dual: DualBasis):
        self.dual = dual
        self.n_funcs = dual.n_funcs

    def values_at(self, pts):
        return self.dual.values_at(pts)


class ModifiedMultiplier(MultiplierBasis):
    """Crosspoint-modified multiplier: linear recombination of a base basis."""

    def __init__(self, base: MultiplierBasis, T: np.ndarray):
        if T.shape[1] != base.n_funcs:
            raise DomainError("modification matrix does not match the base basis")
        self.base = base
        self.T = T
        self.n_funcs = T.shape[0]

    def values_at(self, pts):
        vals = self.base.values_at(pts)
        return np.einsum("ij,jeq->ieq", self.T, vals)


def apply_crosspoint_modification(
    trace: TraceSpace, mod: CrosspointModification, end: str
) -> ModifiedMultiplier:
    """Crosspoint-modified standard multiplier space on a trace space.

    The first l functions at the chosen end are removed and the next p are
    recombined; the output dimension is the input dimension minus l.
    """
    T = modification_matrix(trace.n_funcs, mod, end)
    return ModifiedMultiplier(TraceMultiplier(trace), T)
