"""Univariate and tensor-product B-spline/NURBS bases.

Evaluation follows the Cox-de Boor recursion with the 0/0 := 0 convention
built into the span-local algorithms, so all routines are total on the knot
range.  The last knot span is treated as closed on the right, which makes
evaluation at the upper domain end well defined for clamped vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

from .errors import DomainError, UnsupportedInputError

__all__ = [
    "KnotVector",
    "SplineSpace",
    "SubdivisionMatrix",
    "find_span",
    "eval_basis",
    "eval_basis_derivs",
    "nurbs_eval",
    "greville",
    "knot_insertion_matrix",
    "subdivide",
    "tensor_basis",
    "open_uniform_knots",
]


@dataclass(frozen=True)
class KnotVector:
    """Non-decreasing knot sequence plus polynomial degree.

    Attributes
    ----------
    knots : ndarray
        Ordered parameter values defining breakpoints and continuity.
    degree : int
        Polynomial degree p; knot multiplicities must not exceed p + 1.
    """

    knots: np.ndarray
    degree: int

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", knots)
        p = self.degree
        if p < 0:
            raise DomainError(f"degree must be nonnegative, got {p}")
        if knots.ndim != 1 or len(knots) < 2 * (p + 1):
            raise DomainError("knot vector too short for the given degree")
        if np.any(np.diff(knots) < 0):
            raise DomainError("knots must be non-decreasing")
        # multiplicity check: any value repeated more than p+1 times is invalid
        _, counts = np.unique(knots, return_counts=True)
        if np.any(counts > p + 1):
            raise DomainError("knot multiplicity exceeds degree + 1")
        if self.n_basis < p + 1:
            raise DomainError("number of basis functions must be at least p + 1")

    @property
    def n_basis(self) -> int:
        return len(self.knots) - self.degree - 1

    @property
    def domain(self) -> tuple[float, float]:
        p = self.degree
        return float(self.knots[p]), float(self.knots[self.n_basis])

    @property
    def is_open(self) -> bool:
        """True if the first and last knots repeat degree + 1 times."""
        p = self.degree
        return bool(
            np.all(self.knots[: p + 1] == self.knots[0])
            and np.all(self.knots[-(p + 1):] == self.knots[-1])
        )

    def breakpoints(self) -> np.ndarray:
        """Distinct knot values inside the domain, including the ends."""
        lo, hi = self.domain
        vals = np.unique(self.knots)
        return vals[(vals >= lo) & (vals <= hi)]

    def spans(self) -> list[tuple[int, float, float]]:
        """Nonzero knot spans as (span index, left, right)."""
        p = self.degree
        out = []
        for i in range(p, self.n_basis):
            a, b = self.knots[i], self.knots[i + 1]
            if b > a:
                out.append((i, float(a), float(b)))
        return out

    def element_sizes(self) -> np.ndarray:
        return np.array([b - a for _, a, b in self.spans()])


def open_uniform_knots(degree: int, n_elements: int, a: float = 0.0, b: float = 1.0) -> KnotVector:
    """Open (clamped) knot vector with uniform breakpoints on [a, b]."""
    if n_elements < 1:
        raise DomainError("need at least one element")
    interior = np.linspace(a, b, n_elements + 1)[1:-1]
    knots = np.concatenate([np.full(degree + 1, a), interior, np.full(degree + 1, b)])
    return KnotVector(knots, degree)


def find_span(kv: KnotVector, xi: float) -> int:
    """Index i with knots[i] <= xi < knots[i+1]; the last span is right-closed.

    Raises
    ------
    DomainError
        If xi lies outside the knot range.
    """
    lo, hi = kv.domain
    if not (lo <= xi <= hi):
        raise DomainError(f"parameter {xi} outside knot range [{lo}, {hi}]")
    n = kv.n_basis
    i = int(np.searchsorted(kv.knots, xi, side="right")) - 1
    i = min(max(i, kv.degree), n - 1)
    # step left over zero-length spans (possible only at the right end)
    while i > kv.degree and kv.knots[i] == kv.knots[i + 1]:
        i -= 1
    return i


def eval_basis(kv: KnotVector, xi: float) -> tuple[int, np.ndarray]:
    """Nonzero basis values at xi.

    Returns
    -------
    span : int
        Containing span; functions span-p .. span are the nonzero ones.
    values : ndarray, shape (p+1,)
        Values of those functions; nonnegative, summing to one.
    """
    span = find_span(kv, xi)
    p = kv.degree
    U = kv.knots
    N = np.empty(p + 1)
    left = np.empty(p + 1)
    right = np.empty(p + 1)
    N[0] = 1.0
    for j in range(1, p + 1):
        left[j] = xi - U[span + 1 - j]
        right[j] = U[span + j] - xi
        saved = 0.0
        for r in range(j):
            tmp = N[r] / (right[r + 1] + left[j - r])
            N[r] = saved + right[r + 1] * tmp
            saved = left[j - r] * tmp
        N[j] = saved
    return span, N


def eval_basis_derivs(kv: KnotVector, xi: float, k: int) -> tuple[int, np.ndarray]:
    """Nonzero basis values and derivatives up to order k.

    Returns
    -------
    span : int
    ders : ndarray, shape (k+1, p+1)
        Row r holds the r-th derivatives of the p+1 nonzero functions.

    Raises
    ------
    DomainError
        If k exceeds the degree.
    """
    p = kv.degree
    if k > p:
        raise DomainError(f"derivative order {k} exceeds degree {p}")
    if k < 0:
        raise DomainError("derivative order must be nonnegative")
    span = find_span(kv, xi)
    U = kv.knots
    # triangular table of all lower-degree basis values (NURBS book A2.3)
    ndu = np.empty((p + 1, p + 1))
    left = np.empty(p + 1)
    right = np.empty(p + 1)
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = xi - U[span + 1 - j]
        right[j] = U[span + j] - xi
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            tmp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * tmp
            saved = left[j - r] * tmp
        ndu[j, j] = saved
    ders = np.zeros((k + 1, p + 1))
    ders[0] = ndu[:, p]
    a = np.empty((2, p + 1))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for order in range(1, k + 1):
            d = 0.0
            rk = r - order
            pk = p - order
            if r >= order:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = order - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, order] = -a[s1, order - 1] / ndu[pk + 1, r]
                d += a[s2, order] * ndu[r, pk]
            ders[order, r] = d
            s1, s2 = s2, s1
    fac = p
    for order in range(1, k + 1):
        ders[order] *= fac
        fac *= p - order
    return span, ders


def greville(kv: KnotVector) -> np.ndarray:
    """Greville abscissae: knot averages, one per basis function."""
    p = kv.degree
    if p < 1:
        raise DomainError("Greville abscissae require degree >= 1")
    U = kv.knots
    return np.array([U[i + 1 : i + p + 1].mean() for i in range(kv.n_basis)])


@dataclass(frozen=True)
class SplineSpace:
    """Univariate (rational) spline space: knot vector plus positive weights."""

    kv: KnotVector
    weights: np.ndarray = None

    def __post_init__(self):
        if self.weights is None:
            w = np.ones(self.kv.n_basis)
        else:
            w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.kv.n_basis,):
            raise DomainError("one weight per basis function required")
        if np.any(w <= 0):
            raise DomainError("weights must be strictly positive")
        object.__setattr__(self, "weights", w)

    @property
    def degree(self) -> int:
        return self.kv.degree

    @property
    def n_basis(self) -> int:
        return self.kv.n_basis

    @property
    def is_polynomial(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def greville(self) -> np.ndarray:
        return greville(self.kv)


def nurbs_eval(space: SplineSpace, xi: float, k: int = 0) -> tuple[int, np.ndarray]:
    """Rational basis values and derivatives up to order k at xi.

    With equal weights this reduces to the polynomial basis.  Derivatives
    follow the generalized quotient rule
    ``R^(k) = (w N^(k) - sum_j C(k,j) W^(j) R^(k-j)) / W``.
    """
    span, ders = eval_basis_derivs(space.kv, xi, k)
    p = space.degree
    w = space.weights[span - p : span + 1]
    if space.is_polynomial:
        return span, ders.copy()
    wN = ders * w  # numerators w_i N_i^(r)
    W = wN.sum(axis=1)  # W^(r)
    R = np.empty_like(ders)
    for r in range(k + 1):
        acc = wN[r].copy()
        for j in range(1, r + 1):
            acc -= comb(r, j) * W[j] * R[r - j]
        R[r] = acc / W[0]
    return span, R


@dataclass(frozen=True)
class SubdivisionMatrix:
    """Coarse-to-fine basis subdivision under uniform dyadic refinement.

    Each coarse function equals ``sum_j entries[i, j] * fine_j`` pointwise.
    Interior rows of a uniform vector carry ``2^-p * binom(p+1, j)``.
    """

    entries: np.ndarray
    coarse: KnotVector
    fine: KnotVector


def knot_insertion_matrix(kv: KnotVector, new_knots) -> tuple[np.ndarray, KnotVector]:
    """Refinement operator T with  B_coarse_i = sum_j T[i, j] B_fine_j.

    Inserts ``new_knots`` one at a time; each step uses the standard
    single-insertion relation  N_i = alpha_i N'_i + (1 - alpha_{i+1}) N'_{i+1}.
    """
    p = kv.degree
    U = np.asarray(kv.knots, dtype=float)
    T = np.eye(kv.n_basis)
    for u in np.sort(np.asarray(new_knots, dtype=float)):
        span = int(np.searchsorted(U, u, side="right")) - 1
        n_old = len(U) - p - 1

        def alpha(j):
            if j <= span - p:
                return 1.0
            if j > span:
                return 0.0
            return (u - U[j]) / (U[j + p] - U[j])

        step = np.zeros((n_old, n_old + 1))
        for i in range(n_old):
            step[i, i] = alpha(i)
            step[i, i + 1] = 1.0 - alpha(i + 1)
        T = T @ step
        U = np.insert(U, span + 1, u)
    fine = KnotVector(U, p)
    return T, fine


def subdivide(kv: KnotVector) -> SubdivisionMatrix:
    """Subdivision matrix for one dyadic refinement of a uniform open vector.

    Raises
    ------
    UnsupportedInputError
        If the interior spacing is non-uniform or the vector is not open.
    """
    if not kv.is_open:
        raise UnsupportedInputError("subdivision requires an open knot vector")
    sizes = kv.element_sizes()
    if len(sizes) == 0 or not np.allclose(sizes, sizes[0], rtol=1e-12, atol=0.0):
        raise UnsupportedInputError("subdivision requires uniform interior spacing")
    midpoints = np.array([(a + b) / 2 for _, a, b in kv.spans()])
    entries, fine = knot_insertion_matrix(kv, midpoints)
    return SubdivisionMatrix(entries=entries, coarse=kv, fine=fine)


def tensor_basis(spaces, xi, k: int = 0):
    """Multivariate (rational) basis values/derivatives at a parameter tuple.

    Parameters
    ----------
    spaces : sequence of SplineSpace
        One space per parametric direction.
    xi : sequence of float
        Evaluation point; length must match the number of spaces.
    k : int
        Maximum derivative order per direction.

    Returns
    -------
    spans : tuple of int
    ders : ndarray, shape (k+1,)*d + (p_1+1, ..., p_d+1)
        ``ders[a_1, ..., a_d]`` holds the mixed partial of orders a_l in
        direction l for all nonzero functions, as a tensor over local indices.
    """
    d = len(spaces)
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if xi.shape != (d,):
        raise DomainError(f"expected a {d}-tuple of parameters, got shape {xi.shape}")
    spans = []
    uni = []
    for space, x in zip(spaces, xi):
        kk = min(k, space.degree)
        if k > space.degree:
            raise DomainError(f"derivative order {k} exceeds degree {space.degree}")
        span, ders = eval_basis_derivs(space.kv, x, kk)
        spans.append(span)
        uni.append(ders)
    rational = not all(s.is_polynomial for s in spaces)
    shape_orders = (k + 1,) * d
    shape_funcs = tuple(s.degree + 1 for s in spaces)
    out = np.empty(shape_orders + shape_funcs)
    for orders in np.ndindex(*shape_orders):
        acc = None
        for l in range(d):
            v = uni[l][orders[l]]
            acc = v if acc is None else np.multiply.outer(acc, v)
        out[orders] = acc
    if not rational:
        return tuple(spans), out
    # rational case: weights are tensor products of the univariate weights
    wloc = None
    for space, span in zip(spaces, spans):
        p = space.degree
        wl = space.weights[span - p : span + 1]
        wloc = wl if wloc is None else np.multiply.outer(wloc, wl)
    wB = out * wloc  # numerators for every derivative order
    W = wB.reshape(shape_orders + (-1,)).sum(axis=-1)
    R = np.empty_like(out)
    for orders in sorted(np.ndindex(*shape_orders), key=sum):
        acc = wB[orders].copy()
        for sub in np.ndindex(*tuple(o + 1 for o in orders)):
            if sub == (0,) * d:
                continue
            cf = 1.0
            for l in range(d):
                cf *= comb(orders[l], sub[l])
            rem = tuple(o - s for o, s in zip(orders, sub))
            acc -= cf * W[sub] * R[rem]
        R[orders] = acc / W[(0,) * d]
    return tuple(spans), R
