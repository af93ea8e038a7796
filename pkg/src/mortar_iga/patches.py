"""Physical patches: geometric map, Jacobians, quadrature, field evaluation.

A patch is a tensor-product (rational) spline space per parametric direction
together with a grid of control points.  Rational weights are tensor products
of the per-direction weights.  All evaluation routines are pure; element-wise
quadrature tables are precomputed once per patch and reused by assembly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DomainError, InversionError, SingularMapError
from .splines import SplineSpace, eval_basis_derivs, tensor_basis

__all__ = [
    "Patch",
    "Face",
    "QuadratureRule",
    "map_point",
    "jacobian",
    "physical_gradient",
    "invert_point",
    "gauss_points",
    "PatchQuadrature",
    "box_patch",
]

FACE_NAMES = {
    "xi_min": (0, 0), "xi_max": (0, 1),
    "eta_min": (1, 0), "eta_max": (1, 1),
    "zeta_min": (2, 0), "zeta_max": (2, 1),
}


@dataclass(frozen=True)
class Face:
    """One boundary face of a patch: parametric axis plus min/max side."""

    axis: int
    side: int  # 0 = parameter minimum, 1 = maximum

    @staticmethod
    def parse(name: str) -> "Face":
        try:
            axis, side = FACE_NAMES[name]
        except KeyError:
            raise DomainError(f"unknown face name {name!r}") from None
        return Face(axis, side)


@dataclass
class Patch:
    """Tensor-product patch mapping a parametric box into physical space."""

    spaces: list
    control_points: np.ndarray

    def __post_init__(self):
        self.spaces = list(self.spaces)
        cp = np.asarray(self.control_points, dtype=float)
        shape = tuple(s.n_basis for s in self.spaces)
        if cp.shape[:-1] != shape:
            raise DomainError(
                f"control grid {cp.shape[:-1]} does not match basis counts {shape}"
            )
        self.control_points = cp

    @property
    def dim(self) -> int:
        return len(self.spaces)

    @property
    def dim_phys(self) -> int:
        return self.control_points.shape[-1]

    @property
    def n_dofs(self) -> int:
        return int(np.prod([s.n_basis for s in self.spaces]))

    @property
    def domain(self):
        return [s.kv.domain for s in self.spaces]

    def diameter(self) -> float:
        cp = self.control_points.reshape(-1, self.dim_phys)
        return float(np.linalg.norm(cp.max(axis=0) - cp.min(axis=0)))

    def face_dof_indices(self, face: Face) -> np.ndarray:
        """Flattened control-point indices of the given boundary layer."""
        shape = tuple(s.n_basis for s in self.spaces)
        idx = np.arange(int(np.prod(shape))).reshape(shape)
        sl = [slice(None)] * self.dim
        sl[face.axis] = 0 if face.side == 0 else shape[face.axis] - 1
        return idx[tuple(sl)].ravel()

    def face_spaces(self, face: Face) -> list:
        """Tangential spline spaces of a boundary face."""
        return [s for l, s in enumerate(self.spaces) if l != face.axis]

    def face_param(self, face: Face, t) -> np.ndarray:
        """Embed tangential face parameters into the full parametric tuple."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        xi = np.empty(self.dim)
        lo, hi = self.spaces[face.axis].kv.domain
        xi[face.axis] = lo if face.side == 0 else hi
        k = 0
        for l in range(self.dim):
            if l != face.axis:
                xi[l] = t[k]
                k += 1
        return xi


def box_patch(spaces, lows, highs) -> Patch:
    """Axis-aligned box with control points at tensor Greville abscissae.

    The resulting geometric map is the affine stretch of the parametric box,
    exactly, because Greville control points reproduce linear functions.
    """
    grev = []
    for s, lo, hi in zip(spaces, lows, highs):
        g = s.greville()
        a, b = s.kv.domain
        grev.append(lo + (g - a) / (b - a) * (hi - lo))
    grids = np.meshgrid(*grev, indexing="ij")
    cp = np.stack(grids, axis=-1)
    return Patch(list(spaces), cp)


def _active_indices(patch: Patch, spans) -> np.ndarray:
    """Flattened global control indices for the active local tensor basis."""
    shape = tuple(s.n_basis for s in patch.spaces)
    ranges = [
        np.arange(span - s.degree, span + 1)
        for span, s in zip(spans, patch.spaces)
    ]
    mesh = np.meshgrid(*ranges, indexing="ij")
    return np.ravel_multi_index(tuple(mesh), shape).ravel()


def basis_at(patch: Patch, xi, k: int = 0):
    """Active basis values/derivatives at a parametric point.

    Returns
    -------
    idx : ndarray
        Flattened global indices of the active functions.
    ders : ndarray, shape (k+1,)*d + (n_active,)
        Mixed partials, local function axes flattened.
    """
    spans, ders = tensor_basis(patch.spaces, xi, k)
    idx = _active_indices(patch, spans)
    d = patch.dim
    flat = ders.reshape(ders.shape[:d] + (-1,))
    return idx, flat


def map_point(patch: Patch, xi) -> np.ndarray:
    """Physical image of a parametric point."""
    idx, ders = basis_at(patch, xi, 0)
    cp = patch.control_points.reshape(-1, patch.dim_phys)
    return ders[(0,) * patch.dim] @ cp[idx]


def jacobian(patch: Patch, xi):
    """Geometric Jacobian (columns d x / d xi_l) and its determinant.

    Raises
    ------
    SingularMapError
        If the determinant is not positive.
    """
    idx, ders = basis_at(patch, xi, 1)
    cp = patch.control_points.reshape(-1, patch.dim_phys)[idx]
    d = patch.dim
    J = np.empty((patch.dim_phys, d))
    for l in range(d):
        order = tuple(1 if m == l else 0 for m in range(d))
        J[:, l] = ders[order] @ cp
    det = float(np.linalg.det(J)) if patch.dim_phys == d else None
    if det is not None and det <= 0.0:
        raise SingularMapError(f"non-positive Jacobian determinant {det} at xi={xi}", xi=xi)
    return J, det


def physical_gradient(patch: Patch, coeffs, xi) -> np.ndarray:
    """Gradient of a spline field with respect to physical coordinates.

    Parameters
    ----------
    coeffs : ndarray
        Field coefficients, shape (n_dofs,) or (n_dofs, m).

    Returns
    -------
    grad : ndarray, shape (d,) or (m, d)
        ``grad[a, b] = d f_a / d x_b``.
    """
    idx, ders = basis_at(patch, xi, 1)
    J, _ = jacobian(patch, xi)
    coeffs = np.asarray(coeffs, dtype=float)
    flat = coeffs.reshape(patch.n_dofs, -1)[idx]
    d = patch.dim
    gpar = np.empty((flat.shape[1], d))
    for l in range(d):
        order = tuple(1 if m == l else 0 for m in range(d))
        gpar[:, l] = ders[order] @ flat
    g = gpar @ np.linalg.inv(J)
    return g[0] if coeffs.ndim == 1 else g


def eval_field(patch: Patch, coeffs, xi):
    """Value of a spline field at a parametric point."""
    idx, ders = basis_at(patch, xi, 0)
    coeffs = np.asarray(coeffs, dtype=float)
    flat = coeffs.reshape(patch.n_dofs, -1)[idx]
    v = ders[(0,) * patch.dim] @ flat
    return v[0] if coeffs.ndim == 1 else v


def invert_point(patch: Patch, x, guess=None, tol_factor=1e-10, max_iters=50):
    """Parametric preimage of a physical point by damped Newton iteration.

    The iterate is clamped to the parametric box; failure to reach
    ``tol_factor * diameter`` within ``max_iters`` raises InversionError
    (the usual cause is a point outside the patch image).
    """
    x = np.asarray(x, dtype=float)
    lows = np.array([s.kv.domain[0] for s in patch.spaces])
    highs = np.array([s.kv.domain[1] for s in patch.spaces])
    xi = np.array(guess, dtype=float) if guess is not None else 0.5 * (lows + highs)
    tol = tol_factor * patch.diameter()
    r = map_point(patch, xi) - x
    for _ in range(max_iters):
        nr = np.linalg.norm(r)
        if nr <= tol:
            return xi
        J, _ = jacobian(patch, xi)
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as ex:
            raise InversionError(f"singular Jacobian during inversion at xi={xi}") from ex
        t = 1.0
        while t >= 2.0**-12:
            cand = np.clip(xi + t * step, lows, highs)
            rc = map_point(patch, cand) - x
            if np.linalg.norm(rc) < nr:
                xi, r = cand, rc
                break
            t *= 0.5
        else:
            break
    if np.linalg.norm(r) <= tol:
        return xi
    raise InversionError(
        f"point inversion did not converge for x={x.tolist()} (residual {np.linalg.norm(r):.3e})"
    )


@lru_cache(maxsize=64)
def gauss_points(n: int):
    """Gauss-Legendre nodes/weights on [-1, 1], cached."""
    return np.polynomial.legendre.leggauss(n)


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre points per element; default p+1 points per direction."""

    orders: tuple

    @staticmethod
    def for_patch(patch: Patch, extra: int = 0) -> "QuadratureRule":
        return QuadratureRule(tuple(s.degree + 1 + extra for s in patch.spaces))


class PatchQuadrature:
    """Per-element quadrature and basis tables for one patch.

    Elements are the nonzero knot spans.  Univariate tables are precomputed;
    tensor products are formed chunk-wise by the assembly routines.
    """

    def __init__(self, patch: Patch, rule: QuadratureRule | None = None):
        self.patch = patch
        rule = rule or QuadratureRule.for_patch(patch)
        self.rule = rule
        d = patch.dim
        self.dir_spans = []   # per direction: list of (span, a, b)
        self.dir_pts = []     # per direction: (n_span, n_q)
        self.dir_wts = []
        self.dir_vals = []    # per direction: (n_span, n_q, p+1, 2) value and first derivative
        for l, space in enumerate(patch.spaces):
            spans = space.kv.spans()
            nq = rule.orders[l]
            xg, wg = gauss_points(nq)
            pts = np.empty((len(spans), nq))
            wts = np.empty((len(spans), nq))
            vals = np.empty((len(spans), nq, space.degree + 1, 2))
            for e, (span, a, b) in enumerate(spans):
                pts[e] = 0.5 * (a + b) + 0.5 * (b - a) * xg
                wts[e] = 0.5 * (b - a) * wg
                for q, xi in enumerate(pts[e]):
                    _, ders = eval_basis_derivs(space.kv, xi, 1)
                    vals[e, q, :, 0] = ders[0]
                    vals[e, q, :, 1] = ders[1]
            self.dir_spans.append(spans)
            self.dir_pts.append(pts)
            self.dir_wts.append(wts)
            self.dir_vals.append(vals)
        self.elements = np.array(
            list(itertools.product(*[range(len(s)) for s in self.dir_spans])), dtype=int
        )
        self.n_elements = len(self.elements)
        self.nq_per_element = int(np.prod(rule.orders))
        shape = tuple(s.n_basis for s in patch.spaces)
        self._grid_shape = shape
        self._rational = not all(s.is_polynomial for s in patch.spaces)
        if self._rational:
            w = patch.spaces[0].weights
            for s in patch.spaces[1:]:
                w = np.multiply.outer(w, s.weights)
            self._weight_grid = w.ravel()
        else:
            self._weight_grid = None

    def element_volume_measure(self):
        """Sum of w * detJ per element (parametric quadrature of the volume)."""
        out = np.empty(self.n_elements)
        for c0 in range(0, self.n_elements, 512):
            chunk = np.arange(c0, min(c0 + 512, self.n_elements))
            data = self.chunk_tables(chunk)
            out[chunk] = data["wdet"].sum(axis=1)
        return out

    def dof_indices(self, chunk) -> np.ndarray:
        """Active flattened control indices per element in the chunk: (ne, F)."""
        d = self.patch.dim
        per_dir = []
        for l in range(d):
            spans = self.dir_spans[l]
            p = self.patch.spaces[l].degree
            first = np.array([s[0] - p for s in spans], dtype=int)
            e_l = self.elements[chunk, l]
            per_dir.append(first[e_l][:, None] + np.arange(p + 1)[None, :])
        idx = per_dir[0]
        for l in range(1, d):
            idx = idx[..., :, None] * self._grid_shape[l] + per_dir[l][
                (slice(None),) + (None,) * (idx.ndim - 1) + (slice(None),)
            ]
            idx = idx.reshape(idx.shape[0], -1)
        return idx

    def chunk_tables(self, chunk):
        """Basis tables for a chunk of elements.

        Returns a dict with
          ``idx``  (ne, F) global dof indices,
          ``N``    (ne, nq, F) basis values,
          ``dNdX`` (ne, nq, F, d) physical gradients,
          ``wdet`` (ne, nq) quadrature weight times detJ,
          ``xq``   (ne, nq, dphys) physical points.
        """
        patch = self.patch
        d = patch.dim
        chunk = np.asarray(chunk, dtype=int)
        ne = len(chunk)
        # tensor values and parametric gradients from univariate tables
        vals = None  # (ne, nq, F)
        grads = []
        for der_dir in range(-1, d):
            acc = None
            for l in range(d):
                e_l = self.elements[chunk, l]
                der = 1 if l == der_dir else 0
                v = self.dir_vals[l][e_l, :, :, der]  # (ne, q_l, m_l)
                acc = v if acc is None else np.einsum("eqm,ern->eqrmn", acc, v).reshape(
                    ne, acc.shape[1] * v.shape[1], acc.shape[2] * v.shape[2]
                )
            if der_dir < 0:
                vals = acc
            else:
                grads.append(acc)
        dN = np.stack(grads, axis=-1)  # (ne, nq, F, d), parametric
        idx = self.dof_indices(chunk)
        if self._rational:
            w = self._weight_grid[idx]  # (ne, F)
            wN = vals * w[:, None, :]
            wdN = dN * w[:, None, :, None]
            W = wN.sum(axis=2)  # (ne, nq)
            dW = wdN.sum(axis=2)  # (ne, nq, d)
            vals = wN / W[:, :, None]
            dN = (wdN - vals[..., None] * dW[:, :, None, :]) / W[:, :, None, None]
        # quadrature weights (tensor product)
        wts = None
        for l in range(d):
            e_l = self.elements[chunk, l]
            wl = self.dir_wts[l][e_l]  # (ne, q_l)
            wts = wl if wts is None else np.einsum("eq,er->eqr", wts, wl).reshape(ne, -1)
        cp = patch.control_points.reshape(-1, patch.dim_phys)
        cpa = cp[idx]  # (ne, F, dphys)
        xq = np.einsum("eqf,efa->eqa", vals, cpa)
        J = np.einsum("eqfl,efa->eqal", dN, cpa)  # (ne, nq, dphys, d)
        if patch.dim_phys == d:
            detJ = np.linalg.det(J)
            if np.any(detJ <= 0.0):
                e_bad, q_bad = np.argwhere(detJ <= 0.0)[0]
                raise SingularMapError(
                    f"non-positive detJ in element {chunk[e_bad]}",
                    xi=None,
                )
            Jinv = np.linalg.inv(J)
            dNdX = np.einsum("eqfl,eqlb->eqfb", dN, Jinv)
            wdet = wts * detJ
        else:
            raise DomainError("embedded manifolds are not supported here")
        return {"idx": idx, "N": vals, "dNdX": dNdX, "wdet": wdet, "xq": xq, "J": J}

    def iter_chunks(self, chunk_size: int = 256):
        for c0 in range(0, self.n_elements, chunk_size):
            yield np.arange(c0, min(c0 + chunk_size, self.n_elements))
