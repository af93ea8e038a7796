"""Mortar constraints between 2D patches along geometrically matching curves.

The slave side carries the trace space and the multiplier basis; the master
side is paired through an affine reparametrization fixed by the interface
endpoints.  Quadrature either merges the two knot images (exact for products
of polynomial traces) or uses equidistant parametric sample points, which
acts as a midpoint rule with uniform Lebesgue weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .dualbasis import (
    DualMultiplier,
    ModifiedMultiplier,
    MultiplierBasis,
    TraceMultiplier,
    TraceSpace,
    crosspoint_matrix,
    modification_matrix,
    step1_elementwise_dual,
    step2_glue,
    step3_optimal,
)
from .errors import CondensationError, ConfigurationError, DomainError, UnsupportedInputError
from .patches import Face, Patch, basis_at, gauss_points, jacobian, map_point
from .splines import SplineSpace

__all__ = [
    "InterfaceGeometry",
    "Interface",
    "ConstraintBlock",
    "build_multiplier",
    "merge_interface_mesh",
    "assemble_c0",
    "assemble_c1",
    "sample_point_constraints",
    "condense",
    "NullSpaceMap",
]


class InterfaceGeometry:
    """Pairing of a slave and a master patch edge sharing one physical curve.

    The master parameter is an affine image of the slave parameter fixed by
    endpoint matching; geometric coincidence is verified by sampling.  If the
    verification fails the interface is flagged and merged-mesh quadrature
    falls back to sample points.
    """

    def __init__(self, slave_patch: Patch, slave_face: Face, master_patch: Patch,
                 master_face: Face, tol: float = 1e-8):
        if slave_patch.dim != 2 or master_patch.dim != 2:
            raise UnsupportedInputError("mortar interfaces require 2D patches")
        self.slave_patch = slave_patch
        self.slave_face = slave_face
        self.master_patch = master_patch
        self.master_face = master_face
        self.slave_space = slave_patch.face_spaces(slave_face)[0]
        self.master_space = master_patch.face_spaces(master_face)[0]
        s_lo, s_hi = self.slave_space.kv.domain
        m_lo, m_hi = self.master_space.kv.domain
        xs0 = self.slave_point(s_lo)
        xs1 = self.slave_point(s_hi)
        xm0 = self.master_point_raw(m_lo)
        xm1 = self.master_point_raw(m_hi)
        scale = max(slave_patch.diameter(), 1e-30)
        if np.linalg.norm(xs0 - xm0) < tol * scale and np.linalg.norm(xs1 - xm1) < tol * scale:
            self.orientation = 1
        elif np.linalg.norm(xs0 - xm1) < tol * scale and np.linalg.norm(xs1 - xm0) < tol * scale:
            self.orientation = -1
        else:
            raise ConfigurationError(
                "interface endpoints of slave and master sides do not coincide"
            )
        if self.orientation == 1:
            self._aff = (m_lo - s_lo * (m_hi - m_lo) / (s_hi - s_lo), (m_hi - m_lo) / (s_hi - s_lo))
        else:
            self._aff = (m_hi - s_lo * (m_lo - m_hi) / (s_hi - s_lo), (m_lo - m_hi) / (s_hi - s_lo))
        self.warnings: list[str] = []
        dev = max(
            float(np.linalg.norm(self.slave_point(t) - self.master_point_raw(self.to_master(t))))
            for t in np.linspace(s_lo, s_hi, 23)
        )
        self.geometry_deviation = dev
        self.affine_match = dev < tol * scale
        if not self.affine_match:
            self.warnings.append(
                f"interface parametrizations are not affinely matched "
                f"(max deviation {dev:.3e}); merged-mesh quadrature unavailable"
            )

    def to_master(self, t):
        a, b = self._aff
        return a + b * np.asarray(t)

    def slave_point(self, t):
        return map_point(self.slave_patch, self.slave_patch.face_param(self.slave_face, t))

    def master_point_raw(self, t):
        return map_point(self.master_patch, self.master_patch.face_param(self.master_face, t))

    def unit_normal(self, t):
        """Unit normal of the interface curve at slave parameter t."""
        xi = self.slave_patch.face_param(self.slave_face, t)
        J, _ = jacobian(self.slave_patch, xi)
        tang_axis = 1 - self.slave_face.axis
        tau = J[:, tang_axis]
        n = np.array([-tau[1], tau[0]])
        return n / np.linalg.norm(n)

    def curve_speed(self, t):
        xi = self.slave_patch.face_param(self.slave_face, t)
        J, _ = jacobian(self.slave_patch, xi)
        return float(np.linalg.norm(J[:, 1 - self.slave_face.axis]))


@dataclass
class Interface:
    """Mortar interface specification bound to concrete patches."""

    geometry: InterfaceGeometry
    multiplier: MultiplierBasis
    trace: TraceSpace
    quadrature: str = "merged-gauss-parametric"  # or "merged-gauss-physical", "sample-points"
    samples_per_element: int = 4
    continuity: str = "C0"


def build_multiplier(trace: TraceSpace, kind: str, crosspoints=(0, 0)) -> MultiplierBasis:
    """Multiplier basis on a slave trace space.

    kind: "standard" (trace basis), "dual" (stage II), "dual-optimal"
    (stage III).  ``crosspoints`` gives the continuity count l removed at the
    (left, right) interface ends; 0 means untouched.
    """
    if kind == "standard":
        base: MultiplierBasis = TraceMultiplier(trace)
    elif kind in ("dual", "dual-optimal"):
        dual = step2_glue(step1_elementwise_dual(trace), trace)
        if kind == "dual-optimal":
            dual = step3_optimal(dual, trace)
        base = DualMultiplier(dual)
    else:
        raise ConfigurationError(f"unknown multiplier kind {kind!r}")
    p = trace.degree
    l_left, l_right = crosspoints
    if l_left:
        T = modification_matrix(base.n_funcs, crosspoint_matrix(p, l_left), "left")
        base = ModifiedMultiplier(base, T)
    if l_right:
        T = modification_matrix(base.n_funcs, crosspoint_matrix(p, l_right), "right")
        base = ModifiedMultiplier(base, T)
    return base


def merge_interface_mesh(geom: InterfaceGeometry) -> np.ndarray:
    """Sorted union of slave breakpoints and master breakpoints mapped to the
    slave parameter."""
    s_bp = geom.slave_space.kv.breakpoints()
    m_bp = geom.master_space.kv.breakpoints()
    a, b = geom._aff
    mapped = (m_bp - a) / b
    merged = np.concatenate([s_bp, mapped])
    merged.sort()
    lo, hi = geom.slave_space.kv.domain
    merged = np.clip(merged, lo, hi)
    keep = [merged[0]]
    tol = 1e-12 * (hi - lo)
    for t in merged[1:]:
        if t - keep[-1] > tol:
            keep.append(t)
    return np.array(keep)


@dataclass
class ConstraintBlock:
    """Mortar constraint rows over the two patches' control values.

    ``rows_slave`` / ``rows_master`` act on per-patch flattened control dofs
    (component expansion happens at the system level); the constraint reads
    rows_slave @ u_slave - rows_master @ u_master = 0.  ``m_ss`` and ``m_sm``
    hold the value-coupling block restricted to the interface trace dofs.
    """

    slave_patch_index: int
    master_patch_index: int
    rows_slave: sp.csr_matrix
    rows_master: sp.csr_matrix
    m_ss: np.ndarray
    m_sm: np.ndarray
    slave_trace_dofs: np.ndarray
    master_trace_dofs: np.ndarray
    continuity: str = "C0"
    warnings: list = field(default_factory=list)

    @property
    def n_rows(self) -> int:
        return self.rows_slave.shape[0]


def _interface_quadrature(iface: Interface):
    """Quadrature nodes on the slave parameter grouped by slave element.

    Returns (pts (E, nq), wts (E, nq)); merged modes subdivide each slave
    element at mapped master breakpoints and place Gauss points per cell.
    """
    geom = iface.geometry
    trace = iface.trace
    mode = iface.quadrature
    if mode.startswith("merged") and not geom.affine_match:
        iface.quadrature = mode = "sample-points"
    if mode == "sample-points":
        m = iface.samples_per_element
        if m < 1:
            raise DomainError("need at least one sample point per element")
        pts = np.empty((trace.n_elements, m))
        wts = np.empty((trace.n_elements, m))
        for e, (_, a, b) in enumerate(trace.elements):
            h = (b - a) / m
            pts[e] = a + h * (np.arange(m) + 0.5)
            wts[e] = h
        return pts, wts
    merged = merge_interface_mesh(geom)
    p_s = trace.degree
    p_m = geom.master_space.degree
    nq = p_s + p_m + 2
    xg, wg = gauss_points(nq)
    cells_per_el = [[] for _ in range(trace.n_elements)]
    for c0, c1 in zip(merged[:-1], merged[1:]):
        mid = 0.5 * (c0 + c1)
        for e, (_, a, b) in enumerate(trace.elements):
            if a <= mid <= b:
                cells_per_el[e].append((c0, c1))
                break
    max_cells = max(len(c) for c in cells_per_el)
    pts = np.zeros((trace.n_elements, max_cells * nq))
    wts = np.zeros((trace.n_elements, max_cells * nq))
    for e, cells in enumerate(cells_per_el):
        for ci, (c0, c1) in enumerate(cells):
            sl = slice(ci * nq, (ci + 1) * nq)
            pts[e, sl] = 0.5 * (c0 + c1) + 0.5 * (c1 - c0) * xg
            wts[e, sl] = 0.5 * (c1 - c0) * wg
    if mode == "merged-gauss-physical":
        for e in range(trace.n_elements):
            for q in range(pts.shape[1]):
                if wts[e, q] != 0.0:
                    wts[e, q] *= iface.geometry.curve_speed(pts[e, q])
    return pts, wts


def _trace_dof_indices(patch: Patch, face: Face) -> np.ndarray:
    return patch.face_dof_indices(face)


def _master_trace_values(geom: InterfaceGeometry, pts):
    """Master trace basis values at mapped points: (n_master_trace, E, nq)."""
    space = geom.master_space
    tm = geom.to_master(pts)
    E, nq = pts.shape
    out = np.zeros((space.n_basis, E, nq))
    from .splines import nurbs_eval

    for e in range(E):
        for q in range(nq):
            span, vals = nurbs_eval(space, float(tm[e, q]), 0)
            out[span - space.degree : span + 1, e, q] = vals[0]
    return out


def _value_blocks(iface: Interface, pts, wts):
    mult = iface.multiplier
    psi = mult.values_at(pts)  # (nm, E, nq)
    phi_s = iface.trace.values_matrix(pts)  # (ns, E, nq)
    phi_m = _master_trace_values(iface.geometry, pts)
    w = wts[None, :, :]
    m_ss = np.einsum("ieq,jeq->ij", psi * w, phi_s)
    m_sm = np.einsum("ieq,jeq->ij", psi * w, phi_m)
    return m_ss, m_sm


def _block_from_value_matrices(iface, m_ss, m_sm, extra_slave=None, extra_master=None,
                               warnings=()):
    geom = iface.geometry
    sdofs = _trace_dof_indices(geom.slave_patch, geom.slave_face)
    mdofs = _trace_dof_indices(geom.master_patch, geom.master_face)
    n_s = geom.slave_patch.n_dofs
    n_m = geom.master_patch.n_dofs
    rows_s = sp.lil_matrix((m_ss.shape[0], n_s))
    rows_s[:, sdofs] = m_ss
    rows_m = sp.lil_matrix((m_sm.shape[0], n_m))
    rows_m[:, mdofs] = m_sm
    if extra_slave is not None:
        rows_s = sp.vstack([rows_s.tocsr(), extra_slave])
        rows_m = sp.vstack([rows_m.tocsr(), extra_master])
    return ConstraintBlock(
        slave_patch_index=-1,
        master_patch_index=-1,
        rows_slave=sp.csr_matrix(rows_s),
        rows_master=sp.csr_matrix(rows_m),
        m_ss=m_ss,
        m_sm=m_sm,
        slave_trace_dofs=sdofs,
        master_trace_dofs=mdofs,
        continuity=iface.continuity,
        warnings=list(warnings),
    )


def assemble_c0(iface: Interface) -> ConstraintBlock:
    """Value-coupling mortar block: [m_ss]_ij = int psi_i phi_j^slave, etc."""
    pts, wts = _interface_quadrature(iface)
    m_ss, m_sm = _value_blocks(iface, pts, wts)
    return _block_from_value_matrices(iface, m_ss, m_sm, warnings=iface.geometry.warnings)


def _normal_derivative_rows(iface: Interface, pts, wts, mult_vals):
    """Rows of int psi_i * d(phi)/dn for all patch basis functions, both sides."""
    geom = iface.geometry
    n_mult = mult_vals.shape[0]
    E, nq = pts.shape
    rows_s = np.zeros((n_mult, geom.slave_patch.n_dofs))
    rows_m = np.zeros((n_mult, geom.master_patch.n_dofs))
    for e in range(E):
        for q in range(nq):
            if wts[e, q] == 0.0:
                continue
            t = pts[e, q]
            nvec = geom.unit_normal(t)
            for patch, face, tt, rows in (
                (geom.slave_patch, geom.slave_face, t, rows_s),
                (geom.master_patch, geom.master_face, geom.to_master(t), rows_m),
            ):
                xi = patch.face_param(face, tt)
                idx, ders = basis_at(patch, xi, 1)
                J, _ = jacobian(patch, xi)
                Jinv = np.linalg.inv(J)
                gpar = np.stack([ders[(1, 0)], ders[(0, 1)]], axis=1)  # (F, 2)
                gphys = gpar @ Jinv
                dn = gphys @ nvec
                rows[:, idx] += np.outer(mult_vals[:, e, q] * wts[e, q], dn)
    return rows_s, rows_m


def assemble_c1(iface: Interface) -> ConstraintBlock:
    """C0 block plus weak matching of the physical normal derivative.

    The derivative rows reuse the stage-II dual basis of the slave trace as
    multiplier.  Requires degree >= 2 on both sides.
    """
    geom = iface.geometry
    if iface.trace.degree < 2 or geom.master_space.degree < 2:
        raise UnsupportedInputError("C1 coupling requires degree >= 2 on both sides")
    pts, wts = _interface_quadrature(iface)
    m_ss, m_sm = _value_blocks(iface, pts, wts)
    dual = step2_glue(step1_elementwise_dual(iface.trace), iface.trace)
    dmult = DualMultiplier(dual)
    dvals = dmult.values_at(pts)
    dr_s, dr_m = _normal_derivative_rows(iface, pts, wts, dvals)
    blk = _block_from_value_matrices(
        iface,
        m_ss,
        m_sm,
        extra_slave=sp.csr_matrix(dr_s),
        extra_master=sp.csr_matrix(dr_m),
        warnings=iface.geometry.warnings,
    )
    blk.continuity = "C1"
    return blk


def sample_point_constraints(iface: Interface, m: int) -> ConstraintBlock:
    """Constraint block from m equidistant parametric samples per element."""
    tmp = Interface(
        geometry=iface.geometry,
        multiplier=iface.multiplier,
        trace=iface.trace,
        quadrature="sample-points",
        samples_per_element=m,
        continuity=iface.continuity,
    )
    if iface.continuity == "C1":
        return assemble_c1(tmp)
    return assemble_c0(tmp)


@dataclass
class NullSpaceMap:
    """Affine condensation u = T v + t0 eliminating slave interface dofs."""

    T: sp.csr_matrix
    t0: np.ndarray
    D: np.ndarray
    kept_dofs: np.ndarray
    eliminated_dofs: np.ndarray


def condense(block: ConstraintBlock, n_total_dofs: int, slave_offset: int, master_offset: int,
             freed_left: int = 0, freed_right: int = 0) -> NullSpaceMap:
    """Null-space map expressing slave trace dofs through master dofs.

    With an unmodified dual multiplier ``m_ss`` is diagonal and square; with
    crosspoint-modified multipliers the l freed end dofs stay primal.

    Raises
    ------
    CondensationError
        If the dependent block of m_ss is singular.
    """
    if block.continuity != "C0":
        raise UnsupportedInputError("condensation is implemented for C0 blocks")
    m_ss, m_sm = block.m_ss, block.m_sm
    n_tr = m_ss.shape[1]
    dep_local = np.arange(freed_left, n_tr - freed_right)
    if m_ss.shape[0] != len(dep_local):
        raise CondensationError(
            f"multiplier count {m_ss.shape[0]} does not match dependent slave dofs "
            f"{len(dep_local)}"
        )
    A = m_ss[:, dep_local]
    det_ok = np.linalg.cond(A) < 1e12 if A.size else False
    if not det_ok:
        raise CondensationError("singular slave coupling block m_ss")
    free_local = np.setdiff1d(np.arange(n_tr), dep_local)
    B = m_ss[:, free_local]
    D_master = np.linalg.solve(A, m_sm)
    D_free = -np.linalg.solve(A, B) if len(free_local) else np.zeros((len(dep_local), 0))
    eliminated = slave_offset + block.slave_trace_dofs[dep_local]
    kept = np.setdiff1d(np.arange(n_total_dofs), eliminated)
    pos_in_kept = -np.ones(n_total_dofs, dtype=int)
    pos_in_kept[kept] = np.arange(len(kept))
    T = sp.lil_matrix((n_total_dofs, len(kept)))
    for j, dof in enumerate(kept):
        T[dof, j] = 1.0
    master_global = master_offset + block.master_trace_dofs
    free_global = slave_offset + block.slave_trace_dofs[free_local]
    for r, dof in enumerate(eliminated):
        for j, mg in enumerate(master_global):
            if D_master[r, j] != 0.0:
                T[dof, pos_in_kept[mg]] += D_master[r, j]
        for j, fg in enumerate(free_global):
            if D_free[r, j] != 0.0:
                T[dof, pos_in_kept[fg]] += D_free[r, j]
    return NullSpaceMap(
        T=sp.csr_matrix(T),
        t0=np.zeros(n_total_dofs),
        D=D_master,
        kept_dofs=kept,
        eliminated_dofs=eliminated,
    )
