"""Multi-patch problems: dof bookkeeping, Dirichlet data, mortar-coupled solves.

Scalar control values are numbered patch by patch; vector problems interleave
components per control point.  Dirichlet data is imposed strongly on boundary
control coefficients by face interpolation at Greville points, which is exact
for polynomial boundary data up to the trace degree.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .continuum import BoundaryCondition, Material, PatchAssembler, assemble_neumann
from .errors import ConfigurationError, UnsupportedInputError
from .mortar import (
    ConstraintBlock,
    Interface,
    InterfaceGeometry,
    assemble_c0,
    assemble_c1,
    build_multiplier,
    condense,
)
from .dualbasis import TraceSpace
from .newton import NewtonConfig, newton_solve, solve_saddle
from .patches import Face, Patch, map_point
from .splines import nurbs_eval

__all__ = ["InterfaceSpec", "MultiPatchProblem", "interpolate_on_face", "interpolate_field"]


def interpolate_field(patch: Patch, fn, n_comp: int) -> np.ndarray:
    """Patch coefficients interpolating fn at the tensor Greville grid.

    Exact for any function already contained in the patch space (in
    particular polynomials up to the space degrees on affine patches).
    """
    grevs = [s.greville() for s in patch.spaces]
    mats = []
    for s, g in zip(patch.spaces, grevs):
        A = np.zeros((len(g), s.n_basis))
        for r, t in enumerate(g):
            span, vals = nurbs_eval(s, float(t), 0)
            A[r, span - s.degree : span + 1] = vals[0]
        mats.append(A)
    G = np.meshgrid(*grevs, indexing="ij")
    pts = np.stack([g.ravel() for g in G], axis=-1)
    vals = np.empty((len(pts), n_comp))
    for r, xi in enumerate(pts):
        x = map_point(patch, xi)
        vals[r] = np.atleast_1d(np.asarray(fn(x), dtype=float))
    shape = tuple(len(g) for g in grevs)
    coef = vals.reshape(shape + (n_comp,))
    for ax, A in enumerate(mats):
        coef = np.moveaxis(coef, ax, 0)
        flat = coef.reshape(coef.shape[0], -1)
        coef = np.linalg.solve(A, flat).reshape(coef.shape)
        coef = np.moveaxis(coef, 0, ax)
    return coef.reshape(-1, n_comp)


@dataclass
class InterfaceSpec:
    """Declarative mortar interface between two patch faces."""

    slave: tuple  # (patch index, face name)
    master: tuple
    multiplier: str = "standard"
    quadrature: str = "merged-gauss-parametric"
    samples_per_element: int = 4
    continuity: str = "C0"
    crosspoints: object = "auto"  # "auto" | "none" | (l_left, l_right)


def interpolate_on_face(patch: Patch, face: Face, fn, n_comp: int):
    """Control coefficients on a boundary layer interpolating fn at Greville points.

    Returns (dof indices into the patch control grid, values (n, n_comp)).
    """
    spaces = patch.face_spaces(face)
    grevs = [s.greville() for s in spaces]
    mats = []
    for s, g in zip(spaces, grevs):
        A = np.zeros((len(g), s.n_basis))
        for r, t in enumerate(g):
            span, vals = nurbs_eval(s, float(t), 0)
            A[r, span - s.degree : span + 1] = vals[0]
        mats.append(A)
    if len(spaces) == 1:
        pts = grevs[0][:, None]
    else:
        G = np.meshgrid(*grevs, indexing="ij")
        pts = np.stack([g.ravel() for g in G], axis=-1)
    vals = np.empty((len(pts), n_comp))
    for r, tp in enumerate(pts):
        x = map_point(patch, patch.face_param(face, tp))
        v = np.atleast_1d(np.asarray(fn(x) if callable(fn) else fn, dtype=float))
        if v.shape != (n_comp,):
            raise ConfigurationError("dirichlet value has wrong number of components")
        vals[r] = v
    if len(spaces) == 1:
        coef = np.linalg.solve(mats[0], vals)
    else:
        n1, n2 = mats[0].shape[0], mats[1].shape[0]
        V = vals.reshape(n1, n2, n_comp)
        tmp = np.linalg.solve(mats[0], V.reshape(n1, -1)).reshape(n1, n2, n_comp)
        tmp = np.moveaxis(tmp, 0, 1)
        coef = np.linalg.solve(mats[1], tmp.reshape(n2, -1)).reshape(n2, n1, n_comp)
        coef = np.moveaxis(coef, 0, 1).reshape(-1, n_comp)
    return patch.face_dof_indices(face), coef


class MultiPatchProblem:
    """Patches, materials, boundary conditions and mortar interfaces."""

    def __init__(self, patches, materials, bcs=(), interfaces=(), quad_extra=0):
        self.patches = list(patches)
        self.materials = list(materials)
        if len(self.materials) == 1:
            self.materials = self.materials * len(self.patches)
        if len(self.materials) != len(self.patches):
            raise ConfigurationError("one material (or one shared) per patch required")
        self.bcs = list(bcs)
        self.specs = list(interfaces)
        ncs = {m.n_components(p.dim) for m, p in zip(self.materials, self.patches)}
        if len(ncs) != 1:
            raise ConfigurationError("all patches must share the component count")
        self.n_comp = ncs.pop()
        self.scalar_counts = [p.n_dofs for p in self.patches]
        self.scalar_offsets = np.cumsum([0] + self.scalar_counts)
        self.n_scalar = int(self.scalar_offsets[-1])
        self.n_dofs = self.n_scalar * self.n_comp
        self.assemblers = None
        self.quad_extra = quad_extra
        self.interfaces: list[Interface] = []
        self.blocks: list[ConstraintBlock] = []
        self.warnings: list[str] = []
        self._built = False

    # ------------- construction -------------

    def _assembler_list(self):
        if self.assemblers is None:
            from .patches import PatchQuadrature, QuadratureRule

            self.assemblers = [
                PatchAssembler(
                    p, m, PatchQuadrature(p, QuadratureRule.for_patch(p, self.quad_extra))
                )
                for p, m in zip(self.patches, self.materials)
            ]
        return self.assemblers

    def _point_on_dirichlet_face(self, x, tol) -> bool:
        for bc in self.bcs:
            if bc.kind != "dirichlet":
                continue
            patch = self.patches[bc.patch_index]
            tang = patch.face_spaces(bc.face)
            if len(tang) != 1:
                continue
            lo, hi = tang[0].kv.domain
            for t in np.linspace(lo, hi, 33):
                xf = map_point(patch, patch.face_param(bc.face, t))
                if np.linalg.norm(xf - x) < tol:
                    return True
        return False

    def build(self):
        """Resolve interfaces, multipliers, crosspoints, and constraint blocks."""
        self.interfaces.clear()
        self.blocks.clear()
        for spec in self.specs:
            si, sface = spec.slave[0], Face.parse(spec.slave[1])
            mi, mface = spec.master[0], Face.parse(spec.master[1])
            geom = InterfaceGeometry(
                self.patches[si], sface, self.patches[mi], mface
            )
            trace = TraceSpace(geom.slave_space)
            if spec.crosspoints == "auto":
                tol = 1e-8 * max(p.diameter() for p in self.patches)
                lo, hi = geom.slave_space.kv.domain
                ends = []
                for t in (lo, hi):
                    x = geom.slave_point(t)
                    ends.append(1 if self._point_on_dirichlet_face(x, tol) else 0)
                crosspoints = tuple(ends)
            elif spec.crosspoints == "none":
                crosspoints = (0, 0)
            else:
                crosspoints = tuple(spec.crosspoints)
            mult = build_multiplier(trace, spec.multiplier, crosspoints)
            iface = Interface(
                geometry=geom,
                multiplier=mult,
                trace=trace,
                quadrature=spec.quadrature,
                samples_per_element=spec.samples_per_element,
                continuity=spec.continuity,
            )
            blk = assemble_c1(iface) if spec.continuity == "C1" else assemble_c0(iface)
            blk.slave_patch_index = si
            blk.master_patch_index = mi
            blk.crosspoints = crosspoints
            self.warnings.extend(blk.warnings)
            self.interfaces.append(iface)
            self.blocks.append(blk)
        self._built = True

    # ------------- global operators -------------

    def global_constraint_matrix(self):
        """Expand all constraint blocks to one sparse matrix over global dofs."""
        if not self._built:
            self.build()
        if not self.blocks:
            return None
        nc = self.n_comp
        rows = []
        for blk in self.blocks:
            so = self.scalar_offsets[blk.slave_patch_index]
            mo = self.scalar_offsets[blk.master_patch_index]
            for c in range(nc):
                cs = sp.lil_matrix((blk.n_rows, self.n_dofs))
                rs = blk.rows_slave.tocoo()
                cs[rs.row, (so + rs.col) * nc + c] = rs.data
                rm = blk.rows_master.tocoo()
                # subtract master contribution; same multiplier rows
                for r, col, v in zip(rm.row, rm.col, rm.data):
                    cs[r, (mo + col) * nc + c] -= v
                rows.append(sp.csr_matrix(cs))
        return sp.vstack(rows, format="csr")

    def dirichlet_data(self):
        """Fixed global dofs and their interpolated values."""
        values = {}
        for bc in self.bcs:
            if bc.kind != "dirichlet":
                continue
            patch = self.patches[bc.patch_index]
            idx, coef = interpolate_on_face(patch, bc.face, bc.value, self.n_comp)
            off = self.scalar_offsets[bc.patch_index]
            for cp, row in zip(idx, coef):
                for c in range(self.n_comp):
                    dof = (off + cp) * self.n_comp + c
                    v = row[c]
                    if dof in values and abs(values[dof] - v) > 1e-10 * (1 + abs(v)):
                        raise ConfigurationError(
                            f"conflicting Dirichlet values at shared control dof {dof}"
                        )
                    values[dof] = v
        if not values:
            return np.array([], dtype=int), np.array([])
        dofs = np.array(sorted(values), dtype=int)
        return dofs, np.array([values[d] for d in dofs])

    def neumann_load(self):
        return assemble_neumann(
            self.patches, self.bcs, [self.n_comp] * len(self.patches)
        )

    def assemble_internal(self, state):
        from .continuum import assemble_internal as _ai

        return _ai(self._assembler_list(), state)

    # ------------- solves -------------

    def solve_linear(self, method="saddle", check_conditioning=False):
        """Direct solve for linear materials (Poisson / linear elasticity).

        Returns (state, info); info carries multiplier values and the
        conditioning flag for saddle solves.
        """
        if not self._built:
            self.build()
        zero = np.zeros(self.n_dofs)
        _, K = self.assemble_internal(zero)
        f = self.neumann_load()
        fixed, fvals = self.dirichlet_data()
        C = self.global_constraint_matrix()
        u = np.zeros(self.n_dofs)
        u[fixed] = fvals
        free = np.setdiff1d(np.arange(self.n_dofs), fixed)
        K_ff = K[free][:, free]
        rhs = f[free] - K[free][:, fixed] @ fvals
        info = {"near_singular": False, "warnings": list(self.warnings)}
        if C is None:
            uf, _, sinfo = solve_saddle(K_ff, rhs, check_conditioning=check_conditioning)
            info.update(sinfo)
            u[free] = uf
            return u, info
        if method == "saddle":
            C_f = C[:, free]
            g = -np.asarray(C[:, fixed] @ fvals).ravel()
            uf, lam, sinfo = solve_saddle(
                K_ff, rhs, C_f, g, check_conditioning=check_conditioning
            )
            info.update(sinfo)
            info["multipliers"] = lam
            u[free] = uf
            return u, info
        if method == "condensed":
            return self._solve_condensed(K, f, fixed, fvals, info)
        raise ConfigurationError(f"unknown solve method {method!r}")

    def _solve_condensed(self, K, f, fixed, fvals, info):
        if len(self.blocks) != 1:
            raise UnsupportedInputError("condensed solves support a single interface")
        nc = self.n_comp
        blk = self.blocks[0]
        cps = getattr(blk, "crosspoints", (0, 0))
        ns_map = condense(
            blk,
            self.n_scalar,
            int(self.scalar_offsets[blk.slave_patch_index]),
            int(self.scalar_offsets[blk.master_patch_index]),
            freed_left=cps[0],
            freed_right=cps[1],
        )
        T = sp.kron(ns_map.T, sp.identity(nc), format="csr")
        kept = (ns_map.kept_dofs[:, None] * nc + np.arange(nc)).ravel()
        eliminated = (ns_map.eliminated_dofs[:, None] * nc + np.arange(nc)).ravel()
        fixed_mask = np.zeros(self.n_dofs, dtype=bool)
        fixed_mask[fixed] = True
        if fixed_mask[eliminated].any():
            raise UnsupportedInputError("condensation would eliminate a Dirichlet-fixed dof")
        u = np.zeros(self.n_dofs)
        u[fixed] = fvals
        col_is_free = ~fixed_mask[kept]
        T_free = T[:, col_is_free]
        T_fix = T[:, ~col_is_free]
        vals_fix = u[kept[~col_is_free]]
        K_red = (T_free.T @ (K @ T_free)).tocsc()
        f_red = T_free.T @ (f - K @ (T_fix @ vals_fix))
        v, _, sinfo = solve_saddle(K_red, f_red)
        info.update(sinfo)
        u_full = T_free @ v + T_fix @ vals_fix
        return u_full, info

    # ------------- evaluation helpers -------------

    def patch_state(self, state, i):
        nc = self.n_comp
        o0 = self.scalar_offsets[i] * nc
        o1 = self.scalar_offsets[i + 1] * nc
        return state[o0:o1]

    def energy_error(self, state, exact_grad):
        """Energy / H1-seminorm error against an analytic gradient.

        For Poisson this is the H1 seminorm; for elasticity the strain-energy
        norm of the displacement error with exact_grad returning du_a/dx_b.
        """
        total = 0.0
        for i, a in enumerate(self._assembler_list()):
            u = self.patch_state(state, i)
            nc = self.n_comp
            lam, mu = a.material.lame if a.material.kind != "poisson" else (0.0, 0.5)
            for chunk in a.pq.iter_chunks():
                t = a.pq.chunk_tables(chunk)
                idx, dNdX, wdet, xq = t["idx"], t["dNdX"], t["wdet"], t["xq"]
                ne, nq, F, d = dNdX.shape
                gidx = (idx[:, :, None] * nc + np.arange(nc)).reshape(ne, -1)
                ua = u[gidx].reshape(ne, F, nc)
                gu = np.einsum("efa,eqfb->eqab", ua, dNdX)
                gex = np.empty_like(gu)
                for e in range(ne):
                    for q in range(nq):
                        gex[e, q] = np.asarray(exact_grad(xq[e, q])).reshape(nc, d)
                diff = gu - gex
                if a.material.kind == "poisson":
                    dens = np.einsum("eqab,eqab->eq", diff, diff)
                else:
                    eps = 0.5 * (diff + diff.swapaxes(-1, -2))
                    tre = np.trace(eps, axis1=2, axis2=3)
                    dens = lam * tre ** 2 + 2 * mu * np.einsum("eqab,eqab->eq", eps, eps)
                total += float((wdet * dens).sum())
        return float(np.sqrt(total))

    def vm_stress_samples(self, state, n_per_element=3):
        """Von Mises stress sampled on a per-element lattice of each patch."""
        from .patches import basis_at, jacobian as _jac

        out = []
        for i, (patch, mat) in enumerate(zip(self.patches, self.materials)):
            if mat.kind == "poisson":
                raise ConfigurationError("von Mises stress needs an elastic material")
            lam, mu = mat.lame
            u = self.patch_state(state, i).reshape(-1, self.n_comp)
            vals = []
            axes = []
            for s in patch.spaces:
                pts = []
                for (_, a0, b0) in s.kv.spans():
                    inner = np.linspace(a0, b0, n_per_element + 2)[1:-1]
                    pts.extend(inner)
                axes.append(np.array(pts))
            G = np.meshgrid(*axes, indexing="ij")
            P = np.stack([g.ravel() for g in G], axis=-1)
            for xi in P:
                idx, ders = basis_at(patch, xi, 1)
                J, _ = _jac(patch, xi)
                Jinv = np.linalg.inv(J)
                d = patch.dim
                gpar = np.stack(
                    [ders[tuple(1 if m == l else 0 for m in range(d))] for l in range(d)],
                    axis=1,
                )
                gphys = gpar @ Jinv  # (F, d)
                gu = u[idx].T @ gphys  # (nc, d)
                eps = 0.5 * (gu + gu.T)
                sig = lam * np.trace(eps) * np.eye(d) + 2 * mu * eps
                if d == 2:  # plane strain
                    szz = lam * np.trace(eps)
                    s3 = np.array(
                        [
                            [sig[0, 0], sig[0, 1], 0.0],
                            [sig[1, 0], sig[1, 1], 0.0],
                            [0.0, 0.0, szz],
                        ]
                    )
                else:
                    s3 = sig
                dev = s3 - np.trace(s3) / 3.0 * np.eye(3)
                vals.append(float(np.sqrt(1.5 * np.tensordot(dev, dev))))
            out.append(np.array(vals))
        return out


