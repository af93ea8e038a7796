"""Matrix-material residuals and tangents.

Three material kinds are supported: scalar Poisson diffusion (for the mortar
convergence studies), linear elasticity under plane strain, and Saint-Venant
Kirchhoff hyperelasticity (2D plane strain or 3D).  Assembly is element-
chunked and vectorized; tangents are exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, DomainError, ElementInversionError
from .patches import Face, Patch, PatchQuadrature, basis_at, gauss_points

__all__ = [
    "Material",
    "BoundaryCondition",
    "svk_stress",
    "assemble_internal",
    "assemble_neumann",
    "PatchAssembler",
]

KINDS = ("poisson", "linear-elastic-plane-strain", "saint-venant-kirchhoff")


@dataclass(frozen=True)
class Material:
    """Material model: kind plus Young's modulus and Poisson ratio.

    For the Poisson kind the moduli are ignored (unit diffusivity).
    """

    kind: str
    E: float = 1.0
    nu: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown material kind {self.kind!r}")
        if self.kind != "poisson":
            if self.E <= 0:
                raise DomainError("Young's modulus must be positive")
            if not (-1.0 < self.nu < 0.5):
                raise DomainError("Poisson ratio must lie in (-1, 0.5)")

    @property
    def lame(self) -> tuple[float, float]:
        lam = self.E * self.nu / ((1 + self.nu) * (1 - 2 * self.nu))
        mu = self.E / (2 * (1 + self.nu))
        return lam, mu

    def n_components(self, dim: int) -> int:
        return 1 if self.kind == "poisson" else dim


@dataclass(frozen=True)
class BoundaryCondition:
    """Dirichlet or Neumann data on one patch face.

    ``value`` is a constant vector/scalar or a callable of the physical point.
    """

    patch_index: int
    face: Face
    kind: str  # "dirichlet" | "neumann"
    value: object

    def evaluate(self, x, n_comp):
        if callable(self.value):
            v = np.asarray(self.value(x), dtype=float)
        else:
            v = np.asarray(self.value, dtype=float)
        v = np.atleast_1d(v)
        if v.shape != (n_comp,):
            raise ConfigurationError(
                f"boundary value has {v.shape} components, expected {n_comp}"
            )
        return v


def svk_stress(F: np.ndarray, material: Material):
    """First Piola-Kirchhoff stress and stored energy of the SVK law.

    Works for 2x2 (plane strain) and 3x3 deformation gradients.

    Raises
    ------
    ElementInversionError
        If det F <= 0.
    """
    F = np.asarray(F, dtype=float)
    d = F.shape[0]
    if np.linalg.det(F) <= 0.0:
        raise ElementInversionError(f"non-positive det F = {np.linalg.det(F):.3e}")
    lam, mu = material.lame
    Eg = 0.5 * (F.T @ F - np.eye(d))
    S = lam * np.trace(Eg) * np.eye(d) + 2 * mu * Eg
    P = F @ S
    psi = 0.5 * np.tensordot(Eg, S)
    return P, float(psi)


def _voigt_pairs(d):
    if d == 2:
        return [(0, 0), (1, 1), (0, 1)]
    return [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)]


def _voigt_C(lam, mu, d):
    pairs = _voigt_pairs(d)
    nv = len(pairs)
    C = np.zeros((nv, nv))
    for a, (i, j) in enumerate(pairs):
        for b, (k, l) in enumerate(pairs):
            C[a, b] = lam * (i == j) * (k == l) + mu * (
                (i == k) * (j == l) + (i == l) * (j == k)
            )
    return C


class PatchAssembler:
    """Internal residual and exact tangent for one patch and material."""

    def __init__(self, patch: Patch, material: Material, quadrature: PatchQuadrature | None = None,
                 chunk_size: int = 256):
        self.patch = patch
        self.material = material
        self.pq = quadrature or PatchQuadrature(patch)
        self.chunk = chunk_size
        self.n_comp = material.n_components(patch.dim)
        self.n_dofs = patch.n_dofs * self.n_comp

    def assemble(self, u: np.ndarray):
        """Residual vector and sparse tangent at state u (patch-local dofs)."""
        kind = self.material.kind
        if kind == "poisson":
            return self._assemble_poisson(u)
        if kind == "linear-elastic-plane-strain":
            if self.patch.dim != 2:
                raise ConfigurationError("plane strain requires a 2D patch")
            return self._assemble_linear(u)
        return self._assemble_svk(u)

    # ---------------- scalar diffusion ----------------

    def _assemble_poisson(self, u):
        nd = self.n_dofs
        res = np.zeros(nd)
        rows, cols, vals = [], [], []
        for chunk in self.pq.iter_chunks(self.chunk):
            t = self.pq.chunk_tables(chunk)
            idx, dNdX, wdet = t["idx"], t["dNdX"], t["wdet"]
            ua = u[idx]  # (ne, F)
            gu = np.einsum("ef,eqfb->eqb", ua, dNdX)
            re = np.einsum("eq,eqb,eqfb->ef", wdet, gu, dNdX)
            np.add.at(res, idx, re)
            Ke = np.einsum("eq,eqfb,eqgb->efg", wdet, dNdX, dNdX)
            ne, F = idx.shape
            rows.append(np.repeat(idx, F, axis=1).ravel())
            cols.append(np.tile(idx, (1, F)).ravel())
            vals.append(Ke.ravel())
        K = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(nd, nd),
        ).tocsc()
        return res, K

    # ---------------- linear elasticity (plane strain) ----------------

    def _small_strain_B(self, dNdX):
        """B[e,q,(F,c),v] with engineering shear rows, small strain."""
        ne, nq, F, d = dNdX.shape
        pairs = _voigt_pairs(d)
        B = np.zeros((ne, nq, F, d, len(pairs)))
        for v, (i, j) in enumerate(pairs):
            if i == j:
                B[:, :, :, i, v] += dNdX[:, :, :, j]
            else:
                B[:, :, :, i, v] += dNdX[:, :, :, j]
                B[:, :, :, j, v] += dNdX[:, :, :, i]
        return B.reshape(ne, nq, F * d, len(pairs))

    def _assemble_linear(self, u):
        nd = self.n_dofs
        nc = self.n_comp
        lam, mu = self.material.lame
        Cv = _voigt_C(lam, mu, self.patch.dim)
        res = np.zeros(nd)
        rows, cols, vals = [], [], []
        for chunk in self.pq.iter_chunks(self.chunk):
            t = self.pq.chunk_tables(chunk)
            idx, dNdX, wdet = t["idx"], t["dNdX"], t["wdet"]
            gidx = (idx[:, :, None] * nc + np.arange(nc)).reshape(idx.shape[0], -1)
            B = self._small_strain_B(dNdX)  # (ne,nq,Fd,nv)
            ua = u[gidx]  # (ne, Fd)
            eps = np.einsum("ek,eqkv->eqv", ua, B)
            sig = eps @ Cv.T
            re = np.einsum("eq,eqv,eqkv->ek", wdet, sig, B)
            np.add.at(res, gidx, re)
            BC = B @ Cv.T
            Ke = np.einsum("eq,eqkv,eqlv->ekl", wdet, BC, B)
            ne, Fd = gidx.shape
            rows.append(np.repeat(gidx, Fd, axis=1).ravel())
            cols.append(np.tile(gidx, (1, Fd)).ravel())
            vals.append(Ke.ravel())
        K = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(nd, nd),
        ).tocsc()
        return res, K

    # ---------------- Saint-Venant-Kirchhoff ----------------

    def _assemble_svk(self, u):
        nd = self.n_dofs
        nc = self.n_comp
        d = self.patch.dim
        lam, mu = self.material.lame
        Cv = _voigt_C(lam, mu, d)
        pairs = _voigt_pairs(d)
        res = np.zeros(nd)
        rows, cols, vals = [], [], []
        eye = np.eye(d)
        for chunk in self.pq.iter_chunks(self.chunk):
            t = self.pq.chunk_tables(chunk)
            idx, dNdX, wdet = t["idx"], t["dNdX"], t["wdet"]
            ne, nq, F, _ = dNdX.shape
            gidx = (idx[:, :, None] * nc + np.arange(nc)).reshape(ne, -1)
            ua = u[gidx].reshape(ne, F, nc)
            gradu = np.einsum("efa,eqfb->eqab", ua, dNdX)
            Fdef = gradu + eye
            detF = np.linalg.det(Fdef)
            if np.any(detF <= 0.0):
                e_bad = int(np.argwhere(detF <= 0.0)[0][0])
                raise ElementInversionError(
                    "det F <= 0 during assembly", element=int(chunk[e_bad])
                )
            Eg = 0.5 * (np.einsum("eqca,eqcb->eqab", Fdef, Fdef) - eye)
            trE = np.trace(Eg, axis1=2, axis2=3)
            S = lam * trE[..., None, None] * eye + 2 * mu * Eg
            P = np.einsum("eqab,eqbc->eqac", Fdef, S)
            re = np.einsum("eq,eqab,eqfb->efa", wdet, P, dNdX).reshape(ne, -1)
            np.add.at(res, gidx, re)
            # material part: BL[e,q,(F,c),v] = dE_v / du_{F c}, engineering shears
            BL = np.zeros((ne, nq, F, nc, len(pairs)))
            for v, (i, j) in enumerate(pairs):
                if i == j:
                    BL[..., v] = np.einsum("eqc,eqf->eqfc", Fdef[:, :, :, i], dNdX[:, :, :, i])
                else:
                    BL[..., v] = np.einsum(
                        "eqc,eqf->eqfc", Fdef[:, :, :, j], dNdX[:, :, :, i]
                    ) + np.einsum("eqc,eqf->eqfc", Fdef[:, :, :, i], dNdX[:, :, :, j])
            BLr = BL.reshape(ne, nq, F * nc, len(pairs))
            BCv = BLr @ Cv.T
            Kmat = np.einsum("eq,eqkv,eqlv->ekl", wdet, BCv, BLr)
            G1 = np.einsum("eq,eqfb,eqbd,eqgd->efg", wdet, dNdX, S, dNdX)
            Kgeo = np.einsum("efg,ac->efagc", G1, np.eye(nc)).reshape(
                ne, F * nc, F * nc
            )
            Ke = Kmat + Kgeo
            Fd = F * nc
            rows.append(np.repeat(gidx, Fd, axis=1).ravel())
            cols.append(np.tile(gidx, (1, Fd)).ravel())
            vals.append(Ke.ravel())
        K = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(nd, nd),
        ).tocsc()
        return res, K

    def stored_energy(self, u):
        """Total strain energy of the current state."""
        if self.material.kind == "poisson":
            _, K = self._assemble_poisson(np.zeros_like(u))
            return 0.5 * float(u @ (K @ u))
        total = 0.0
        nc = self.n_comp
        d = self.patch.dim
        lam, mu = self.material.lame
        eye = np.eye(d)
        for chunk in self.pq.iter_chunks(self.chunk):
            t = self.pq.chunk_tables(chunk)
            idx, dNdX, wdet = t["idx"], t["dNdX"], t["wdet"]
            ne, nq, F, _ = dNdX.shape
            gidx = (idx[:, :, None] * nc + np.arange(nc)).reshape(ne, -1)
            ua = u[gidx].reshape(ne, F, nc)
            gradu = np.einsum("efa,eqfb->eqab", ua, dNdX)
            if self.material.kind == "linear-elastic-plane-strain":
                eps = 0.5 * (gradu + gradu.swapaxes(-1, -2))
                tre = np.trace(eps, axis1=2, axis2=3)
                sig = lam * tre[..., None, None] * eye + 2 * mu * eps
                psi = 0.5 * np.einsum("eqab,eqab->eq", sig, eps)
            else:
                Fdef = gradu + eye
                Eg = 0.5 * (np.einsum("eqca,eqcb->eqab", Fdef, Fdef) - eye)
                trE = np.trace(Eg, axis1=2, axis2=3)
                S = lam * trE[..., None, None] * eye + 2 * mu * Eg
                psi = 0.5 * np.einsum("eqab,eqab->eq", Eg, S)
            total += float((wdet * psi).sum())
        return total


def assemble_internal(assemblers, state):
    """Block-assemble residual and tangent over a list of PatchAssemblers.

    ``state`` is the concatenation of patch-local dof vectors in order.
    """
    offsets = np.cumsum([0] + [a.n_dofs for a in assemblers])
    res = np.zeros(offsets[-1])
    blocks = []
    for a, o0, o1 in zip(assemblers, offsets[:-1], offsets[1:]):
        r, K = a.assemble(state[o0:o1])
        res[o0:o1] = r
        blocks.append(K)
    return res, sp.block_diag(blocks, format="csc")


def assemble_neumann(patches, bcs, n_comp_per_patch, n_quad_extra: int = 2):
    """Consistent load vector for Neumann (traction / flux) conditions.

    Integrates value * basis over each face with the physical surface
    measure; returns the concatenated per-patch load vector.
    """
    sizes = [p.n_dofs * nc for p, nc in zip(patches, n_comp_per_patch)]
    offsets = np.cumsum([0] + sizes)
    load = np.zeros(offsets[-1])
    for bc in bcs:
        if bc.kind != "neumann":
            continue
        patch = patches[bc.patch_index]
        nc = n_comp_per_patch[bc.patch_index]
        off = offsets[bc.patch_index]
        face = bc.face
        tang_spaces = patch.face_spaces(face)
        # tensor Gauss grid over the tangential directions
        grids = []
        for s in tang_spaces:
            pts, wts = [], []
            xg, wg = gauss_points(s.degree + 1 + n_quad_extra)
            for (_, a, b) in s.kv.spans():
                pts.append(0.5 * (a + b) + 0.5 * (b - a) * xg)
                wts.append(0.5 * (b - a) * wg)
            grids.append((np.concatenate(pts), np.concatenate(wts)))
        if len(grids) == 1:
            tpts = grids[0][0][:, None]
            twts = grids[0][1]
        else:
            P1, P2 = np.meshgrid(grids[0][0], grids[1][0], indexing="ij")
            W1, W2 = np.meshgrid(grids[0][1], grids[1][1], indexing="ij")
            tpts = np.stack([P1.ravel(), P2.ravel()], axis=1)
            twts = (W1 * W2).ravel()
        from .patches import jacobian, map_point

        for tp, tw in zip(tpts, twts):
            xi = patch.face_param(face, tp)
            idx, ders = basis_at(patch, xi, 0)
            vals = ders[(0,) * patch.dim]
            J, _ = jacobian(patch, xi)
            Jt = np.delete(J, face.axis, axis=1)
            measure = np.sqrt(np.linalg.det(Jt.T @ Jt))
            x = map_point(patch, xi)
            tval = bc.evaluate(x, nc)
            contrib = tw * measure * np.outer(vals, tval)  # (F, nc)
            gidx = (idx[:, None] * nc + np.arange(nc)).ravel()
            np.add.at(load, off + gidx, contrib.ravel())
    return load
