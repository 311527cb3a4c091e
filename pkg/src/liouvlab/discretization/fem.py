"""Lagrange finite elements on isoparametric triangles of the disk model.

Element geometry is always quadratic: boundary edges get their mid node on
the unit circle, except edges touching a puncture image, which stay
straight so that the singular fan rules see affine elements.  The field
space is P1 or P2 on top of that geometry.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .. import geometry as geo
from .._kernels import locate_candidates
from .mesh import Mesh
from .quadrature import collapsed_triangle

LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))
REF_VERTS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


class AssemblyError(ValueError):
    pass


class LocateError(ValueError):
    pass


# --------------------------------------------------------------------------
# reference shape functions


def shape(order: int, xi, eta) -> np.ndarray:
    """Shape function values, shape ``(..., 3)`` or ``(..., 6)``."""
    xi = np.asarray(xi, float)
    eta = np.asarray(eta, float)
    l0, l1, l2 = 1.0 - xi - eta, xi, eta
    if order == 1:
        return np.stack([l0, l1, l2], axis=-1)
    return np.stack([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                     4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0], axis=-1)


_DL = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


def shape_grad(order: int, xi, eta) -> np.ndarray:
    """Reference gradients, shape ``(..., nloc, 2)``."""
    xi = np.asarray(xi, float)
    eta = np.asarray(eta, float)
    if order == 1:
        return np.broadcast_to(_DL, xi.shape + (3, 2)).copy()
    lam = [1.0 - xi - eta, xi, eta]
    out = np.empty(xi.shape + (6, 2))
    for i in range(3):
        out[..., i, :] = (4 * lam[i] - 1)[..., None] * _DL[i]
    for k, (i, j) in enumerate(LOCAL_EDGES):
        out[..., 3 + k, :] = 4 * (lam[j][..., None] * _DL[i] + lam[i][..., None] * _DL[j])
    return out


def shape_hess(order: int) -> np.ndarray:
    """Constant reference Hessians, shape ``(nloc, 2, 2)``."""
    if order == 1:
        return np.zeros((3, 2, 2))
    out = np.empty((6, 2, 2))
    for i in range(3):
        out[i] = 4 * np.outer(_DL[i], _DL[i])
    for k, (i, j) in enumerate(LOCAL_EDGES):
        out[3 + k] = 4 * (np.outer(_DL[i], _DL[j]) + np.outer(_DL[j], _DL[i]))
    return out


# --------------------------------------------------------------------------
# function space


@dataclass
class FESpace:
    mesh: Mesh
    order: int = 2
    edges: np.ndarray = field(init=False)          # (nE, 2) vertex pairs
    tri_edges: np.ndarray = field(init=False)      # (T, 3) edge ids
    geom: np.ndarray = field(init=False)           # (T, 6) complex geometry nodes
    curved: np.ndarray = field(init=False)         # (T,) bool
    elem_dofs: np.ndarray = field(init=False)      # (T, nloc)
    ndof: int = field(init=False)
    dof_coords: np.ndarray = field(init=False)     # complex
    bedge_elem: np.ndarray = field(init=False)     # (E,) element of each boundary edge
    bedge_local: np.ndarray = field(init=False)    # (E, 2) local vertex numbers (start, end)

    def __post_init__(self):
        if self.order not in (1, 2):
            raise ValueError("order must be 1 or 2")
        m = self.mesh
        T = m.triangles
        V = m.vertices
        nv = m.n_vertices
        loc = np.vstack([T[:, [i, j]] for (i, j) in LOCAL_EDGES])
        srt = np.sort(loc, axis=1)
        key = srt[:, 0] * nv + srt[:, 1]
        uniq, inv = np.unique(key, return_inverse=True)
        self.edges = np.column_stack([uniq // nv, uniq % nv])
        self.tri_edges = inv.reshape(3, -1).T

        # geometry nodes
        mid = 0.5 * (V[self.edges[:, 0]] + V[self.edges[:, 1]])
        bkey = np.sort(m.boundary_edges, axis=1)
        bkey = bkey[:, 0] * nv + bkey[:, 1]
        bidx = np.searchsorted(uniq, bkey)
        punct = np.zeros(nv, bool)
        for z in m.zones:
            punct[z.center] = True
        curved_edge = np.zeros(uniq.size, bool)
        ok = ~(punct[self.edges[bidx, 0]] | punct[self.edges[bidx, 1]])
        curved_edge[bidx[ok]] = True
        mid[curved_edge] = mid[curved_edge] / np.abs(mid[curved_edge])
        self.geom = np.column_stack([V[T], mid[self.tri_edges]])
        self.curved = curved_edge[self.tri_edges].any(axis=1)
        self._edge_mid = mid

        if self.order == 1:
            self.elem_dofs = T.copy()
            self.ndof = nv
            self.dof_coords = V.copy()
        else:
            self.elem_dofs = np.column_stack([T, nv + self.tri_edges])
            self.ndof = nv + uniq.size
            self.dof_coords = np.concatenate([V, mid])

        # boundary edge -> element, local vertices
        pos = {}
        for e in range(T.shape[0]):
            pass
        tri_of_edge = np.full(uniq.size, -1)
        lpos = np.full(uniq.size, -1)
        for k in range(3):
            tri_of_edge[self.tri_edges[:, k]] = np.arange(T.shape[0])
            lpos[self.tri_edges[:, k]] = k
        be = bidx
        self.bedge_elem = tri_of_edge[be]
        lk = lpos[be]
        a_loc = np.array([LOCAL_EDGES[k][0] for k in lk])
        b_loc = np.array([LOCAL_EDGES[k][1] for k in lk])
        # orient like the mesh boundary edge (counter-clockwise)
        start_is_a = T[self.bedge_elem, a_loc] == m.boundary_edges[:, 0]
        self.bedge_local = np.where(start_is_a[:, None], np.column_stack([a_loc, b_loc]),
                                    np.column_stack([b_loc, a_loc]))
        self.bedge_curved = curved_edge[be]
        self._tree = None

    # ---------------------------------------------------------------- geometry
    @property
    def nloc(self) -> int:
        return 3 if self.order == 1 else 6

    def map_points(self, elems, xi, eta):
        """Physical points and geometry Jacobians at reference coordinates.

        Returns ``x`` (complex), ``a = dx/dxi``, ``b = dx/deta`` (complex).
        """
        G = self.geom[elems]
        N = shape(2, xi, eta)
        dN = shape_grad(2, xi, eta)
        x = np.einsum("...k,...k->...", N, G)
        a = np.einsum("...k,...k->...", dN[..., 0], G)
        b = np.einsum("...k,...k->...", dN[..., 1], G)
        return x, a, b

    def detj(self, a, b):
        return np.imag(np.conj(a) * b)

    def element_rule(self, elems, xi, eta, wref):
        """Map a reference rule onto elements.

        ``elems`` has shape ``(m,)`` and the rule arrays ``(q,)``; outputs have
        shape ``(m, q)``.
        """
        E = np.asarray(elems)[:, None]
        XI = np.broadcast_to(xi, (E.shape[0], xi.size))
        ET = np.broadcast_to(eta, (E.shape[0], eta.size))
        x, a, b = self.map_points(np.broadcast_to(E, XI.shape), XI, ET)
        det = self.detj(a, b)
        if np.any(det <= 0):
            bad = int(np.asarray(elems)[np.where((det <= 0).any(axis=1))[0][0]])
            raise AssemblyError(f"degenerate or inverted element {bad}")
        return x, wref[None, :] * det, XI, ET

    # ---------------------------------------------------------------- assembly
    def basis_matrix(self, elems, xi, eta) -> sp.csr_matrix:
        """Sparse matrix of basis values at points given in reference coordinates."""
        elems = np.asarray(elems).ravel()
        N = shape(self.order, np.ravel(xi), np.ravel(eta))
        rows = np.repeat(np.arange(elems.size), self.nloc)
        cols = self.elem_dofs[elems].ravel()
        return sp.csr_matrix((N.ravel(), (rows, cols)), shape=(elems.size, self.ndof))

    def physical_gradients(self, elems, xi, eta):
        """Basis gradients in disk coordinates, shape ``(..., nloc, 2)``; also ``det``."""
        _, a, b = self.map_points(elems, xi, eta)
        det = self.detj(a, b)
        dN = shape_grad(self.order, xi, eta)
        # inverse transpose of J = [[a.re, b.re], [a.im, b.im]]
        gx = (b.imag[..., None] * dN[..., 0] - a.imag[..., None] * dN[..., 1]) / det[..., None]
        gy = (-b.real[..., None] * dN[..., 0] + a.real[..., None] * dN[..., 1]) / det[..., None]
        return np.stack([gx, gy], axis=-1), det

    def assemble_stiffness(self, n: int = 4) -> sp.csr_matrix:
        xi, eta, _, w = collapsed_triangle(n)
        T = self.mesh.n_triangles
        E = np.broadcast_to(np.arange(T)[:, None], (T, xi.size))
        XI = np.broadcast_to(xi, E.shape)
        ET = np.broadcast_to(eta, E.shape)
        g, det = self.physical_gradients(E, XI, ET)
        if np.any(det <= 0):
            bad = int(np.where((det <= 0).any(axis=1))[0][0])
            raise AssemblyError(f"degenerate or inverted element {bad}")
        wd = w[None, :] * det
        Ke = np.einsum("eq,eqia,eqja->eij", wd, g, g)
        return self._scatter(Ke)

    def assemble_mass(self, weight=None, n: int = 5) -> sp.csr_matrix:
        """Mass matrix ``int N_i N_j weight(w) d^2w`` (weight defaults to 1)."""
        xi, eta, _, w = collapsed_triangle(n)
        T = self.mesh.n_triangles
        x, wd, XI, ET = self.element_rule(np.arange(T), xi, eta, w)
        if weight is not None:
            wd = wd * weight(x)
        N = shape(self.order, XI, ET)
        Me = np.einsum("eq,eqi,eqj->eij", wd, N, N)
        return self._scatter(Me)

    def assemble_boundary_mass(self, weight=None, n: int = 5, arcs=None) -> sp.csr_matrix:
        from .quadrature import gauss_legendre01
        s, w = gauss_legendre01(n)
        q = self.boundary_points(np.arange(self.mesh.boundary_edges.shape[0]), s)
        x, ds, E, XI, ET = q
        wd = ds * w[None, :]
        if weight is not None:
            wd = wd * weight(x)
        if arcs is not None:
            keep = np.isin(self.mesh.edge_arcs, np.atleast_1d(arcs))
            wd = wd * keep[:, None]
        N = shape(self.order, XI, ET)
        Me = np.einsum("eq,eqi,eqj->eij", wd, N, N)
        return self._scatter(Me, elems=self.bedge_elem)

    def _scatter(self, Ke, elems=None):
        D = self.elem_dofs if elems is None else self.elem_dofs[elems]
        nl = D.shape[1]
        rows = np.repeat(D, nl, axis=1).ravel()
        cols = np.tile(D, (1, nl)).ravel()
        A = sp.csr_matrix((Ke.ravel(), (rows, cols)), shape=(self.ndof, self.ndof))
        A.sum_duplicates()
        return A

    def boundary_points(self, bedges, s, reverse=None):
        """Points on boundary edges at parameters ``s`` in ``[0, 1]``.

        The parameter runs along the counter-clockwise orientation, or from the
        end vertex when ``reverse`` is true for that edge.  Returns
        ``(x, |dx/ds|, elems, xi, eta)`` with shape ``(len(bedges), len(s))``.
        """
        bedges = np.asarray(bedges)
        el = self.bedge_elem[bedges]
        la = self.bedge_local[bedges, 0]
        lb = self.bedge_local[bedges, 1]
        if reverse is not None:
            rv = np.asarray(reverse, bool)
            la, lb = np.where(rv, lb, la), np.where(rv, la, lb)
        A = REF_VERTS[la]
        B = REF_VERTS[lb]
        S = np.broadcast_to(s, (bedges.size, np.size(s)))
        XI = A[:, 0:1] + S * (B[:, 0:1] - A[:, 0:1])
        ET = A[:, 1:2] + S * (B[:, 1:2] - A[:, 1:2])
        E = np.broadcast_to(el[:, None], XI.shape)
        x, a, b = self.map_points(E, XI, ET)
        dx = a * (B[:, 0:1] - A[:, 0:1]) + b * (B[:, 1:2] - A[:, 1:2])
        return x, np.abs(dx), E, XI, ET

    # ---------------------------------------------------------------- location
    def _ensure_tree(self):
        if self._tree is None:
            cen = self.geom[:, :3].mean(axis=1)
            self._tree = cKDTree(np.column_stack([cen.real, cen.imag]))
        return self._tree

    def locate(self, pts, tol: float = 1e-10, strict: bool = False):
        """Element and reference coordinates of disk points.

        Points marginally outside the discrete domain (the gap between a
        straight fan edge and the circle, or round-off) are assigned to the
        nearest element with clamped reference coordinates.
        """
        pts = np.atleast_1d(np.asarray(pts, complex))
        tree = self._ensure_tree()
        k = min(12, self.mesh.n_triangles)
        _, cand = tree.query(np.column_stack([pts.real, pts.imag]), k=k)
        cand = cand.reshape(pts.size, k)
        V = self.geom[:, :3]
        elem, xi, eta, viol = locate_candidates(pts, cand, V.real.copy(), V.imag.copy())
        if np.any(viol > 1e-2) and strict:
            raise LocateError("point outside the mesh")
        # Newton correction on curved elements
        cv = self.curved[elem]
        if np.any(cv):
            idx = np.where(cv)[0]
            e, a_, b_ = elem[idx], xi[idx], eta[idx]
            for _ in range(8):
                x, ja, jb = self.map_points(e, a_, b_)
                r = pts[idx] - x
                det = self.detj(ja, jb)
                da = (jb.imag * r.real - jb.real * r.imag) / det
                db = (-ja.imag * r.real + ja.real * r.imag) / det
                a_, b_ = a_ + da, b_ + db
                if np.max(np.abs(da) + np.abs(db)) < 1e-14:
                    break
            xi[idx], eta[idx] = a_, b_
        # clamp into the reference triangle
        xi = np.clip(xi, 0.0, 1.0)
        eta = np.clip(eta, 0.0, 1.0)
        s = xi + eta
        over = s > 1.0
        xi[over] /= s[over]
        eta[over] /= s[over]
        return elem, xi, eta

    # ---------------------------------------------------------------- fields
    def interpolate(self, f) -> "Field":
        """Nodal interpolant of a callable of complex disk points."""
        return Field(self, np.asarray(f(self.dof_coords), float))

    def eval_basis(self, pts):
        e, xi, eta = self.locate(pts)
        return self.basis_matrix(e, xi, eta)


@dataclass
class Field:
    space: FESpace
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, float)
        if self.coefficients.shape != (self.space.ndof,):
            raise ValueError("coefficient length does not match the DOF count")

    @property
    def order(self) -> int:
        return self.space.order

    def evaluate(self, pts):
        e, xi, eta = self.space.locate(pts)
        N = shape(self.order, xi, eta)
        return np.einsum("pi,pi->p", N, self.coefficients[self.space.elem_dofs[e]])

    def gradient(self, pts):
        """Real gradient ``(f_x, f_y)`` in disk coordinates, shape ``(p, 2)``."""
        e, xi, eta = self.space.locate(pts)
        g, _ = self.space.physical_gradients(e, xi, eta)
        return np.einsum("pia,pi->pa", g, self.coefficients[self.space.elem_dofs[e]])

    def wirtinger(self, pts):
        g = self.gradient(pts)
        return 0.5 * (g[:, 0] - 1j * g[:, 1])

    def hessian(self, pts):
        """Real Hessian in disk coordinates, shape ``(p, 2, 2)``."""
        sp_ = self.space
        e, xi, eta = sp_.locate(pts)
        c = self.coefficients[sp_.elem_dofs[e]]
        _, a, b = sp_.map_points(e, xi, eta)
        J = np.stack([np.stack([a.real, b.real], -1), np.stack([a.imag, b.imag], -1)], -2)
        Jinv = np.linalg.inv(J)
        dN = shape_grad(self.order, xi, eta)
        g_ref = np.einsum("pia,pi->pa", dN, c)
        g_x = np.einsum("pba,pb->pa", Jinv, g_ref)  # J^{-T} g_ref
        H_ref = np.einsum("iab,pi->pab", shape_hess(self.order), c)
        G = sp_.geom[e]
        Hx_map = np.einsum("iab,pi->pab", shape_hess(2), G.real)
        Hy_map = np.einsum("iab,pi->pab", shape_hess(2), G.imag)
        H_ref = H_ref - g_x[:, 0, None, None] * Hx_map - g_x[:, 1, None, None] * Hy_map
        return np.einsum("pca,pcd,pdb->pab", Jinv, H_ref, Jinv)

    def __add__(self, other):
        return Field(self.space, self.coefficients + other.coefficients)

    def __mul__(self, s):
        return Field(self.space, self.coefficients * s)

    __rmul__ = __mul__


def model_area_weight(w):
    """Pullback volume density ``e^{2 w_hat(w)}`` of the disk model."""
    return np.exp(2.0 * geo.conformal_exponent(w))


def model_length_weight(w):
    return np.exp(geo.conformal_exponent(w))
