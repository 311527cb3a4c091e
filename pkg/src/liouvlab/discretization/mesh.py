"""Graded triangulations of the unit disk model.

Every puncture image is surrounded by a structured polar zone: rings of
radius ``rho0 * 2**-m`` carrying the same angular nodes, closed by a fan at
the puncture.  Bulk zones are full circles and invariant under rotation by
``2 pi / n_ang``; boundary zones are half-rings whose end points lie exactly
on the unit circle and which are mirror symmetric about the inward normal.
The symmetry makes principal-value cancellations of odd angular harmonics
structural.  Outside the zones the disk is filled by a Delaunay
triangulation of concentric point rings.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay

from .. import geometry as geo

N_ANG_BULK = 12
N_HALF_BOUNDARY = 6


@dataclass
class Zone:
    """Structured polar zone around one puncture image."""

    puncture: int
    center: int                     # vertex index of the puncture image
    kind: str
    rho0: float
    depth: int
    n_ang: int
    fan: np.ndarray                 # triangle ids touching the puncture
    rings: np.ndarray = field(default_factory=lambda: np.zeros(0, int))  # ring triangle ids


@dataclass
class Mesh:
    vertices: np.ndarray            # complex disk points
    triangles: np.ndarray           # (T, 3) counter-clockwise
    boundary_edges: np.ndarray      # (E, 2) counter-clockwise along the circle
    edge_arcs: np.ndarray           # (E,) arc label of each boundary edge
    h: float
    depth: int
    zones: list = field(default_factory=list)
    divisor: geo.Divisor | None = None

    @property
    def n_vertices(self) -> int:
        return self.vertices.size

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def triangle_angles(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        out = np.empty(p.shape)
        for k in range(3):
            a = p[:, (k + 1) % 3] - p[:, k]
            b = p[:, (k + 2) % 3] - p[:, k]
            out[:, k] = np.abs(np.angle(b / a))
        return np.degrees(out)

    def min_angle(self) -> float:
        return float(self.triangle_angles().min())

    def puncture_vertex(self, index: int) -> int:
        for z in self.zones:
            if z.puncture == index:
                return z.center
        raise KeyError(index)

    def zone_of(self, index: int) -> Zone:
        for z in self.zones:
            if z.puncture == index:
                return z
        raise KeyError(index)


class MeshError(ValueError):
    pass


def _signed_area(p):
    a, b, c = p[..., 0], p[..., 1], p[..., 2]
    return 0.5 * np.imag(np.conj(b - a) * (c - a))


def _zone_radius(d: geo.Divisor, w: np.ndarray, i: int, h: float, n: int) -> float:
    p = d.punctures[i]
    target = n * h / (2.0 * np.pi)
    others = np.delete(w, i)
    lim = target
    if others.size:
        lim = min(lim, 0.3 * np.min(np.abs(others - w[i])))
    if p.is_bulk:
        lim = min(lim, 0.4 * (1.0 - abs(w[i])))
    return lim


def build_mesh(d: geo.Divisor, target_h: float, grading_depth: int = 12,
               on_close: str = "refine") -> Mesh:
    """Triangulate the disk with graded polar zones at the puncture images.

    Parameters
    ----------
    d : Divisor
        Punctures (weight-0 spectators included).
    target_h : float
        Background edge length in disk coordinates.
    grading_depth : int
        Number of rings, each half the radius of the previous one.
    on_close : {"refine", "error"}
        Behaviour when two punctures are closer than ``4 * target_h``:
        shrink the zones (``"refine"``) or raise.
    """
    h = float(target_h)
    if h <= 0 or grading_depth < 1:
        raise MeshError("target_h must be positive and grading_depth >= 1")
    w = d.disk_locations()
    if w.size > 1:
        dmin = min(abs(w[i] - w[j]) for i in range(w.size) for j in range(i + 1, w.size))
        if dmin < 4 * h and on_close == "error":
            raise MeshError(f"punctures closer ({dmin:.3g}) than 4*h = {4 * h:.3g}")

    verts: list[complex] = []
    tris: list[tuple[int, int, int]] = []
    zones: list[Zone] = []
    delaunay_pts: list[int] = []      # vertex ids fed to Delaunay
    circle_pts: list[tuple[float, int]] = []
    zone_specs = []

    def add(z):
        verts.append(complex(z))
        return len(verts) - 1

    for i, p in enumerate(d.punctures):
        n = N_ANG_BULK if p.is_bulk else N_HALF_BOUNDARY
        rho0 = _zone_radius(d, w, i, h, N_ANG_BULK)
        c = add(w[i])
        ring_ids = []
        if p.is_bulk:
            theta = 2 * np.pi * np.arange(n) / n
            for m in range(grading_depth):
                rho = rho0 * 2.0 ** (-m)
                ring_ids.append([add(w[i] + rho * np.exp(1j * t)) for t in theta])
        else:
            normal = np.angle(-w[i])
            for m in range(grading_depth):
                rho = rho0 * 2.0 ** (-m)
                beta = np.arccos(rho / 2.0)
                psi = normal + np.linspace(-beta, beta, n + 1)
                pts = w[i] + rho * np.exp(1j * psi)
                # end points exactly on the unit circle
                pts[0] /= abs(pts[0])
                pts[-1] /= abs(pts[-1])
                ring_ids.append([add(z) for z in pts])
            circle_pts.append((np.angle(w[i]) % (2 * np.pi), c))
            for m in range(grading_depth):
                for e in (ring_ids[m][0], ring_ids[m][-1]):
                    circle_pts.append((np.angle(verts[e]) % (2 * np.pi), e))
        t0 = len(tris)
        ring_tris, fan_tris = _zone_triangles(c, ring_ids, p.is_bulk, n)
        tris.extend(ring_tris)
        tris.extend(fan_tris)
        t_ring = np.arange(t0, t0 + len(ring_tris))
        t_fan = np.arange(t0 + len(ring_tris), len(tris))
        zones.append(Zone(i, c, p.kind, rho0, grading_depth, n, t_fan, t_ring))
        delaunay_pts.extend(ring_ids[0])
        zone_specs.append((w[i], rho0, p.is_bulk))

    # boundary points between boundary zones
    bz = [(np.angle(w[i]) % (2 * np.pi), zones[k].rho0)
          for k, i in enumerate(range(len(d.punctures))) if not d.punctures[i].is_bulk]
    bnd_new = _boundary_points(bz, h)
    for t in bnd_new:
        e = add(np.exp(1j * t))
        circle_pts.append((t, e))
        delaunay_pts.append(e)

    # interior points on concentric rings
    dr = h * np.sqrt(3.0) / 2.0
    nr = int(np.floor(1.0 / dr))
    interior = []
    for j in range(1, nr + 1):
        r = 1.0 - j * dr
        if r < 0.5 * dr:
            break
        nj = max(6, int(round(2 * np.pi * r / h)))
        th = (2 * np.pi * (np.arange(nj) + 0.5 * (j % 2))) / nj
        interior.append(r * np.exp(1j * th))
    interior.append(np.array([0.0 + 0.0j]))
    interior = np.concatenate(interior)
    keep = np.ones(interior.size, bool)
    for (c, rho0, _) in zone_specs:
        keep &= np.abs(interior - c) > rho0 + 0.55 * h
    for z in interior[keep]:
        delaunay_pts.append(add(z))

    V = np.array(verts)
    ids = np.array(delaunay_pts)
    tri = Delaunay(np.column_stack([V[ids].real, V[ids].imag]))
    dt = ids[tri.simplices]
    cen = V[dt].mean(axis=1)
    inside = np.zeros(dt.shape[0], bool)
    for (c, rho0, _) in zone_specs:
        inside |= np.abs(cen - c) < rho0 * (1.0 - 1e-9)
    # discard slivers Delaunay creates along the (convex) circle
    area = np.abs(_signed_area(V[dt]))
    inside |= area < 1e-14
    T = np.vstack([np.array(tris, dtype=np.int64).reshape(-1, 3), dt[~inside]])

    # orient counter-clockwise, keeping the first vertex in place
    neg = _signed_area(V[T]) < 0
    T[neg] = T[neg][:, [0, 2, 1]]

    # boundary edges along the circle, counter-clockwise
    circle_pts.sort()
    cids = [e for _, e in circle_pts]
    bedges = np.array([(cids[k], cids[(k + 1) % len(cids)]) for k in range(len(cids))], dtype=np.int64)
    mid = 0.5 * (V[bedges[:, 0]] + V[bedges[:, 1]])
    ang = np.mod(np.angle(mid), 2 * np.pi)
    arcs = _arc_labels(d, ang)

    mesh = Mesh(V, T, bedges, arcs, h, grading_depth, zones, d)
    _check_conformity(mesh)
    return mesh


def _zone_triangles(c, rings, is_bulk, n):
    ring_tris = []
    fan = []
    depth = len(rings)
    if is_bulk:
        for m in range(depth - 1):
            o, q = rings[m], rings[m + 1]
            for j in range(n):
                k = (j + 1) % n
                ring_tris.append((o[j], o[k], q[k]))
                ring_tris.append((o[j], q[k], q[j]))
        last = rings[-1]
        for j in range(n):
            fan.append((c, last[j], last[(j + 1) % n]))
    else:
        half = n // 2
        for m in range(depth - 1):
            o, q = rings[m], rings[m + 1]
            for j in range(n):
                if j < half:
                    ring_tris.append((o[j], o[j + 1], q[j + 1]))
                    ring_tris.append((o[j], q[j + 1], q[j]))
                else:
                    ring_tris.append((o[j + 1], o[j], q[j]))
                    ring_tris.append((o[j + 1], q[j], q[j + 1]))
        last = rings[-1]
        for j in range(n):
            fan.append((c, last[j], last[j + 1]) if j < half else (c, last[j + 1], last[j]))
    return ring_tris, fan


def _boundary_points(bz, h):
    """Uniform angles on the circle outside the boundary zones."""
    if not bz:
        n = max(8, int(round(2 * np.pi / h)))
        return list(2 * np.pi * np.arange(n) / n)
    bz = sorted(bz)
    out = []
    for k, (t, rho) in enumerate(bz):
        t_next, rho_next = bz[(k + 1) % len(bz)]
        if k == len(bz) - 1:
            t_next += 2 * np.pi
        a = t + 2 * np.arcsin(rho / 2)
        b = t_next - 2 * np.arcsin(rho_next / 2)
        gap = b - a
        m = max(1, int(round(gap / h)))
        out.extend(list(a + gap * np.arange(1, m) / m))
    return [np.mod(x, 2 * np.pi) for x in out]


def _arc_labels(d: geo.Divisor, ang: np.ndarray) -> np.ndarray:
    """Arc labels of disk boundary angles, consistent with ``geometry.arc_of_points``."""
    idx = geo.sorted_boundary(d)
    if not idx:
        return np.zeros(ang.shape, dtype=int)
    tb = np.array([geo.boundary_angle(d.punctures[i].location.real) for i in idx])
    j = np.searchsorted(tb, ang, side="right") - 1
    return np.where(j < 0, len(idx) - 1, j).astype(int)


def _check_conformity(mesh: Mesh) -> None:
    T = mesh.triangles
    e = np.sort(np.vstack([T[:, [0, 1]], T[:, [1, 2]], T[:, [2, 0]]]), axis=1)
    key = e[:, 0] * mesh.n_vertices + e[:, 1]
    uniq, counts = np.unique(key, return_counts=True)
    if np.any(counts > 2):
        raise MeshError("non-manifold edge in triangulation")
    b = np.sort(mesh.boundary_edges, axis=1)
    bkey = np.sort(b[:, 0] * mesh.n_vertices + b[:, 1])
    once = np.sort(uniq[counts == 1])
    if once.size != bkey.size or np.any(once != bkey):
        raise MeshError("triangulation boundary does not match the circle edges")
    area = np.abs(_signed_area(mesh.vertices[T]))
    if np.any(area <= 0):
        k = int(np.argmin(area))
        raise MeshError(f"degenerate triangle {k}")


# --------------------------------------------------------------------------
# plain-text export


def export_text(mesh: Mesh, path) -> None:
    """Write ``vertices``, ``triangles`` and ``boundary`` sections.

    Format::

        # liouvlab mesh v1 h=<h> depth=<depth>
        vertices <N>
        <re> <im>            (N lines)
        triangles <T>
        <i> <j> <k>          (T lines, 0-based)
        boundary <E>
        <i> <j> <arc>        (E lines)
        zones <Z>
        <puncture> <center> <kind> <rho0> <n_ang> <n_fan> <fan ids...> <n_ring> <ring ids...>
    """
    with open(path, "w") as f:
        f.write(f"# liouvlab mesh v1 h={float(mesh.h)!r} depth={int(mesh.depth)}\n")
        f.write(f"vertices {mesh.n_vertices}\n")
        for z in mesh.vertices:
            f.write(f"{float(z.real)!r} {float(z.imag)!r}\n")
        f.write(f"triangles {mesh.n_triangles}\n")
        for t in mesh.triangles:
            f.write(f"{t[0]} {t[1]} {t[2]}\n")
        f.write(f"boundary {mesh.boundary_edges.shape[0]}\n")
        for (i, j), a in zip(mesh.boundary_edges, mesh.edge_arcs):
            f.write(f"{i} {j} {a}\n")
        f.write(f"zones {len(mesh.zones)}\n")
        for z in mesh.zones:
            f.write(" ".join(map(str, [z.puncture, z.center, z.kind, repr(float(z.rho0)), z.n_ang,
                                       z.fan.size, *z.fan, z.rings.size, *z.rings])) + "\n")


def import_text(path, divisor: geo.Divisor | None = None) -> Mesh:
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    head = dict(kv.split("=", 1) for kv in lines[0].split() if "=" in kv)
    h, depth = float(head["h"]), int(head["depth"])
    k = 1
    n = int(lines[k].split()[1]); k += 1
    V = np.array([complex(*map(float, lines[k + i].split())) for i in range(n)]); k += n
    n = int(lines[k].split()[1]); k += 1
    T = np.array([list(map(int, lines[k + i].split())) for i in range(n)], dtype=np.int64).reshape(-1, 3); k += n
    n = int(lines[k].split()[1]); k += 1
    B = np.array([list(map(int, lines[k + i].split())) for i in range(n)], dtype=np.int64).reshape(-1, 3); k += n
    n = int(lines[k].split()[1]); k += 1
    zones = []
    for i in range(n):
        tok = lines[k + i].split()
        nf = int(tok[5])
        fan = np.array(tok[6:6 + nf], dtype=np.int64)
        nr = int(tok[6 + nf])
        rings = np.array(tok[7 + nf:7 + nf + nr], dtype=np.int64)
        zones.append(Zone(int(tok[0]), int(tok[1]), tok[2], float(tok[3]), depth, int(tok[4]), fan, rings))
    return Mesh(V, T, B[:, :2], B[:, 2], h, depth, zones, divisor)


# --------------------------------------------------------------------------
# morphing for small puncture displacements


def _smooth_step(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)


def deform_mesh(mesh: Mesh, new_divisor: geo.Divisor) -> Mesh:
    """Move puncture images to ``new_divisor`` keeping the connectivity.

    Each zone moves rigidly (translation for bulk, rotation about the origin
    for boundary punctures) and the displacement decays smoothly to zero
    halfway to the nearest other puncture.  Intended for small shifts such as
    finite-difference stencils, where a fixed connectivity keeps the
    discretization error a smooth function of the puncture positions.
    """
    old = mesh.divisor
    if old is None or len(old) != len(new_divisor):
        raise MeshError("deform_mesh needs a divisor with the same punctures")
    w_old = old.disk_locations()
    w_new = new_divisor.disk_locations()
    V = mesh.vertices.copy()
    for z in mesh.zones:
        i = z.puncture
        if w_new[i] == w_old[i]:
            continue
        others = np.delete(w_old, i)
        r2 = 0.45 * np.min(np.abs(others - w_old[i])) if others.size else 1.0
        if old.punctures[i].is_bulk:
            r2 = min(r2, 0.9 * (1.0 - abs(w_old[i])))
        r1 = 1.2 * z.rho0
        if r2 <= r1:
            raise MeshError(f"puncture {i}: no room to deform the mesh")
        shift = w_new[i] - w_old[i]
        if abs(shift) > 0.5 * (r2 - r1):
            raise MeshError(f"puncture {i}: displacement too large for morphing")
        psi = 1.0 - _smooth_step((np.abs(mesh.vertices - w_old[i]) - r1) / (r2 - r1))
        if old.punctures[i].is_bulk:
            V = V + psi * shift
        else:
            dth = np.angle(w_new[i] / w_old[i])
            V = V * np.exp(1j * psi * dth)
    out = Mesh(V, mesh.triangles, mesh.boundary_edges, mesh.edge_arcs, mesh.h, mesh.depth,
               mesh.zones, new_divisor)
    if np.any(_signed_area(V[mesh.triangles]) <= 0):
        raise MeshError("morphing inverted an element")
    return out
