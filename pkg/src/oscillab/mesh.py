"""Boundary-fitted triangulations of Omega and Omega_eps, and P1 point location.

Every mesh of a family shares one structured core: the reference grid
restricted to points at least ``band_depth`` away from the oscillating
sides.  Only the band between the core and the (perturbed) side differs
between meshes; it is triangulated with Triangle (constrained, quality
Delaunay, no Steiner points on input segments) so that all boundary
vertices sit exactly on the profile graph.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import triangle
from scipy.spatial import cKDTree

from .geometry import DomainFamily, sample_profile_points


class MeshingError(RuntimeError):
    pass


class LocatorError(RuntimeError):
    pass


MIN_ANGLE = 20.0
BOUNDARY_SAMPLES_PER_PERIOD = 8


@dataclass
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_side: np.ndarray
    edge_graph: np.ndarray
    edge_xp: np.ndarray
    h: float
    eps: float | None
    family: DomainFamily
    band_depth: float
    n_core: int
    _locator: "Locator | None" = field(default=None, repr=False, compare=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def label(self) -> str:
        return "reference" if self.eps is None else f"eps={self.eps:g}"

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def area(self) -> float:
        return float(np.sum(self.signed_areas()))

    def angles(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        out = np.empty((len(p), 3))
        for k in range(3):
            a = p[:, (k + 1) % 3] - p[:, k]
            b = p[:, (k + 2) % 3] - p[:, k]
            c = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            out[:, k] = np.degrees(np.arccos(np.clip(c, -1.0, 1.0)))
        return out

    def edges(self) -> np.ndarray:
        t = self.triangles
        e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges()) + len(self.triangles)

    def boundary_length(self, sides=None) -> float:
        v = self.vertices[self.boundary_edges]
        lens = np.linalg.norm(v[:, 1] - v[:, 0], axis=1)
        if sides is not None:
            lens = lens[np.isin(self.edge_side, list(sides))]
        return float(lens.sum())

    @property
    def locator(self) -> "Locator":
        if self._locator is None:
            self._locator = Locator(self)
        return self._locator

    def validate(self, min_angle: float = MIN_ANGLE) -> dict:
        """Check the mesh invariants; raise :class:`MeshingError` on failure."""
        diag = {}
        areas = self.signed_areas()
        diag["min_area"] = float(areas.min())
        diag["min_angle"] = float(self.angles().min())
        diag["euler"] = self.euler_characteristic()
        problems = []
        if areas.min() <= 0:
            problems.append("non-positive triangle area")
        if diag["min_angle"] < min_angle - 1e-9:
            problems.append(f"minimum angle {diag['min_angle']:.2f} < {min_angle}")
        if diag["euler"] != 1:
            problems.append(f"Euler characteristic {diag['euler']} != 1")
        fam, eps = self.family, self.eps
        if eps is not None and fam.oscillating:
            for side in fam.oscillating:
                ch = fam.chart(side)
                m = self.edge_graph & (self.edge_side == side)
                idx = np.unique(self.boundary_edges[m])
                xp, s = ch.phi_inverse(self.vertices[idx])
                dev = np.abs(s - ch.rho(fam.profile, eps, xp)).max(initial=0.0)
                diag[f"graph_deviation_{side}"] = float(dev)
                if dev > 1e-10:
                    problems.append(f"graph vertices off the curve on {side} ({dev:.2e})")
                per = fam.profile.period(eps)
                if per is not None and fam.profile.kind != "flat" and idx.size:
                    gaps = np.diff(np.sort(xp))
                    per_period = per / gaps.max()
                    diag[f"samples_per_period_{side}"] = float(per_period)
                    if per_period < BOUNDARY_SAMPLES_PER_PERIOD - 1e-9:
                        problems.append(f"only {per_period:.1f} boundary vertices per period on {side}")
        if problems:
            raise MeshingError("; ".join(problems) + f" [{self.label}, h={self.h:g}] {diag}")
        return diag

    # -- dump --------------------------------------------------------------

    def dump(self) -> str:
        buf = io.StringIO()
        buf.write(f"# oscillab mesh {self.label} h={self.h:.10g}\n")
        buf.write(f"VERTICES {self.n_vertices}\n")
        for x, y in self.vertices:
            buf.write(f"{x:.16e} {y:.16e}\n")
        buf.write(f"TRIANGLES {len(self.triangles)}\n")
        for a, b, c in self.triangles:
            buf.write(f"{a} {b} {c}\n")
        buf.write(f"BOUNDARY_EDGES {len(self.boundary_edges)}\n")
        for (a, b), side, g, (x0, x1) in zip(self.boundary_edges, self.edge_side, self.edge_graph, self.edge_xp):
            buf.write(f"{a} {b} {side} {int(g)} {x0:.16e} {x1:.16e}\n")
        return buf.getvalue()


def parse_dump(text: str) -> dict:
    """Read the sections of :meth:`TriMesh.dump` back into arrays."""
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    out = {}
    i = 0
    while i < len(lines):
        name, count = lines[i].split()
        rows = [ln.split() for ln in lines[i + 1:i + 1 + int(count)]]
        out[name] = rows
        i += 1 + int(count)
    return {
        "vertices": np.array(out["VERTICES"], dtype=float).reshape(-1, 2),
        "triangles": np.array(out["TRIANGLES"], dtype=int).reshape(-1, 3),
        "boundary_edges": np.array([r[:2] for r in out["BOUNDARY_EDGES"]], dtype=int).reshape(-1, 2),
        "edge_side": np.array([r[2] for r in out["BOUNDARY_EDGES"]]),
    }


# -- construction ----------------------------------------------------------


def _grid_counts(family: DomainFamily, h: float) -> tuple[int, int, int]:
    if h <= 0:
        raise MeshingError("h must be positive")
    nx = max(1, int(round(family.width / h)))
    ny = max(1, int(round(family.height / h)))
    hn = min(family.width / nx, family.height / ny)
    k = max(1, int(math.floor(family.core_margin / hn + 1e-9)))
    return nx, ny, k


def _structured(family: DomainFamily, h: float):
    nx, ny, k = _grid_counts(family, h)
    xs = np.linspace(0.0, family.width, nx + 1)
    ys = np.linspace(0.0, family.height, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.column_stack([X.ravel(), Y.ravel()])
    vid = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    tris = []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = vid[j, i], vid[j, i + 1], vid[j + 1, i + 1], vid[j + 1, i]
            if (i + j) % 2 == 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    return verts, np.array(tris, dtype=np.int64), vid, nx, ny, k


def _side_boundary(vid: np.ndarray, side: str) -> np.ndarray:
    """Grid vertex ids along a side, ordered by increasing chart coordinate."""
    if side == "bottom":
        return vid[0, :]
    if side == "top":
        return vid[-1, :]
    if side == "left":
        return vid[:, 0]
    return vid[:, -1]


def _edges_for(verts, ids, side, family, graph=False):
    ch = family.chart(side)
    e = np.column_stack([ids[:-1], ids[1:]])
    xp, _ = ch.phi_inverse(verts[e.reshape(-1)])
    return e, [side] * len(e), [graph] * len(e), xp.reshape(-1, 2)


def reference_mesh(family: DomainFamily, h: float) -> TriMesh:
    verts, tris, vid, nx, ny, k = _structured(family, h)
    be, bs, bg, bx = [], [], [], []
    for side in ("bottom", "right", "top", "left"):
        e, s, g, x = _edges_for(verts, _side_boundary(vid, side), side, family)
        be.append(e)
        bs += s
        bg += g
        bx.append(x)
    band_depth = k * min(family.width / nx, family.height / ny)
    core = np.ones(len(verts), bool)
    for side in family.oscillating:
        _, s = family.chart(side).phi_inverse(verts)
        core &= s <= -band_depth + 1e-12
    # core vertices first, in grid order
    order = np.concatenate([np.flatnonzero(core), np.flatnonzero(~core)])
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    mesh = TriMesh(
        vertices=verts[order],
        triangles=inv[tris],
        boundary_edges=inv[np.vstack(be)],
        edge_side=np.array(bs),
        edge_graph=np.array(bg, bool),
        edge_xp=np.vstack(bx),
        h=h,
        eps=None,
        family=family,
        band_depth=band_depth,
        n_core=int(core.sum()),
    )
    return mesh


def _band_polygon(family: DomainFamily, side: str, eps: float, h: float, interface_xp: np.ndarray,
                  depth: float, hn: float):
    """Closed polygon of the band in chart coordinates.

    Returns (points, n_interface, graph_slice, lateral info).
    """
    ch = family.chart(side)
    prof = family.profile
    a, b = ch.interval
    per = prof.period(eps)
    spacing = h if per is None else min(h, per / BOUNDARY_SAMPLES_PER_PERIOD)
    curve_x = sample_profile_points(prof, eps, a, b, spacing)
    curve_s = ch.rho(prof, eps, curve_x)

    def lateral(s_top):
        # interior points of [-depth, s_top], graded from the curve spacing up to hn
        pts, d, s = [], spacing, s_top
        while True:
            d = min(1.25 * d, hn)
            if s - d <= -depth + 0.5 * d:
                break
            s -= d
            pts.append(s)
        return np.array(pts[::-1])

    right = lateral(curve_s[-1])
    left = lateral(curve_s[0])[::-1]
    pts = np.concatenate([
        np.column_stack([interface_xp, np.full(len(interface_xp), -depth)]),
        np.column_stack([np.full(len(right), b), right]),
        np.column_stack([curve_x[::-1], curve_s[::-1]]),
        np.column_stack([np.full(len(left), a), left]),
    ])
    ni = len(interface_xp)
    nr = len(right)
    nc = len(curve_x)
    return pts, ni, nr, nc


def _triangulate_band(pts: np.ndarray, max_area: float, min_angle: float):
    n = len(pts)
    seg = np.column_stack([np.arange(n), (np.arange(n) + 1) % n])
    # Triangle's switch parser reads only digits and '.', so no exponent notation
    opts = f"pq{min_angle:g}a{max_area:.15f}YQ"
    out = triangle.triangulate({"vertices": pts, "segments": seg}, opts)
    v = out["vertices"]
    if not np.array_equal(v[:n], pts):
        raise MeshingError("Triangle reordered input vertices")
    return v, out["triangles"].astype(np.int64)


def _triangle_min_angles(v, tris):
    p = v[tris]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    area = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    ang = np.full(len(tris), np.pi)
    for k in range(3):
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        c = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        ang = np.minimum(ang, np.arccos(np.clip(c, -1, 1)))
    # inverted triangles count as angle -1
    return np.where(area * np.sign(area.sum()) > 0, ang, -1.0)


def _smooth(verts, tris, movable, sweeps=3, floor_deg=MIN_ANGLE):
    """Laplacian smoothing of free vertices.

    A vertex move is kept only if no incident triangle drops below
    ``min(its previous minimum angle, floor_deg)``.
    """
    e = np.vstack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    e = np.vstack([e, e[:, ::-1]])
    n = len(verts)
    A = sp.csr_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    A.data[:] = 1.0
    deg = np.asarray(A.sum(axis=1)).ravel()
    floor = math.radians(floor_deg)
    for _ in range(sweeps):
        old = _triangle_min_angles(verts, tris)
        target = (A @ verts) / deg[:, None]
        moving = movable.copy()
        for _attempt in range(10):
            trial = verts.copy()
            trial[moving] = target[moving]
            new = _triangle_min_angles(trial, tris)
            bad = new < np.minimum(old, floor) - 1e-12
            if not bad.any():
                break
            moving[np.unique(tris[bad])] = False
        else:
            trial = verts
        verts = trial
    return verts


def mesh_domain(family: DomainFamily, eps: float | None, h: float, smooth: bool = True,
                validate: bool = True) -> TriMesh:
    """Mesh ``Omega`` (``eps=None``) or ``Omega_eps`` with target size ``h``."""
    ref = reference_mesh(family, h)
    if eps is None or not family.oscillating or family.profile.kind == "flat":
        mesh = ref if eps is None else _relabel(ref, eps)
        if validate:
            mesh.validate()
        return mesh

    nx, ny, k = _grid_counts(family, h)
    hn = min(family.width / nx, family.height / ny)
    depth = ref.band_depth
    prof = family.profile
    if prof.depth_below(eps) >= depth - 1e-12:
        raise MeshingError("profile dips below the band depth; refine h or enlarge core_margin")

    core_v = ref.vertices[:ref.n_core]
    core_mask_tri = np.all(ref.triangles < ref.n_core, axis=1)
    core_t = ref.triangles[core_mask_tri]
    verts = [core_v]
    tris = [core_t]
    be, bs, bg, bx = [], [], [], []

    # core boundary edges that remain on the outer boundary
    ref_be = ref.boundary_edges
    keep = np.all(ref_be < ref.n_core, axis=1)
    for side in family.oscillating:
        _, s = family.chart(side).phi_inverse(ref.vertices[ref_be].reshape(-1, 2))
        keep &= ~np.all(np.isclose(s.reshape(-1, 2), -depth, atol=1e-12), axis=1)
    be.append(ref_be[keep])
    bs += list(ref.edge_side[keep])
    bg += [False] * int(keep.sum())
    bx.append(ref.edge_xp[keep])

    core_tree = cKDTree(core_v)
    offset = len(core_v)
    max_area = 0.5 * hn * hn
    for side in family.oscillating:
        ch = family.chart(side)
        xp_core, s_core = ch.phi_inverse(core_v)
        on_iface = np.abs(s_core + depth) < 1e-12
        iface_ids = np.flatnonzero(on_iface)
        iface_ids = iface_ids[np.argsort(xp_core[iface_ids])]
        pts, ni, nr, nc = _band_polygon(family, side, eps, h, xp_core[iface_ids], depth, hn)
        bv, bt = _triangulate_band(pts, max_area, MIN_ANGLE)
        nb_in = len(pts)
        movable = np.zeros(len(bv), bool)
        movable[nb_in:] = True
        if smooth:
            bv = _smooth(bv, bt, movable)
        phys = ch.phi(bv[:, 0], bv[:, 1])
        # index map: interface -> core ids, rest -> new ids
        gid = np.empty(len(bv), np.int64)
        gid[:ni] = iface_ids
        rest = np.arange(ni, len(bv))
        gid[rest] = offset + np.arange(len(rest))
        d, _ = core_tree.query(phys[ni:])
        if np.any(d < 1e-12):
            raise MeshingError("band vertex duplicates a core vertex")
        verts.append(phys[ni:])
        offset += len(rest)
        t = gid[bt]
        tris.append(t)
        # boundary edges of the band polygon (everything except the interface)
        loop = np.concatenate([np.arange(ni - 1, nb_in), [0]])  # last iface .. end, back to first
        seg = np.column_stack([loop[:-1], loop[1:]])
        for a_, b_ in seg:
            pa, pb = bv[a_], bv[b_]
            on_graph = (ni + nr <= a_ < ni + nr + nc) and (ni + nr <= b_ < ni + nr + nc)
            if on_graph:
                tag = side
                xp_pair = (pa[0], pb[0])
            else:
                # lateral side: which neighbouring side of the rectangle?
                mid = ch.phi(np.array([0.5 * (pa[0] + pb[0])]), np.array([0.5 * (pa[1] + pb[1])]))[0]
                tag = _nearest_side(family, mid, exclude=side)
                xq, _ = family.chart(tag).phi_inverse(ch.phi(np.array([pa[0], pb[0]]), np.array([pa[1], pb[1]])))
                xp_pair = tuple(xq)
            be.append(np.array([[gid[a_], gid[b_]]]))
            bs.append(tag)
            bg.append(bool(on_graph))
            bx.append(np.array([xp_pair]))

    V = np.vstack(verts)
    T = np.vstack(tris)
    # counterclockwise orientation
    p = V[T]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    neg = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    T[neg] = T[neg][:, [0, 2, 1]]
    mesh = TriMesh(
        vertices=V,
        triangles=T,
        boundary_edges=np.vstack(be).astype(np.int64),
        edge_side=np.array(bs),
        edge_graph=np.array(bg, bool),
        edge_xp=np.vstack(bx).astype(float),
        h=h,
        eps=eps,
        family=family,
        band_depth=depth,
        n_core=ref.n_core,
    )
    if validate:
        mesh.validate()
    return mesh


def _nearest_side(family: DomainFamily, p, exclude: str) -> str:
    best, dist = None, np.inf
    for name, ch in family.charts.items():
        if name == exclude:
            continue
        _, s = ch.phi_inverse(p[None, :])
        if abs(s[0]) < dist:
            best, dist = name, abs(s[0])
    return best


def _relabel(ref: TriMesh, eps: float) -> TriMesh:
    return TriMesh(ref.vertices, ref.triangles, ref.boundary_edges, ref.edge_side, ref.edge_graph,
                   ref.edge_xp, ref.h, eps, ref.family, ref.band_depth, ref.n_core)


# -- point location and P1 interpolation -----------------------------------


class Locator:
    """Bucket-grid point location on a triangle mesh."""

    def __init__(self, mesh: TriMesh):
        V, T = mesh.vertices, mesh.triangles
        self.mesh = mesh
        P = V[T]
        lo, hi = P.min(axis=1), P.max(axis=1)
        self.origin = V.min(axis=0) - 1e-9
        extent = V.max(axis=0) + 1e-9 - self.origin
        nb = max(1, int(math.sqrt(len(T) / 2.0)))
        self.nb = nb
        self.cell = extent / nb
        i0 = np.clip(np.floor((lo - self.origin) / self.cell).astype(int), 0, nb - 1)
        i1 = np.clip(np.floor((hi - self.origin) / self.cell).astype(int), 0, nb - 1)
        cells, owners = [], []
        span = (i1 - i0).max(axis=0)
        for dx in range(span[0] + 1):
            for dy in range(span[1] + 1):
                ok = (i0[:, 0] + dx <= i1[:, 0]) & (i0[:, 1] + dy <= i1[:, 1])
                idx = np.flatnonzero(ok)
                cells.append((i0[idx, 0] + dx) * nb + (i0[idx, 1] + dy))
                owners.append(idx)
        cells = np.concatenate(cells)
        owners = np.concatenate(owners)
        order = np.lexsort((owners, cells))
        self.cell_tris = owners[order]
        self.ptr = np.searchsorted(cells[order], np.arange(nb * nb + 1))
        # affine maps to barycentric coordinates
        d1 = P[:, 1] - P[:, 0]
        d2 = P[:, 2] - P[:, 0]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        if np.any(det == 0):
            raise LocatorError("degenerate triangle in mesh")
        self.v0 = P[:, 0]
        self.inv = np.stack([np.stack([d2[:, 1], -d2[:, 0]], -1),
                             np.stack([-d1[:, 1], d1[:, 0]], -1)], 1) / det[:, None, None]
        self.tree = cKDTree(V)

    def barycentric(self, tri, pts):
        r = pts - self.v0[tri]
        l12 = np.einsum("nij,nj->ni", self.inv[tri], r)
        return np.column_stack([1.0 - l12.sum(axis=1), l12])

    def locate(self, pts):
        """Best containing triangle for each point.

        Returns ``(tri, bary, score)``; ``score`` is the smallest barycentric
        coordinate (negative outside), ``tri = -1`` when no candidate exists.
        """
        pts = np.atleast_2d(np.asarray(pts, float))
        q = len(pts)
        ij = np.floor((pts - self.origin) / self.cell).astype(int)
        inside_box = np.all((ij >= 0) & (ij < self.nb), axis=1)
        ij = np.clip(ij, 0, self.nb - 1)
        c = ij[:, 0] * self.nb + ij[:, 1]
        counts = np.where(inside_box, self.ptr[c + 1] - self.ptr[c], 0)
        rep = np.repeat(np.arange(q), counts)
        starts = np.repeat(self.ptr[c], counts)
        within = np.arange(len(rep)) - np.repeat(np.cumsum(counts) - counts, counts)
        cand = self.cell_tris[starts + within]
        bary = self.barycentric(cand, pts[rep])
        score = bary.min(axis=1)
        tri = np.full(q, -1, np.int64)
        best_bary = np.zeros((q, 3))
        best_score = np.full(q, -np.inf)
        if len(rep):
            order = np.lexsort((cand, -score, rep))
            first = np.ones(len(order), bool)
            first[1:] = rep[order][1:] != rep[order][:-1]
            sel = order[first]
            tri[rep[sel]] = cand[sel]
            best_bary[rep[sel]] = bary[sel]
            best_score[rep[sel]] = score[sel]
        return tri, best_bary, best_score


def interpolation_matrix(mesh: TriMesh, pts, tol: float = 1e-10):
    """Sparse P1 evaluation matrix at ``pts`` and the exterior flag.

    Points coinciding with a mesh vertex get that vertex with weight 1
    exactly.  Points outside every triangle by more than ``tol`` (in
    barycentric units) get an empty row and are flagged.
    """
    pts = np.atleast_2d(np.asarray(pts, float))
    loc = mesh.locator
    q = len(pts)
    d, nearest = loc.tree.query(pts)
    snap = d <= 1e-13 * max(1.0, float(np.abs(mesh.vertices).max()))
    tri, bary, score = loc.locate(pts)
    exterior = (~snap) & ((tri < 0) | (score < -tol))
    bary = np.clip(bary, 0.0, None)
    s = bary.sum(axis=1, keepdims=True)
    s[s == 0] = 1.0
    bary = bary / s
    rows, cols, vals = [], [], []
    ok = (~snap) & (~exterior)
    idx = np.flatnonzero(ok)
    rows.append(np.repeat(idx, 3))
    cols.append(mesh.triangles[tri[idx]].ravel())
    vals.append(bary[idx].ravel())
    sidx = np.flatnonzero(snap)
    rows.append(sidx)
    cols.append(nearest[sidx])
    vals.append(np.ones(len(sidx)))
    R = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(q, mesh.n_vertices))
    R.eliminate_zeros()
    R.sort_indices()
    return R, exterior


def interpolate(mesh: TriMesh, values, pts, tol: float = 1e-10):
    """Barycentric P1 interpolation; exterior points return NaN and are flagged."""
    R, exterior = interpolation_matrix(mesh, pts, tol)
    out = R @ np.asarray(values, float)
    out[exterior] = np.nan
    return out, exterior
