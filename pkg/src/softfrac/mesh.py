"""Structured Q4/H8 meshes with banded refinement.

The generator builds tensor-product grids, so conformity is automatic:
inside each requested refinement band the axis spacing honors the target
edge length, and the spacing doubles layer by layer away from the band
until the base resolution is reached.  Boundary node sets on the six box
faces are created automatically; face sets for surface loads and ad-hoc
node sets come from coordinate predicates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _csgraph_components

from .errors import MeshError

__all__ = [
    "Mesh",
    "RefineBand",
    "generate_structured_mesh",
    "write_mesh",
    "read_mesh",
]

# Local corner numbering of element faces, outward normals on a regular grid.
H8_FACES = (
    (0, 3, 2, 1),  # z min
    (4, 5, 6, 7),  # z max
    (0, 1, 5, 4),  # y min
    (3, 7, 6, 2),  # y max
    (1, 2, 6, 5),  # x max
    (0, 4, 7, 3),  # x min
)
Q4_EDGES = ((0, 1), (1, 2), (2, 3), (3, 0))


@dataclass
class RefineBand:
    """Axis-aligned box refined until edge lengths drop below ``target``."""

    lower: tuple
    upper: tuple
    target: float


@dataclass
class Mesh:
    """Reference-configuration mesh for the mixed formulation.

    Attributes
    ----------
    nodes : ndarray, (n_nodes, dim)
    elements : ndarray, (n_elems, 4 or 8) int
    kind : str, "Q4" or "H8"
    boundary_sets : dict name -> node index array
    face_sets : dict name -> (n, 2) array of (element, local face) pairs
    interface_tag : per-element material-region id (0 = bulk)
    deleted : per-element deletion flag
    """

    nodes: np.ndarray
    elements: np.ndarray
    kind: str
    boundary_sets: dict = field(default_factory=dict)
    face_sets: dict = field(default_factory=dict)
    interface_tag: np.ndarray = None
    deleted: np.ndarray = None

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.elements = np.asarray(self.elements, dtype=np.int64)
        if self.kind not in ("Q4", "H8"):
            raise MeshError(f"unsupported element kind {self.kind!r}")
        if self.elements.size and (
            self.elements.min() < 0 or self.elements.max() >= len(self.nodes)
        ):
            raise MeshError("connectivity index out of range")
        if self.interface_tag is None:
            self.interface_tag = np.zeros(len(self.elements), dtype=np.int64)
        if self.deleted is None:
            self.deleted = np.zeros(len(self.elements), dtype=bool)

    @property
    def dim(self):
        return self.nodes.shape[1]

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_elements(self):
        return len(self.elements)

    def live_elements(self):
        """Indices of elements not flagged as deleted."""
        return np.flatnonzero(~self.deleted)

    def element_centroids(self):
        return self.nodes[self.elements].mean(axis=1)

    def select_nodes(self, lower, upper, tol=1.0e-9):
        """Node ids inside the closed box [lower, upper] (inflated by tol)."""
        lo = np.asarray(lower, dtype=float) - tol
        hi = np.asarray(upper, dtype=float) + tol
        mask = np.all((self.nodes >= lo) & (self.nodes <= hi), axis=1)
        return np.flatnonzero(mask)

    def nodes_on_plane(self, axis, value, tol=1.0e-9):
        return np.flatnonzero(np.abs(self.nodes[:, axis] - value) < tol)

    def select_faces(self, axis, value, lower=None, upper=None, tol=1.0e-9):
        """Boundary faces lying on the plane ``axis = value``.

        Optionally restricted to faces whose centroid falls inside the box
        [lower, upper].  Returns an (n, 2) array of (element, local_face).
        """
        faces = H8_FACES if self.kind == "H8" else Q4_EDGES
        out = []
        coords = self.nodes
        for e, conn in enumerate(self.elements):
            for fid, loc in enumerate(faces):
                pts = coords[conn[list(loc)]]
                if np.all(np.abs(pts[:, axis] - value) < tol):
                    c = pts.mean(axis=0)
                    if lower is not None:
                        lo = np.asarray(lower) - tol
                        hi = np.asarray(upper) + tol
                        if not np.all((c >= lo) & (c <= hi)):
                            continue
                    out.append((e, fid))
        return np.asarray(out, dtype=np.int64).reshape(-1, 2)

    def connected_components(self, live_only=True):
        """Number of components of the element graph (shared-node adjacency)."""
        elems = self.live_elements() if live_only else np.arange(self.n_elements)
        if elems.size == 0:
            return 0, np.array([], dtype=int)
        conn = self.elements[elems]
        n_loc = len(elems)
        rows = np.repeat(np.arange(n_loc), conn.shape[1])
        cols = conn.ravel()
        incidence = coo_matrix(
            (np.ones(rows.size), (rows, cols)), shape=(n_loc, self.n_nodes)
        ).tocsr()
        adj = incidence @ incidence.T
        n_comp, labels = _csgraph_components(adj, directed=False)
        return n_comp, labels


def _merge_intervals(intervals):
    """Merge overlapping (a, b, target) intervals keeping the finest target."""
    events = sorted(intervals)
    merged = []
    for a, b, t in events:
        if merged and a <= merged[-1][1] + 1.0e-12:
            pa, pb, pt = merged.pop()
            merged.append((pa, max(pb, b), min(pt, t)))
        else:
            merged.append((a, b, t))
    return merged


def _graded_axis(lo, hi, n_base, fine):
    """1-D breakpoints: fine spacing inside bands, doubling layers outside."""
    length = hi - lo
    h0 = length / n_base
    fine = [(a, b, t) for a, b, t in fine if t < h0 * (1.0 - 1.0e-12)]
    if not fine:
        return np.linspace(lo, hi, n_base + 1)
    for a, b, t in fine:
        if t <= 0.0:
            raise MeshError("refinement target must be positive")
        if a < lo - 1.0e-9 or b > hi + 1.0e-9 or b <= a:
            raise MeshError("refinement band outside the domain")
    fine = _merge_intervals(fine)

    pts = [lo]

    def fill_gap(a, b, h_left, h_right):
        """Populate (a, b) with doubling layers from each end, h0 in between."""
        gap = b - a
        if gap <= 1.0e-12:
            return []
        left, right = [], []
        x, s = a, h_left
        while s < h0 * (1.0 - 1.0e-12):
            if x + s > a + 0.5 * gap:
                break
            x += s
            left.append(x)
            s *= 2.0
        y, s = b, h_right
        while s < h0 * (1.0 - 1.0e-12):
            if y - s < x + 0.25 * s:
                break
            y -= s
            right.insert(0, y)
            s *= 2.0
        mid = (right[0] if right else b) - (left[-1] if left else a)
        n_mid = max(1, int(round(mid / h0)))
        start = left[-1] if left else a
        stop = right[0] if right else b
        middle = list(np.linspace(start, stop, n_mid + 1)[1:-1])
        return left + middle + right

    cursor = lo
    entry_h = h0
    for a, b, t in fine:
        n_band = max(1, int(np.ceil((b - a) / t * (1.0 - 1.0e-12))))
        hb = (b - a) / n_band
        pts.extend(fill_gap(cursor, a, entry_h, hb))
        if a > cursor + 1.0e-12:
            pts.append(a)
        pts.extend(np.linspace(a, b, n_band + 1)[1:])
        cursor = b
        entry_h = hb
    pts.extend(fill_gap(cursor, hi, entry_h, h0))
    if hi > cursor + 1.0e-12:
        pts.append(hi)

    arr = np.array(sorted(set(np.round(np.asarray(pts), 12))))
    if arr[0] != lo:
        arr[0] = lo
    if arr[-1] != hi:
        arr[-1] = hi
    if np.any(np.diff(arr) <= 0):
        raise MeshError("graded axis produced a degenerate spacing")
    return arr


def generate_structured_mesh(domain, divisions, refine_bands=()):
    """Build a conforming Q4/H8 tensor-product mesh with graded bands.

    Parameters
    ----------
    domain : ((lo...), (hi...))
        Box extents in mm; a 2-tuple of dim-length sequences.
    divisions : sequence of int
        Base element counts per axis (>= 1 each).
    refine_bands : sequence of RefineBand
        Boxes refined until their element edges are <= the band target.

    Returns
    -------
    Mesh
        With boundary node sets xmin/xmax/ymin/ymax (plus zmin/zmax in 3D).
    """
    lower, upper = (np.asarray(v, dtype=float) for v in domain)
    dim = lower.size
    if dim not in (2, 3):
        raise MeshError("only 2-D (Q4) and 3-D (H8) domains are supported")
    divisions = np.asarray(divisions, dtype=int)
    if divisions.size != dim or np.any(divisions < 1):
        raise MeshError("divisions must give a count >= 1 per axis")

    axes = []
    for k in range(dim):
        fine = [
            (float(b.lower[k]), float(b.upper[k]), float(b.target))
            for b in refine_bands
        ]
        axes.append(_graded_axis(lower[k], upper[k], divisions[k], fine))

    if dim == 2:
        xs, ys = axes
        nx, ny = len(xs) - 1, len(ys) - 1
        X, Y = np.meshgrid(xs, ys, indexing="xy")
        nodes = np.column_stack([X.ravel(), Y.ravel()])
        i = np.arange(nx)
        j = np.arange(ny)
        I, J = np.meshgrid(i, j, indexing="xy")
        n0 = J * (nx + 1) + I
        elements = np.stack(
            [n0, n0 + 1, n0 + nx + 2, n0 + nx + 1], axis=-1
        ).reshape(-1, 4)
        kind = "Q4"
    else:
        xs, ys, zs = axes
        nx, ny, nz = len(xs) - 1, len(ys) - 1, len(zs) - 1
        # node id = (k * (ny+1) + j) * (nx+1) + i
        nodes = np.empty(((nx + 1) * (ny + 1) * (nz + 1), 3))
        for kk in range(nz + 1):
            for jj in range(ny + 1):
                base = (kk * (ny + 1) + jj) * (nx + 1)
                nodes[base : base + nx + 1, 0] = xs
                nodes[base : base + nx + 1, 1] = ys[jj]
                nodes[base : base + nx + 1, 2] = zs[kk]
        def nid(i, j, k):
            return (k * (ny + 1) + j) * (nx + 1) + i

        i = np.arange(nx)[:, None, None]
        j = np.arange(ny)[None, :, None]
        k = np.arange(nz)[None, None, :]
        elements = np.stack(
            [
                nid(i, j, k),
                nid(i + 1, j, k),
                nid(i + 1, j + 1, k),
                nid(i, j + 1, k),
                nid(i, j, k + 1),
                nid(i + 1, j, k + 1),
                nid(i + 1, j + 1, k + 1),
                nid(i, j + 1, k + 1),
            ],
            axis=-1,
        ).reshape(-1, 8)
        kind = "H8"

    mesh = Mesh(nodes=nodes, elements=elements, kind=kind)
    names = ("xmin", "xmax", "ymin", "ymax", "zmin", "zmax")[: 2 * dim]
    for k in range(dim):
        mesh.boundary_sets[names[2 * k]] = mesh.nodes_on_plane(k, lower[k])
        mesh.boundary_sets[names[2 * k + 1]] = mesh.nodes_on_plane(k, upper[k])

    _check_bands(mesh, refine_bands)
    return mesh


def _check_bands(mesh, bands):
    """Verify every element inside a band honors the target edge length."""
    if not bands:
        return
    conn = mesh.nodes[mesh.elements]
    centroid = conn.mean(axis=1)
    edge = conn.max(axis=1) - conn.min(axis=1)
    for band in bands:
        lo = np.asarray(band.lower, dtype=float) - 1.0e-9
        hi = np.asarray(band.upper, dtype=float) + 1.0e-9
        inside = np.all((centroid >= lo) & (centroid <= hi), axis=1)
        if inside.any() and edge[inside].max() > band.target * (1.0 + 1.0e-6):
            raise MeshError(
                f"band target {band.target} not attained "
                f"(max edge {edge[inside].max():.4g})"
            )


def write_mesh(mesh, path):
    """Plain-text export: header with counts, coordinates, connectivity."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.kind} {mesh.n_nodes} {mesh.n_elements} {mesh.dim}\n")
        for x in mesh.nodes:
            fh.write(" ".join(f"{v:.12g}" for v in x) + "\n")
        for conn, tag in zip(mesh.elements, mesh.interface_tag):
            fh.write(" ".join(str(int(v)) for v in conn) + f" {int(tag)}\n")


def read_mesh(path):
    """Inverse of :func:`write_mesh`."""
    with open(path) as fh:
        kind, n_nodes, n_elems, dim = fh.readline().split()
        n_nodes, n_elems, dim = int(n_nodes), int(n_elems), int(dim)
        nodes = np.array(
            [[float(v) for v in fh.readline().split()] for _ in range(n_nodes)]
        )
        rows = [[int(v) for v in fh.readline().split()] for _ in range(n_elems)]
    rows = np.asarray(rows, dtype=np.int64)
    mesh = Mesh(nodes=nodes, elements=rows[:, :-1], kind=kind)
    mesh.interface_tag = rows[:, -1].copy()
    return mesh
