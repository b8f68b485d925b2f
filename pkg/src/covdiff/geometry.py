"""Triangle meshes, point clouds, OBJ subset I/O, synthetic shapes and the
point-to-segment distance used by the coverage metrics."""

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np


class ParseError(ValueError):
    def __init__(self, lineno, msg):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Vertices ``(V, 3)`` float64 and faces ``(F, 3)`` int64, 0-based."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError(f"face index out of range for {len(v)} vertices")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite vertex coordinate")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_faces(self):
        return len(self.faces)

    def triangles(self):
        """``(F, 3, 3)`` array of face corner coordinates."""
        return self.vertices[self.faces]

    def centroids(self):
        return self.triangles().mean(axis=1)

    def areas(self):
        tri = self.triangles()
        cr = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return 0.5 * np.linalg.norm(cr, axis=1)

    def total_area(self):
        return float(self.areas().sum())

    def structurally_equal(self, other, atol=0.0):
        return (
            self.vertices.shape == other.vertices.shape
            and np.array_equal(self.faces, other.faces)
            and np.allclose(self.vertices, other.vertices, rtol=0.0, atol=atol)
        )


def face_centroid(mesh, face_index):
    return mesh.vertices[mesh.faces[face_index]].mean(axis=0)


def face_area(mesh, face_index):
    a, b, c = mesh.vertices[mesh.faces[face_index]]
    return 0.5 * float(np.linalg.norm(np.cross(b - a, c - a)))


# --------------------------------------------------------------------------
# OBJ subset: "v x y z", "f i j k" (1-based), "#" comments, blank lines


def parse_obj(text):
    verts, faces = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *rest = line.split()
        if tag == "v":
            if len(rest) != 3:
                raise ParseError(lineno, f"vertex needs 3 coordinates, got {len(rest)}")
            try:
                xyz = [float(s) for s in rest]
            except ValueError:
                raise ParseError(lineno, f"bad vertex coordinate in {raw!r}") from None
            if not all(math.isfinite(c) for c in xyz):
                raise ParseError(lineno, "non-finite vertex coordinate")
            verts.append(xyz)
        elif tag == "f":
            if len(rest) != 3:
                raise ParseError(lineno, f"only triangles are supported, got {len(rest)} indices")
            try:
                # tolerate "i/t/n" forms by keeping the vertex index
                idx = [int(s.split("/", 1)[0]) for s in rest]
            except ValueError:
                raise ParseError(lineno, f"bad face index in {raw!r}") from None
            for i in idx:
                if i < 1 or i > len(verts):
                    raise ParseError(lineno, f"face index {i} out of range (have {len(verts)} vertices)")
            faces.append([i - 1 for i in idx])
        else:
            raise ParseError(lineno, f"unsupported record {tag!r}")
    return TriMesh(np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def write_obj(mesh):
    lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    return "\n".join(lines) + "\n"


def read_obj(path):
    with open(path, encoding="utf-8") as fh:
        return parse_obj(fh.read())


# --------------------------------------------------------------------------
# point-segment distance


def point_segment_distance(c, p_s, p_e):
    """Distance from ``c`` to segment ``p_s -> p_e`` and the clipped projection
    parameter ``t*`` in [0, 1]. A zero-length segment gives ``t* = 0``."""
    c = np.asarray(c, dtype=np.float64)
    p_s = np.asarray(p_s, dtype=np.float64)
    p_e = np.asarray(p_e, dtype=np.float64)
    d2, t = segment_distance_sq(c[None], p_s[None], p_e[None])
    return float(np.sqrt(d2[0])), float(t[0])


def segment_distance_sq(c, p_s, p_e):
    """Vectorised squared point-segment distance, broadcasting over leading axes.

    Components are combined explicitly (no reductions) so that any two calls
    see bitwise-identical arithmetic for the same (point, segment) pair.
    """
    ex = p_e[..., 0] - p_s[..., 0]
    ey = p_e[..., 1] - p_s[..., 1]
    ez = p_e[..., 2] - p_s[..., 2]
    wx = c[..., 0] - p_s[..., 0]
    wy = c[..., 1] - p_s[..., 1]
    wz = c[..., 2] - p_s[..., 2]
    ee = ex * ex + ey * ey + ez * ez
    we = wx * ex + wy * ey + wz * ez
    degenerate = ee == 0.0
    t = np.where(degenerate, 0.0, we / np.where(degenerate, 1.0, ee))
    t = np.clip(t, 0.0, 1.0)
    dx = wx - t * ex
    dy = wy - t * ey
    dz = wz - t * ez
    return dx * dx + dy * dy + dz * dz, t


# --------------------------------------------------------------------------
# sampling, synthetic shapes, normalisation


def sample_surface(mesh, n, seed):
    """``n`` points drawn by area-weighted face choice and uniform barycentrics."""
    from .numkernel import Rng

    areas = mesh.areas()
    total = areas.sum()
    if not total > 0:
        raise ValueError("cannot sample a mesh with zero total area")
    rng = Rng(seed)
    cdf = np.cumsum(areas) / total
    cdf[-1] = 1.0
    faces = np.searchsorted(cdf, rng.uniform(n), side="right")
    faces = np.minimum(faces, len(areas) - 1)
    r1 = np.sqrt(rng.uniform(n))
    r2 = rng.uniform(n)
    tri = mesh.triangles()[faces]
    w0 = 1.0 - r1
    w1 = r1 * (1.0 - r2)
    w2 = r1 * r2
    return w0[:, None] * tri[:, 0] + w1[:, None] * tri[:, 1] + w2[:, None] * tri[:, 2]


def _grid_panel(origin, u, v, nu, nv):
    """Rectangle ``origin + a*u + b*v`` (a, b in [0, 1]) split into nu x nv cells,
    two triangles each, wound so that the normal is ``u x v``."""
    a = np.linspace(0.0, 1.0, nu + 1)
    b = np.linspace(0.0, 1.0, nv + 1)
    A, B = np.meshgrid(a, b, indexing="ij")
    verts = origin + A.reshape(-1, 1) * u + B.reshape(-1, 1) * v
    faces = []
    for i in range(nu):
        for j in range(nv):
            p = i * (nv + 1) + j
            q = (i + 1) * (nv + 1) + j
            faces.append([p, q, q + 1])
            faces.append([p, q + 1, p + 1])
    return verts, np.array(faces, dtype=np.int64)


def _merge(parts):
    verts, faces, off = [], [], 0
    for v, f in parts:
        verts.append(v)
        faces.append(f + off)
        off += len(v)
    v = np.concatenate(verts)
    f = np.concatenate(faces)
    # weld coincident vertices so that panels share their edges
    key = np.round(v, 12)
    uniq, inverse = np.unique(key, axis=0, return_inverse=True)
    first = np.full(len(uniq), -1)
    order = []
    for i, u in enumerate(inverse.ravel()):
        if first[u] < 0:
            first[u] = len(order)
            order.append(i)
    remap = first[inverse.ravel()]
    return TriMesh(v[order], remap[f])


def _check_positive(**dims):
    for name, val in dims.items():
        if not val > 0:
            raise ValueError(f"{name} must be positive, got {val}")


def make_cuboid(w, h, d, divisions=1):
    """Axis-aligned box ``[0,w] x [0,h] x [0,d]`` with outward-wound faces.

    ``divisions=1`` gives the minimal 8-vertex, 12-face box; larger values
    subdivide each side into a ``divisions x divisions`` grid.
    """
    _check_positive(w=w, h=h, d=d)
    n = int(divisions)
    if n < 1:
        raise ValueError(f"divisions must be >= 1, got {divisions}")
    X, Y, Z = np.array([w, 0, 0.0]), np.array([0, h, 0.0]), np.array([0, 0, d * 1.0])
    o = np.zeros(3)
    panels = [
        _grid_panel(o, Y, X, n, n),          # z = 0, normal -z
        _grid_panel(o + Z, X, Y, n, n),      # z = d, normal +z
        _grid_panel(o, X, Z, n, n),          # y = 0, normal -y
        _grid_panel(o + Y, Z, X, n, n),      # y = h, normal +y
        _grid_panel(o, Z, Y, n, n),          # x = 0, normal -x
        _grid_panel(o + X, Y, Z, n, n),      # x = w, normal +x
    ]
    return _merge(panels)


def make_frame(outer, inner, thickness, divisions=1):
    """Square window-like frame in the xy-plane, centred on the origin, spanning
    ``z in [0, thickness]``: front and back rings plus outer and inner walls."""
    _check_positive(outer=outer, inner=inner, thickness=thickness)
    if not inner < outer:
        raise ValueError(f"inner ({inner}) must be smaller than outer ({outer})")
    n = int(divisions)
    ho, hi = outer / 2.0, inner / 2.0
    band = (outer - inner) / 2.0
    X, Y, Z = np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), np.array([0, 0, thickness * 1.0])
    parts = []
    for z, front in ((thickness, True), (0.0, False)):
        base = np.array([0, 0, z])
        # four bars: bottom and top span full width, left and right fill between
        bars = [
            (np.array([-ho, -ho, 0]), outer * X, band * Y),
            (np.array([-ho, hi, 0]), outer * X, band * Y),
            (np.array([-ho, -hi, 0]), band * X, inner * Y),
            (np.array([hi, -hi, 0]), band * X, inner * Y),
        ]
        for o, u, v in bars:
            if front:
                parts.append(_grid_panel(base + o, u, v, n, n))
            else:
                parts.append(_grid_panel(base + o, v, u, n, n))
    # walls: outer faces outward, inner faces into the opening
    for half, sign in ((ho, 1.0), (hi, -1.0)):
        corners = [np.array([-half, -half, 0]), np.array([half, -half, 0]),
                   np.array([half, half, 0]), np.array([-half, half, 0])]
        for k in range(4):
            a, b = corners[k], corners[(k + 1) % 4]
            if sign > 0:
                parts.append(_grid_panel(a, b - a, Z, n, 1))
            else:
                parts.append(_grid_panel(a, Z, b - a, 1, n))
    return _merge(parts)


def frame_area(outer, inner, thickness):
    return 2.0 * (outer**2 - inner**2) + 4.0 * thickness * (outer + inner)


def _bbox(points):
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    return lo, hi


def normalize_to_unit(obj):
    """Centre the bounding box at the origin and scale its largest extent to 1.

    Accepts a point array or a :class:`TriMesh`; returns ``(copy, scale, offset)``
    such that ``copy = (x - offset) / scale``.
    """
    pts = obj.vertices if isinstance(obj, TriMesh) else np.asarray(obj, dtype=np.float64)
    lo, hi = _bbox(pts)
    scale = float((hi - lo).max())
    if not scale > 0:
        raise ValueError("cannot normalise an input with zero extent")
    offset = (lo + hi) / 2.0
    out = (pts - offset) / scale
    if isinstance(obj, TriMesh):
        out = TriMesh(out, obj.faces.copy())
    return out, scale, offset


def denormalize(obj, scale, offset):
    if isinstance(obj, TriMesh):
        return TriMesh(obj.vertices * scale + offset, obj.faces.copy())
    return np.asarray(obj, dtype=np.float64) * scale + np.asarray(offset)


# --------------------------------------------------------------------------
# broad phase


class SegmentGrid:
    """Uniform hash grid over segments, each stored in every cell touched by its
    bounding box inflated by ``radius``."""

    def __init__(self, starts, ends, cell_size, radius):
        if not cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {cell_size}")
        self.starts = np.asarray(starts, dtype=np.float64).reshape(-1, 3)
        self.ends = np.asarray(ends, dtype=np.float64).reshape(-1, 3)
        self.cell_size = float(cell_size)
        self.radius = float(radius)
        self.cells = defaultdict(list)
        if len(self.starts) == 0:
            return
        # pad the inflation slightly so rounding never shrinks a box
        pad = self.radius * (1.0 + 1e-9) + 1e-12
        lo = np.minimum(self.starts, self.ends) - pad
        hi = np.maximum(self.starts, self.ends) + pad
        clo = np.floor(lo / self.cell_size).astype(np.int64)
        chi = np.floor(hi / self.cell_size).astype(np.int64)
        for s in range(len(self.starts)):
            (x0, y0, z0), (x1, y1, z1) = clo[s], chi[s]
            for i in range(x0, x1 + 1):
                for j in range(y0, y1 + 1):
                    for k in range(z0, z1 + 1):
                        self.cells[(i, j, k)].append(s)

    def cell_of(self, point):
        return tuple(int(v) for v in np.floor(np.asarray(point) / self.cell_size))

    def query_candidates(self, point, radius=None):
        """Indices of segments that may lie within ``radius`` of ``point``.

        For ``radius`` up to the build radius only the point's own cell needs
        to be read; larger radii scan the surrounding block of cells.
        """
        radius = self.radius if radius is None else float(radius)
        extra = max(0.0, radius - self.radius)
        if extra == 0.0:
            return sorted(self.cells.get(self.cell_of(point), ()))
        p = np.asarray(point, dtype=np.float64)
        lo = np.floor((p - extra) / self.cell_size).astype(np.int64)
        hi = np.floor((p + extra) / self.cell_size).astype(np.int64)
        found = set()
        for i in range(lo[0], hi[0] + 1):
            for j in range(lo[1], hi[1] + 1):
                for k in range(lo[2], hi[2] + 1):
                    found.update(self.cells.get((i, j, k), ()))
        return sorted(found)


def build_segment_grid(starts, ends, cell_size, radius=None):
    """Grid with the default query radius equal to ``cell_size`` unless given."""
    return SegmentGrid(starts, ends, cell_size, cell_size if radius is None else radius)


def query_candidates(grid, point, radius=None):
    return grid.query_candidates(point, radius)
