"""Planar domains, triangulation and quadrature.

Domains are described analytically (disks, ellipses, rectangles, polygons)
with zero or more holes.  Meshes are P1 triangulations whose boundary nodes
lie exactly on the analytic curves; the boundary itself is approximated by
the chords between them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .errors import DeltaTooLarge, InvalidDomain, MeshFailure, NonFiniteIntegrand

INTERIOR = -1
OUTER = 0


def hole_marker(k: int) -> int:
    return k + 1


# ---------------------------------------------------------------------------
# boundary curves


class BoundaryCurve:
    """Closed C^0 curve with a counterclockwise parametrisation."""

    kind = "curve"

    def area(self) -> float:
        raise NotImplementedError

    def perimeter(self) -> float:
        raise NotImplementedError

    def sample(self, spacing: float) -> np.ndarray:
        """Points on the curve, counterclockwise, arc-length spacing <= `spacing`."""
        raise NotImplementedError

    def contains(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def distance(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def ray_hits(self, q: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Positive distances along rays ``q + t*dir`` at which the curve is crossed.

        Returns an ``(n_dirs, k)`` array padded with ``inf``.
        """
        raise NotImplementedError

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Disk(BoundaryCurve):
    center: tuple = (0.0, 0.0)
    radius: float = 1.0
    kind = "disk"

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidDomain("disk radius must be positive")

    @property
    def c(self):
        return np.asarray(self.center, dtype=float)

    def area(self):
        return math.pi * self.radius**2

    def perimeter(self):
        return 2 * math.pi * self.radius

    def sample(self, spacing):
        n = max(8, int(math.ceil(self.perimeter() / spacing)))
        t = 2 * math.pi * np.arange(n) / n
        return self.c + self.radius * np.column_stack([np.cos(t), np.sin(t)])

    def contains(self, pts):
        d = np.asarray(pts, dtype=float) - self.c
        return np.einsum("...i,...i->...", d, d) < self.radius**2

    def distance(self, pts):
        d = np.asarray(pts, dtype=float) - self.c
        return np.abs(np.linalg.norm(d, axis=-1) - self.radius)

    def ray_hits(self, q, dirs):
        w = np.asarray(q, dtype=float) - self.c
        b = dirs @ w
        cc = w @ w - self.radius**2
        disc = b * b - cc
        out = np.full((len(dirs), 2), np.inf)
        ok = disc > 0
        s = np.sqrt(np.where(ok, disc, 0.0))
        for j, t in enumerate((-b - s, -b + s)):
            out[:, j] = np.where(ok & (t > 1e-14), t, np.inf)
        return out

    def bbox(self):
        return self.c - self.radius, self.c + self.radius

    def to_dict(self):
        return {"type": "disk", "center": list(map(float, self.center)), "radius": float(self.radius)}


@dataclass(frozen=True)
class Ellipse(BoundaryCurve):
    a: float = 1.0
    b: float = 1.0
    center: tuple = (0.0, 0.0)
    kind = "ellipse"

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise InvalidDomain("ellipse semi-axes must be positive")

    @property
    def c(self):
        return np.asarray(self.center, dtype=float)

    def area(self):
        return math.pi * self.a * self.b

    def _param_table(self, n=20000):
        t = np.linspace(0.0, 2 * math.pi, n + 1)
        xy = np.column_stack([self.a * np.cos(t), self.b * np.sin(t)])
        seg = np.linalg.norm(np.diff(xy, axis=0), axis=1)
        return t, np.concatenate([[0.0], np.cumsum(seg)])

    def perimeter(self):
        return float(self._param_table()[1][-1])

    def sample(self, spacing):
        t, s = self._param_table()
        n = max(8, int(math.ceil(s[-1] / spacing)))
        tt = np.interp(np.arange(n) * s[-1] / n, s, t)
        return self.c + np.column_stack([self.a * np.cos(tt), self.b * np.sin(tt)])

    def contains(self, pts):
        d = np.asarray(pts, dtype=float) - self.c
        return (d[..., 0] / self.a) ** 2 + (d[..., 1] / self.b) ** 2 < 1.0

    def distance(self, pts):
        pts = np.asarray(pts, dtype=float)
        d = pts.reshape(-1, 2) - self.c
        # start from the nearest of 4096 samples, then Newton on the foot-point condition
        t0 = 2 * math.pi * np.arange(4096) / 4096
        samp = np.column_stack([self.a * np.cos(t0), self.b * np.sin(t0)])
        t = t0[cKDTree(samp).query(d)[1]]
        a, b = self.a, self.b
        for _ in range(30):
            c, s = np.cos(t), np.sin(t)
            f = (b * b - a * a) * s * c + d[:, 0] * a * s - d[:, 1] * b * c
            fp = (b * b - a * a) * (c * c - s * s) + d[:, 0] * a * c + d[:, 1] * b * s
            step = f / np.where(np.abs(fp) > 1e-300, fp, 1e-300)
            t = t - np.clip(step, -0.1, 0.1)
            if np.max(np.abs(step)) < 1e-15:
                break
        foot = np.column_stack([a * np.cos(t), b * np.sin(t)])
        return np.linalg.norm(d - foot, axis=1).reshape(pts.shape[:-1])

    def ray_hits(self, q, dirs):
        w = np.asarray(q, dtype=float) - self.c
        scale = np.array([1 / self.a, 1 / self.b])
        ws, ds = w * scale, dirs * scale
        aa = np.einsum("ij,ij->i", ds, ds)
        bb = ds @ ws
        cc = ws @ ws - 1.0
        disc = bb * bb - aa * cc
        out = np.full((len(dirs), 2), np.inf)
        ok = disc > 0
        s = np.sqrt(np.where(ok, disc, 0.0))
        for j, t in enumerate(((-bb - s) / aa, (-bb + s) / aa)):
            out[:, j] = np.where(ok & (t > 1e-14), t, np.inf)
        return out

    def bbox(self):
        r = np.array([self.a, self.b])
        return self.c - r, self.c + r

    def to_dict(self):
        return {"type": "ellipse", "a": float(self.a), "b": float(self.b), "center": list(map(float, self.center))}


@dataclass(frozen=True)
class Polygon(BoundaryCurve):
    vertices: tuple = ()
    kind = "polygon"

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[0] < 3 or v.shape[1] != 2:
            raise InvalidDomain("polygon needs at least three 2-d vertices")
        if _signed_area(v) <= 0:
            raise InvalidDomain("polygon vertices must be counterclockwise")

    @property
    def v(self):
        return np.asarray(self.vertices, dtype=float)

    def area(self):
        return _signed_area(self.v)

    def perimeter(self):
        v = self.v
        return float(np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1).sum())

    def sample(self, spacing):
        v = self.v
        out = []
        for p0, p1 in zip(v, np.roll(v, -1, axis=0)):
            n = max(1, int(math.ceil(np.linalg.norm(p1 - p0) / spacing)))
            s = np.arange(n)[:, None] / n
            out.append(p0 + s * (p1 - p0))
        return np.vstack(out)

    def contains(self, pts):
        pts = np.asarray(pts, dtype=float)
        x, y = pts[..., 0][..., None], pts[..., 1][..., None]
        v = self.v
        x0, y0 = v[:, 0], v[:, 1]
        x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
        crosses = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        return (np.count_nonzero(crosses & (x < xint), axis=-1) % 2) == 1

    def distance(self, pts):
        return _polyline_distance(np.asarray(pts, dtype=float), self.v)

    def ray_hits(self, q, dirs):
        v = self.v
        p0 = v
        e = np.roll(v, -1, axis=0) - v
        w = p0 - np.asarray(q, dtype=float)  # (E,2)
        # solve t*d - s*e = w
        den = dirs[:, 0:1] * (-e[None, :, 1]) - dirs[:, 1:2] * (-e[None, :, 0])
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (w[None, :, 0] * (-e[None, :, 1]) - w[None, :, 1] * (-e[None, :, 0])) / den
            s = (dirs[:, 0:1] * w[None, :, 1] - dirs[:, 1:2] * w[None, :, 0]) / den
        ok = (np.abs(den) > 1e-300) & (s >= 0) & (s < 1) & (t > 1e-14)
        return np.where(ok, t, np.inf)

    def bbox(self):
        v = self.v
        return v.min(axis=0), v.max(axis=0)

    def to_dict(self):
        return {"type": "polygon", "vertices": [list(map(float, p)) for p in self.vertices]}


def Rectangle(width: float, height: float, center=(0.0, 0.0)) -> Polygon:
    """Axis-aligned rectangle as a polygon (kept as a polygon for ray tests)."""
    if not (width > 0 and height > 0):
        raise InvalidDomain("rectangle sides must be positive")
    cx, cy = center
    w, h = width / 2, height / 2
    return Polygon(((cx - w, cy - h), (cx + w, cy - h), (cx + w, cy + h), (cx - w, cy + h)))


def _signed_area(v):
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _polyline_distance(pts, poly, chunk=4096):
    a = poly
    b = np.roll(poly, -1, axis=0)
    ab = b - a
    L2 = np.einsum("ij,ij->i", ab, ab)
    flat = pts.reshape(-1, 2)
    out = np.empty(len(flat))
    for i in range(0, len(flat), chunk):
        p = flat[i : i + chunk, None, :]
        s = np.clip(np.einsum("pei,ei->pe", p - a, ab) / L2, 0.0, 1.0)
        d = p - (a + s[..., None] * ab)
        out[i : i + chunk] = np.sqrt(np.einsum("pei,pei->pe", d, d).min(axis=1))
    return out.reshape(pts.shape[:-1])


# ---------------------------------------------------------------------------
# domain


@dataclass(frozen=True)
class DomainSpec:
    """Open bounded planar domain: an outer curve minus closed holes."""

    outer: BoundaryCurve
    holes: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "holes", tuple(self.holes))
        self.validate()

    def validate(self):
        L = self.diameter
        for k, hole in enumerate(self.holes):
            pts = hole.sample(hole.perimeter() / 512)
            if not np.all(self.outer.contains(pts)) or self.outer.distance(pts).min() < 1e-9 * L:
                raise InvalidDomain(f"hole {k} is not strictly inside the outer boundary")
            for j, other in enumerate(self.holes):
                if j == k:
                    continue
                if np.any(other.contains(pts)) or other.distance(pts).min() < 1e-9 * L:
                    raise InvalidDomain(f"holes {k} and {j} overlap")

    def multiply_connected(self) -> bool:
        return len(self.holes) > 0

    def fill(self) -> "DomainSpec":
        """The simply connected fill: same outer curve, holes closed up."""
        return DomainSpec(self.outer, ())

    @property
    def diameter(self) -> float:
        lo, hi = self.outer.bbox()
        return float(np.linalg.norm(hi - lo))

    def area(self) -> float:
        return self.outer.area() - sum(h.area() for h in self.holes)

    def contains(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        inside = self.outer.contains(pts)
        for hole in self.holes:
            inside &= ~hole.contains(pts)
        return inside

    def boundary_distance(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        d = self.outer.distance(pts)
        for hole in self.holes:
            d = np.minimum(d, hole.distance(pts))
        return d

    def ray_intervals(self, q, thetas):
        """Radial extents of Omega along rays from an interior point `q`.

        Returns ``(starts, ends)`` arrays of shape ``(n_theta, k)``; the ray
        lies in Omega on each ``[starts[:, j], ends[:, j]]`` (empty pairs have
        ``starts == ends == inf``).
        """
        dirs = np.column_stack([np.cos(thetas), np.sin(thetas)])
        hits = [self.outer.ray_hits(q, dirs)] + [h.ray_hits(q, dirs) for h in self.holes]
        d = np.sort(np.concatenate(hits, axis=1), axis=1)
        n = d.shape[1]
        starts = np.concatenate([np.zeros((len(thetas), 1)), d[:, 1 : n - 1 : 2]], axis=1)
        ends = d[:, 0:n:2]
        k = min(starts.shape[1], ends.shape[1])
        starts, ends = starts[:, :k], ends[:, :k]
        starts = np.where(np.isfinite(ends), starts, np.inf)
        return starts, ends

    def to_dict(self) -> dict:
        return {"outer": self.outer.to_dict(), "holes": [h.to_dict() for h in self.holes]}


def curve_from_dict(d: dict) -> BoundaryCurve:
    t = d.get("type", "disk")
    if t == "disk":
        return Disk(tuple(d.get("center", (0.0, 0.0))), float(d.get("radius", 1.0)))
    if t == "ellipse":
        return Ellipse(float(d["a"]), float(d["b"]), tuple(d.get("center", (0.0, 0.0))))
    if t == "rectangle":
        return Rectangle(float(d["width"]), float(d["height"]), tuple(d.get("center", (0.0, 0.0))))
    if t == "polygon":
        return Polygon(tuple(tuple(map(float, p)) for p in d["vertices"]))
    raise InvalidDomain(f"unknown boundary type {t!r}")


def domain_from_dict(d: dict) -> DomainSpec:
    return DomainSpec(curve_from_dict(d["outer"]), tuple(curve_from_dict(h) for h in d.get("holes", ())))


def disk(radius=1.0, center=(0.0, 0.0)) -> DomainSpec:
    return DomainSpec(Disk(tuple(center), radius))


def annulus(hole_center=(0.0, 0.0), hole_radius=0.25, radius=1.0) -> DomainSpec:
    return DomainSpec(Disk((0.0, 0.0), radius), (Disk(tuple(hole_center), hole_radius),))


# ---------------------------------------------------------------------------
# mesh


@dataclass
class Mesh:
    nodes: np.ndarray
    triangles: np.ndarray
    markers: np.ndarray
    target_h: float
    domain: Optional[DomainSpec] = field(default=None, repr=False)

    def __post_init__(self):
        self.nodes = np.ascontiguousarray(self.nodes, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        self.markers = np.ascontiguousarray(self.markers, dtype=np.int64)
        self._cache = {}

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def areas(self) -> np.ndarray:
        if "areas" not in self._cache:
            p = self.nodes[self.triangles]
            e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
            self._cache["areas"] = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        return self._cache["areas"]

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(self.markers == INTERIOR)

    @property
    def boundary(self) -> np.ndarray:
        return np.flatnonzero(self.markers != INTERIOR)

    @property
    def lumped_mass(self) -> np.ndarray:
        """Vertex quadrature weights (one third of each adjacent triangle area)."""
        if "lumped" not in self._cache:
            w = np.zeros(self.n_nodes)
            np.add.at(w, self.triangles.ravel(), np.repeat(self.areas / 3.0, 3))
            self._cache["lumped"] = w
        return self._cache["lumped"]

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.nodes.max(axis=0) - self.nodes.min(axis=0)))

    def edge_lengths(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        return np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)

    def locate(self, pts):
        """Triangle index and barycentric coordinates of points (-1 if outside)."""
        if "tri_finder" not in self._cache:
            from matplotlib.tri import Triangulation

            tri = Triangulation(self.nodes[:, 0], self.nodes[:, 1], self.triangles)
            self._cache["tri_finder"] = tri.get_trifinder()
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        idx = np.asarray(self._cache["tri_finder"](pts[:, 0], pts[:, 1]), dtype=np.int64)
        bary = np.zeros((len(pts), 3))
        ok = idx >= 0
        if np.any(ok):
            p = self.nodes[self.triangles[idx[ok]]]
            T = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
            lam = np.linalg.solve(T, (pts[ok] - p[:, 0])[..., None])[..., 0]
            bary[ok] = np.column_stack([1 - lam.sum(axis=1), lam])
        return idx, bary

    def interpolate(self, values, pts, fill=np.nan):
        """P1 interpolation of nodal `values` at arbitrary points."""
        idx, bary = self.locate(pts)
        out = np.full(len(idx), fill, dtype=float)
        ok = idx >= 0
        out[ok] = np.einsum("ij,ij->i", bary[ok], np.asarray(values)[self.triangles[idx[ok]]])
        return out

    def check(self, tol=1e-10):
        """Assert the structural invariants; raises MeshFailure."""
        if np.any(self.areas <= 0):
            raise MeshFailure("non-positive triangle area")
        edges = np.sort(np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]]), axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        if np.any(counts > 2):
            raise MeshFailure("non-conforming triangulation (edge shared by more than two triangles)")
        bedges = boundary_edges(self.triangles)
        deg = np.bincount(bedges.ravel(), minlength=self.n_nodes)
        if np.any(deg[self.markers == INTERIOR] > 0):
            raise MeshFailure("boundary edge touches an interior node")
        if np.any(deg[self.markers != INTERIOR] != 2):
            raise MeshFailure("boundary node without exactly two boundary edges")
        if np.any(self.markers[bedges[:, 0]] != self.markers[bedges[:, 1]]):
            raise MeshFailure("boundary edge joins two different curves")
        if self.domain is not None:
            scale = self.domain.diameter
            curves = [self.domain.outer] + list(self.domain.holes)
            for m, curve in enumerate(curves):
                sel = self.markers == m
                if np.any(sel) and curve.distance(self.nodes[sel]).max() > tol * scale:
                    raise MeshFailure(f"boundary nodes of curve {m} are off the curve")
        return True

    # -- text format -----------------------------------------------------
    def save(self, path):
        with open(path, "w") as fh:
            fh.write("# mfelab mesh v1\n")
            fh.write(f"target_h {float(self.target_h)!r}\n")
            fh.write(f"nodes {self.n_nodes}\n")
            for (x, y), m in zip(self.nodes, self.markers):
                fh.write(f"{float(x)!r} {float(y)!r} {int(m)}\n")
            fh.write(f"triangles {len(self.triangles)}\n")
            for a, b, c in self.triangles:
                fh.write(f"{a} {b} {c}\n")

    @classmethod
    def load(cls, path, domain=None):
        with open(path) as fh:
            lines = [ln.split() for ln in fh if ln.strip() and not ln.startswith("#")]
        h = float(lines[0][1])
        n = int(lines[1][1])
        nod = np.array([[float(a), float(b)] for a, b, _ in lines[2 : 2 + n]])
        mk = np.array([int(r[2]) for r in lines[2 : 2 + n]])
        m = int(lines[2 + n][1])
        tri = np.array([[int(x) for x in r] for r in lines[3 + n : 3 + n + m]])
        return cls(nod, tri, mk, h, domain)


def boundary_edges(triangles):
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    es = np.sort(e, axis=1)
    uniq, inv, counts = np.unique(es, axis=0, return_inverse=True, return_counts=True)
    return uniq[counts == 1]


@dataclass(frozen=True)
class Refinement:
    """Graded refinement around a point: size `h_min` within `core`, growing at rate `grade`."""

    center: tuple
    h_min: float
    core: float = 0.0
    grade: float = 0.2

    def size(self, pts):
        r = np.linalg.norm(np.asarray(pts) - np.asarray(self.center), axis=-1)
        return self.h_min + self.grade * np.maximum(r - self.core, 0.0)


def _ring_points(center, r0, size_of_r, h, include_center):
    pts = [np.asarray(center, dtype=float)[None, :]] if include_center else []
    r = r0
    k = 0
    while True:
        s = size_of_r(r)
        if s >= h:
            break
        if r > 0:
            n = max(6, int(round(2 * math.pi * r / s)))
            t = 2 * math.pi * (np.arange(n) + 0.5 * (k % 2)) / n
            pts.append(np.asarray(center) + r * np.column_stack([np.cos(t), np.sin(t)]))
        r += s
        k += 1
    return (np.vstack(pts) if pts else np.zeros((0, 2))), r


def _hex_lattice(lo, hi, s, offset=(0.0, 0.0)):
    dy = s * math.sqrt(3) / 2
    ys = np.arange(lo[1] - dy, hi[1] + dy, dy) + offset[1]
    rows = []
    for j, y in enumerate(ys):
        xs = np.arange(lo[0] - s, hi[0] + s, s) + offset[0] + (0.5 * s if j % 2 else 0.0)
        rows.append(np.column_stack([xs, np.full_like(xs, y)]))
    return np.vstack(rows)


def triangulate(spec: DomainSpec, target_h: float, refine: Sequence[Refinement] = (), hole_min_nodes: int = 48) -> Mesh:
    """Triangulate `spec` with edge-length scale `target_h`.

    Small holes (perimeter below ``hole_min_nodes * target_h``) are sampled
    with ``hole_min_nodes`` nodes and surrounded by graded rings; each
    `Refinement` adds graded rings around a point.
    """
    L = spec.diameter
    if not (0 < target_h < L / 4):
        raise InvalidDomain("target_h must lie in (0, diameter/4)")
    h = float(target_h)

    # (points, marker, local size) groups; boundary groups are never thinned
    bnd_pts, bnd_mark = [spec.outer.sample(h)], [np.full(0, 0)]
    bnd_mark[0] = np.full(len(bnd_pts[0]), OUTER)
    graded = []  # (points, size-function) for interior candidate groups
    exclusion = []  # (center, radius) regions owned by graded ring systems
    for k, hole in enumerate(spec.holes):
        s0 = min(h, hole.perimeter() / hole_min_nodes)
        hp = hole.sample(s0)[::-1]
        bnd_pts.append(hp)
        bnd_mark.append(np.full(len(hp), hole_marker(k)))
        if s0 < h and isinstance(hole, Disk):
            grade = 0.25
            size = lambda r, rr=hole.radius, s0=s0, g=grade: s0 + g * (r - rr)
            ring, r_end = _ring_points(hole.center, hole.radius + s0, size, h, False)
            graded.append((ring, lambda p, c=hole.c, rr=hole.radius, s0=s0, g=grade: s0 + g * np.abs(np.linalg.norm(p - c, axis=-1) - rr)))
            exclusion.append((hole.c, r_end - 0.5 * h))
    for ref in refine:
        size = lambda r, ref=ref: ref.h_min + ref.grade * max(r - ref.core, 0.0)
        ring, r_end = _ring_points(ref.center, 0.0, size, h, True)
        graded.append((ring, ref.size))
        exclusion.append((np.asarray(ref.center, float), r_end - 0.5 * h))

    lo, hi = spec.outer.bbox()
    lattice = _hex_lattice(lo, hi, h, offset=(0.137 * h, 0.0713 * h))
    cand = [(lattice, lambda p: np.full(len(p), h))] + graded

    interior = []
    for gi, (pts, sizefn) in enumerate(cand):
        if len(pts) == 0:
            continue
        keep = spec.contains(pts)
        pts = pts[keep]
        s_own = sizefn(pts)
        keep = spec.boundary_distance(pts) > 0.5 * np.minimum(s_own, h)
        if gi == 0:
            for c, r in exclusion:
                keep &= np.linalg.norm(pts - c, axis=1) > r
        else:
            # overlapping graded systems: the finer one owns the point
            for gj in range(1, len(cand)):
                if gj != gi:
                    s_other = cand[gj][1](pts)
                    keep &= (s_own < s_other) | ((s_own == s_other) & (gi < gj))
        interior.append(pts[keep])
    interior = np.vstack(interior) if interior else np.zeros((0, 2))

    bnd = np.vstack(bnd_pts)
    # thin interior points too close to each other or to boundary samples
    allpts = np.vstack([bnd, interior])
    sizes = np.concatenate([np.full(len(bnd), 0.0), _local_size(interior, cand, h)])
    keep_mask = _thin(allpts, sizes, len(bnd))
    allpts = allpts[keep_mask]
    markers = np.concatenate([np.concatenate(bnd_mark), np.full(len(interior), INTERIOR)])[keep_mask]

    tri = Delaunay(allpts).simplices
    cent = allpts[tri].mean(axis=1)
    tri = tri[spec.contains(cent)]
    p = allpts[tri]
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    sa = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    tri[sa < 0] = tri[sa < 0][:, [0, 2, 1]]
    tri = tri[np.abs(sa) > 1e-14 * h * h]
    used = np.unique(tri)
    remap = np.full(len(allpts), -1)
    remap[used] = np.arange(len(used))
    mesh = Mesh(allpts[used], remap[tri], markers[used], h, spec)
    mesh.check()
    # area consistency: chord polygon area must match the triangle sum
    chord_area = _signed_area(mesh.nodes[mesh.markers == OUTER]) - sum(
        abs(_signed_area(mesh.nodes[mesh.markers == hole_marker(k)])) for k in range(len(spec.holes))
    )
    if abs(mesh.areas.sum() - chord_area) > 1e-9 * max(chord_area, 1.0):
        raise MeshFailure("triangulation does not cover the domain")
    return mesh


def _local_size(pts, cand, h):
    s = np.full(len(pts), h)
    for _, fn in cand[1:]:
        s = np.minimum(s, fn(pts))
    return s


def _thin(pts, sizes, n_fixed, alpha=0.45):
    """Greedy removal of candidates closer than alpha*size to an accepted point."""
    tree = cKDTree(pts)
    order = np.argsort(sizes, kind="stable")
    accepted = np.zeros(len(pts), dtype=bool)
    accepted[:n_fixed] = True
    rejected = np.zeros(len(pts), dtype=bool)
    for i in order:
        if i < n_fixed or rejected[i]:
            continue
        r = alpha * sizes[i]
        nb = tree.query_ball_point(pts[i], r)
        if any(accepted[j] for j in nb if j != i):
            rejected[i] = True
            continue
        accepted[i] = True
    return accepted


# ---------------------------------------------------------------------------
# quadrature

# degree-5 seven-point rule on the reference triangle (barycentric, weights sum to 1)
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
_DUNAVANT5 = (
    np.array(
        [[1 / 3, 1 / 3, 1 / 3], [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1], [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2]]
    ),
    np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3),
)
_MIDPOINT2 = (np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]), np.full(3, 1 / 3))


def quadrature_points(mesh: Mesh, order: int = 5):
    bary, w = _DUNAVANT5 if order >= 3 else _MIDPOINT2
    p = mesh.nodes[mesh.triangles]
    x = np.einsum("qk,tkd->tqd", bary, p)
    return x, bary, w[None, :] * mesh.areas[:, None]


def integrate(mesh: Mesh, integrand: Callable, field=None, order: int = 5) -> float:
    """Composite quadrature of ``integrand(x)`` or ``integrand(x, field_value)``.

    `field` (nodal values) is interpolated linearly to the quadrature points.
    """
    x, bary, w = quadrature_points(mesh, order)
    if field is None:
        vals = integrand(x)
    else:
        fv = np.einsum("qk,tk->tq", bary, np.asarray(field, dtype=float)[mesh.triangles])
        vals = integrand(x, fv)
    vals = np.broadcast_to(vals, w.shape)
    if not np.all(np.isfinite(vals)):
        raise NonFiniteIntegrand("integrand is not finite at some quadrature node")
    return math.fsum((vals * w).sum(axis=1))


def exterior_inverse_quartic(spec: DomainSpec, q, delta: float, n_theta: int = 4096) -> float:
    """Integral of ``|x-q|^-4`` over the complement of the domain.

    Evaluated as ``pi/delta^2`` minus the integral over ``Omega \\ B(q,delta)``;
    along each ray the radial integral is exact, the angular one uses the
    periodic trapezoid rule.
    """
    q = np.asarray(q, dtype=float)
    if not spec.contains(q[None])[0] or spec.boundary_distance(q[None])[0] <= delta:
        raise DeltaTooLarge("B(q, delta) is not contained in the domain")
    thetas = 2 * math.pi * (np.arange(n_theta) + 0.5) / n_theta
    starts, ends = spec.ray_intervals(q, thetas)
    a = np.maximum(starts, delta)
    ok = np.isfinite(ends) & (ends > a)
    inner = np.where(ok, 0.5 * (1.0 / np.where(ok, a, 1.0) ** 2 - 1.0 / np.where(ok, ends, 1.0) ** 2), 0.0)
    return math.pi / delta**2 - math.fsum(inner.sum(axis=1)) * (2 * math.pi / n_theta)
