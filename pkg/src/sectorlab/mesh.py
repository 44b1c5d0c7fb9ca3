"""
Polygonal sector domains and triangle mesh families.

The domains are sectors of opening angle omega1 at the origin: for
omega1 in [pi/3, pi/2] the triangle with vertices (0,0), (1,0),
(cos omega1, sin omega1); for omega1 in (pi/2, 2pi) the set

    { x in (-1,1)^2 : 0 < angle(x) < omega1 },

a polygon whose first corner is the origin.  The origin is the primary
corner; it is the only corner whose interior angle can exceed pi, and the
mesh machinery keeps it as vertex 0 of every triangulation.

Two refinement families are provided.  The superconvergent family is
plain red refinement of a structured initial mesh built from coordinate
squares cut by parallel diagonals; every interior edge of every mesh in
the family then sits in an exact parallelogram, which is the structural
property behind the improved boundary error estimates.  The generic
family perturbs the interior vertices of each refined mesh with a seeded
random displacement, which destroys the parallelogram property at rate
O(h) and reproduces the behaviour of an unstructured quasi-uniform
family while keeping every run bit-for-bit deterministic.

check_h2_irregular measures how far a mesh is from the structured
situation: for every interior edge it compares opposite side lengths of
the quadrilateral formed by the two neighbouring triangles, and along
the boundary it compares consecutive tangents and corresponding edges of
neighbouring boundary triangles.
"""

import os

import numpy as np

TWO_PI = 2.0 * np.pi


class OutOfRange(ValueError):
    """Opening angle outside the supported range [pi/3, 2pi)."""


class TriangulationFailure(RuntimeError):
    """A triangulation could not be built or fails the conformity checks."""


class PerturbationFailure(RuntimeError):
    """Interior vertex perturbation could not produce a valid mesh."""


class MeshFamilyKind:
    """Names of the two mesh families."""

    SUPERCONVERGENT = "superconvergent"
    GENERIC = "generic"
    ALL = (SUPERCONVERGENT, GENERIC)

    @staticmethod
    def normalize(kind):
        k = str(kind).strip().lower()
        if k not in MeshFamilyKind.ALL:
            raise ValueError("unknown mesh family kind: %r" % (kind,))
        return k


def _interior_angles(corners):
    """Interior angles of a simple CCW polygon, one per corner."""
    c = np.asarray(corners, dtype=float)
    n = len(c)
    prev = c[np.arange(n) - 1]
    nxt = c[(np.arange(n) + 1) % n]
    d1 = c - prev
    d2 = nxt - c
    turn = np.arctan2(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0],
                      d1[:, 0] * d2[:, 0] + d1[:, 1] * d2[:, 1])
    return np.pi - turn


def _signed_area(corners):
    c = np.asarray(corners, dtype=float)
    x, y = c[:, 0], c[:, 1]
    return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)


class PolygonSpec:
    """A simple CCW polygon with per-corner interior angles.

    Parameters
    ----------
    corners : (nc, 2) array
        Corner coordinates in counterclockwise cycle order.
    angles : (nc,) array, optional
        Interior angles; computed from the corners when omitted, and
        checked against the corners (tolerance 1e-12) when given.
    primary_corner_index : int
        Index of the distinguished (possibly reentrant) corner.
    omega1 : float or None
        Opening angle at the primary corner for sector domains built by
        build_sector_domain; None for hand-made polygons.
    """

    def __init__(self, corners, angles=None, primary_corner_index=0, omega1=None):
        self.corners = np.atleast_2d(np.asarray(corners, dtype=float))
        if self.corners.shape[0] < 3 or self.corners.shape[1] != 2:
            raise ValueError("need at least 3 corners in the plane")
        if _signed_area(self.corners) <= 0.0:
            raise ValueError("corners must be in counterclockwise order")
        computed = _interior_angles(self.corners)
        if angles is None:
            self.angles = computed
        else:
            self.angles = np.asarray(angles, dtype=float)
            if self.angles.shape != (len(self.corners),):
                raise ValueError("one interior angle per corner expected")
            if np.max(np.abs(self.angles - computed)) > 1e-12:
                raise ValueError("given angles inconsistent with corners")
        if np.any(self.angles <= 0.0) or np.any(self.angles >= TWO_PI):
            raise ValueError("interior angles must lie in (0, 2pi)")
        self.primary_corner_index = int(primary_corner_index)
        if not 0 <= self.primary_corner_index < len(self.corners):
            raise ValueError("primary corner index out of range")
        self.omega1 = None if omega1 is None else float(omega1)

    @property
    def num_corners(self):
        return len(self.corners)

    def side(self, j):
        """Endpoints (P, Q) of side j, running corner j -> corner j+1."""
        j = j % self.num_corners
        return self.corners[j], self.corners[(j + 1) % self.num_corners]

    def side_tangent(self, j):
        p, q = self.side(j)
        t = q - p
        return t / np.hypot(t[0], t[1])

    def side_normal(self, j):
        """Outward unit normal of side j (interior lies left of the side)."""
        t = self.side_tangent(j)
        return np.array([t[1], -t[0]])

    def side_length(self, j):
        p, q = self.side(j)
        return float(np.hypot(*(q - p)))

    def perimeter(self):
        return sum(self.side_length(j) for j in range(self.num_corners))

    def diameter(self):
        c = self.corners
        d2 = np.sum((c[:, None, :] - c[None, :, :]) ** 2, axis=2)
        return float(np.sqrt(d2.max()))

    def area(self):
        return float(_signed_area(self.corners))

    def contains_points(self, pts, tol=1e-12):
        """Crossing-number point-in-polygon test (closure, vectorized)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        x, y = pts[:, 0], pts[:, 1]
        inside = np.zeros(len(pts), dtype=bool)
        on_bd = np.zeros(len(pts), dtype=bool)
        c = self.corners
        n = len(c)
        for j in range(n):
            p, q = c[j], c[(j + 1) % n]
            d = q - p
            cross = d[0] * (y - p[1]) - d[1] * (x - p[0])
            t = ((x - p[0]) * d[0] + (y - p[1]) * d[1]) / (d @ d)
            on_bd |= (np.abs(cross) <= tol * np.hypot(*d)) & (t >= -tol) & (t <= 1 + tol)
            if d[1] != 0.0:
                spans = (p[1] <= y) != (q[1] <= y)
                xcut = p[0] + (y - p[1]) * d[0] / d[1]
                inside ^= spans & (x < xcut)
        return inside | on_bd

    def __repr__(self):
        w = "none" if self.omega1 is None else "%.6g" % self.omega1
        return "PolygonSpec(%d corners, primary=%d, omega1=%s)" % (
            self.num_corners, self.primary_corner_index, w)


def _snap(values, tol=1e-15):
    v = np.asarray(values, dtype=float)
    v[np.abs(v) < tol] = 0.0
    return v


# Square corner directions: angle of corner k of the unit-square ring is
# pi/4 + k*pi/2; axis point k sits at angle k*pi/2.
_AXIS_POINTS = np.array([(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)])
_DIAG_CORNERS = np.array([(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)])


def build_sector_domain(omega1):
    """Polygon of the sector domain with opening angle omega1 at the origin.

    Raises OutOfRange unless pi/3 <= omega1 < 2pi (tolerance 1e-12).
    """
    w = float(omega1)
    if not (np.pi / 3.0 - 1e-12 <= w < TWO_PI - 1e-12):
        raise OutOfRange("opening angle %g outside [pi/3, 2pi)" % w)
    if w <= np.pi / 2.0 + 1e-12:
        corners = _snap(np.array([(0.0, 0.0), (1.0, 0.0),
                                  (np.cos(w), np.sin(w))]))
        return PolygonSpec(corners, primary_corner_index=0, omega1=w)
    corners = [(0.0, 0.0), (1.0, 0.0)]
    for k in range(4):
        if np.pi / 4.0 + k * np.pi / 2.0 < w - 1e-12:
            corners.append(tuple(_DIAG_CORNERS[k]))
    exit_pt = _snap(np.array([np.cos(w), np.sin(w)]))
    exit_pt = exit_pt / np.max(np.abs(exit_pt))
    exit_pt = _snap(exit_pt)
    for k in range(4):
        if np.max(np.abs(exit_pt - _DIAG_CORNERS[k])) <= 1e-12:
            exit_pt = _DIAG_CORNERS[k].copy()
    last = np.asarray(corners[-1], dtype=float)
    if np.max(np.abs(exit_pt - last)) > 1e-12:
        corners.append(tuple(exit_pt))
    return PolygonSpec(_snap(np.array(corners)), primary_corner_index=0, omega1=w)


class Mesh:
    """A conforming triangulation of a PolygonSpec.

    Fields
    ------
    vertices : (nv, 2) float array
    triangles : (nt, 3) int array, counterclockwise
    boundary_edges : (nb, 4) int array, rows (v0, v1, owner_tri, seg_id)
        in boundary cycle order starting at the primary corner.
    corner_vertex_ids : (nc,) int array
        Vertex index of each polygon corner.
    spec : PolygonSpec
    level : int (0 for an initial mesh)
    h : float, longest edge.

    The constructor runs one conformity pass: positive triangle areas,
    every edge shared by at most two triangles, single-triangle edges
    exactly the declared boundary edges, the boundary edges a single
    closed cycle, corner coordinates matching the polygon.
    """

    def __init__(self, vertices, triangles, boundary_edges, corner_vertex_ids,
                 spec, level=0):
        self.vertices = np.asarray(vertices, dtype=float)
        self.triangles = np.asarray(triangles, dtype=np.int64)
        self.boundary_edges = np.asarray(boundary_edges, dtype=np.int64)
        self.corner_vertex_ids = np.asarray(corner_vertex_ids, dtype=np.int64)
        self.spec = spec
        self.level = int(level)
        self._cache = {}
        self._validate()
        self.h = self._longest_edge()

    # -- basic sizes ----------------------------------------------------
    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_triangles(self):
        return len(self.triangles)

    @property
    def num_boundary_edges(self):
        return len(self.boundary_edges)

    def triangle_areas(self):
        if "areas" not in self._cache:
            p = self.vertices[self.triangles]
            d1 = p[:, 1] - p[:, 0]
            d2 = p[:, 2] - p[:, 0]
            self._cache["areas"] = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        return self._cache["areas"]

    def boundary_vertices(self):
        """Boundary vertex ids in cycle order (one per boundary edge)."""
        return self.boundary_edges[:, 0]

    def boundary_position(self):
        """Map vertex id -> position in the boundary cycle, -1 if interior."""
        if "bpos" not in self._cache:
            pos = np.full(self.num_vertices, -1, dtype=np.int64)
            pos[self.boundary_vertices()] = np.arange(self.num_boundary_edges)
            self._cache["bpos"] = pos
        return self._cache["bpos"]

    def interior_vertices(self):
        if "interior" not in self._cache:
            mask = np.ones(self.num_vertices, dtype=bool)
            mask[self.boundary_vertices()] = False
            self._cache["interior"] = np.nonzero(mask)[0]
        return self._cache["interior"]

    def edge_map(self):
        """Dict (min,max) vertex pair -> list of (triangle, local_edge)."""
        if "edges" not in self._cache:
            emap = {}
            for t, tri in enumerate(self.triangles):
                for k in range(3):
                    u, v = int(tri[k]), int(tri[(k + 1) % 3])
                    key = (u, v) if u < v else (v, u)
                    emap.setdefault(key, []).append((t, k))
            self._cache["edges"] = emap
        return self._cache["edges"]

    # -- validation ------------------------------------------------------
    def _validate(self):
        areas = self.triangle_areas()
        if np.any(areas <= 0.0):
            bad = int(np.argmin(areas))
            raise TriangulationFailure(
                "triangle %d has nonpositive area %g" % (bad, areas[bad]))
        emap = self.edge_map()
        declared = {}
        for i, (v0, v1, owner, seg) in enumerate(self.boundary_edges):
            key = (int(v0), int(v1)) if v0 < v1 else (int(v1), int(v0))
            if key in declared:
                raise TriangulationFailure("duplicate boundary edge %s" % (key,))
            declared[key] = i
            touch = emap.get(key)
            if touch is None or len(touch) != 1 or touch[0][0] != owner:
                raise TriangulationFailure(
                    "boundary edge %s not owned by exactly triangle %d" % (key, owner))
            if not 0 <= seg < self.spec.num_corners:
                raise TriangulationFailure("boundary segment id %d out of range" % seg)
        for key, touch in emap.items():
            if len(touch) > 2:
                raise TriangulationFailure("edge %s shared by %d triangles" % (key, len(touch)))
            if len(touch) == 1 and key not in declared:
                raise TriangulationFailure("undeclared boundary edge %s" % (key,))
        nb = self.num_boundary_edges
        for i in range(nb):
            if self.boundary_edges[i, 1] != self.boundary_edges[(i + 1) % nb, 0]:
                raise TriangulationFailure("boundary edges do not chain at row %d" % i)
        cyc = self.boundary_vertices()
        if len(np.unique(cyc)) != nb:
            raise TriangulationFailure("boundary cycle revisits a vertex")
        cpos = self.vertices[self.corner_vertex_ids]
        if np.max(np.abs(cpos - self.spec.corners)) > 1e-12:
            raise TriangulationFailure("corner vertices do not match the polygon")
        if self.boundary_edges[0, 0] != self.corner_vertex_ids[self.spec.primary_corner_index]:
            raise TriangulationFailure("boundary cycle must start at the primary corner")

    def _longest_edge(self):
        p = self.vertices[self.triangles]
        lens = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)
        return float(lens.max())

    def __repr__(self):
        return "Mesh(level=%d, %d vertices, %d triangles, %d boundary edges, h=%.4g)" % (
            self.level, self.num_vertices, self.num_triangles,
            self.num_boundary_edges, self.h)


def _boundary_walk(vertices, triangles, spec):
    """Build the (v0, v1, owner, seg) cycle for a freshly built triangulation."""
    emap = {}
    for t, tri in enumerate(triangles):
        for k in range(3):
            u, v = int(tri[k]), int(tri[(k + 1) % 3])
            key = (u, v) if u < v else (v, u)
            emap.setdefault(key, []).append(t)
    rows = []
    for j in range(spec.num_corners):
        p, q = spec.side(j)
        d = q - p
        L = np.hypot(*d)
        side_edges = []
        for (u, v), owners in emap.items():
            if len(owners) != 1:
                continue
            pu, pv = vertices[u], vertices[v]
            ok = True
            ts = []
            for x in (pu, pv):
                cross = d[0] * (x[1] - p[1]) - d[1] * (x[0] - p[0])
                t_par = ((x[0] - p[0]) * d[0] + (x[1] - p[1]) * d[1]) / (L * L)
                if abs(cross) > 1e-9 * L or t_par < -1e-10 or t_par > 1 + 1e-10:
                    ok = False
                    break
                ts.append(t_par)
            if ok:
                if ts[0] <= ts[1]:
                    side_edges.append((ts[0], u, v, owners[0]))
                else:
                    side_edges.append((ts[1], v, u, owners[0]))
        side_edges.sort()
        for t_par, u, v, owner in side_edges:
            rows.append((u, v, owner, j))
    return np.asarray(rows, dtype=np.int64)


def _register(vertex_index, verts, p):
    key = (float(p[0]), float(p[1]))
    if key not in vertex_index:
        vertex_index[key] = len(verts)
        verts.append(key)
    return vertex_index[key]


def initial_triangulation(spec):
    """Coarsest triangulation of a polygon spec (at most a few dozen cells).

    Sector domains built by build_sector_domain get the structured
    construction: each fully covered coordinate quadrant is a square cut
    by its slope-one diagonal, and the remaining partial piece (when the
    opening angle is not a multiple of pi/2) is a small fan around the
    origin.  A hand-made polygon is fanned from its primary corner,
    which requires the polygon to be star shaped with respect to it.
    """
    c = spec.corners
    for i in range(len(c)):
        for j in range(i + 1, len(c)):
            if np.hypot(*(c[i] - c[j])) < 1e-14:
                raise TriangulationFailure("degenerate polygon: duplicate corners")
    verts = []
    vidx = {}
    tris = []
    if spec.omega1 is not None and spec.omega1 > np.pi / 2.0 + 1e-12:
        w = spec.omega1
        origin = _register(vidx, verts, (0.0, 0.0))
        m_full = int((w + 1e-12) // (np.pi / 2.0))
        for k in range(m_full):
            a0 = _register(vidx, verts, _AXIS_POINTS[k])
            dk = _register(vidx, verts, _DIAG_CORNERS[k])
            a1 = _register(vidx, verts, _AXIS_POINTS[(k + 1) % 4])
            # slope-one diagonals: quadrants 0 and 2 cut through the origin
            # corner, quadrants 1 and 3 through the two axis points.
            if k % 2 == 0:
                tris.append((origin, a0, dk))
                tris.append((origin, dk, a1))
            else:
                tris.append((origin, a0, a1))
                tris.append((a0, dk, a1))
        w_rem = w - m_full * (np.pi / 2.0)
        if w_rem > 1e-9:
            chain = [_register(vidx, verts, _AXIS_POINTS[m_full])]
            if w_rem > np.pi / 4.0 + 1e-12:
                chain.append(_register(vidx, verts, _DIAG_CORNERS[m_full]))
            exit_pt = spec.corners[-1]
            last = np.asarray(verts[chain[-1]])
            if np.max(np.abs(exit_pt - last)) > 1e-12:
                chain.append(_register(vidx, verts, tuple(exit_pt)))
            for i in range(len(chain) - 1):
                tris.append((origin, chain[i], chain[i + 1]))
    else:
        pc = spec.primary_corner_index
        n = spec.num_corners
        order = [(pc + i) % n for i in range(n)]
        ids = [_register(vidx, verts, tuple(c[i])) for i in order]
        for i in range(1, n - 1):
            tris.append((ids[0], ids[i], ids[i + 1]))
    vertices = np.asarray(verts, dtype=float)
    triangles = np.asarray(tris, dtype=np.int64)
    if len(triangles) > 64:
        raise TriangulationFailure("initial mesh unexpectedly large")
    corner_ids = []
    for corner in spec.corners:
        key = (float(corner[0]), float(corner[1]))
        if key not in vidx:
            raise TriangulationFailure("polygon corner %s missing from mesh" % (key,))
        corner_ids.append(vidx[key])
    bedges = _boundary_walk(vertices, triangles, spec)
    # rotate the cycle so it starts at the primary corner
    start = np.nonzero(bedges[:, 0] == corner_ids[spec.primary_corner_index])[0]
    if len(start) != 1:
        raise TriangulationFailure("primary corner not found on the boundary cycle")
    bedges = np.roll(bedges, -int(start[0]), axis=0)
    return Mesh(vertices, triangles, bedges, corner_ids, spec, level=0)


def refine_regular(mesh):
    """Red refinement: every triangle into four via edge midpoints.

    Parent vertices keep their indices; midpoints are appended in order
    of first appearance when scanning triangles.  Children of triangle t
    occupy rows 4t..4t+3 (corner children first, centre child last).
    Boundary edges split in place, preserving cycle order and segment ids.
    """
    nv = mesh.num_vertices
    edge_ids = {}
    mids = []
    for tri in mesh.triangles:
        for k in range(3):
            u, v = int(tri[k]), int(tri[(k + 1) % 3])
            key = (u, v) if u < v else (v, u)
            if key not in edge_ids:
                edge_ids[key] = nv + len(mids)
                mids.append(0.5 * (mesh.vertices[u] + mesh.vertices[v]))
    vertices = np.vstack([mesh.vertices, np.asarray(mids)])
    children = np.empty((4 * mesh.num_triangles, 3), dtype=np.int64)
    for t, tri in enumerate(mesh.triangles):
        a, b, c = (int(x) for x in tri)
        mab = edge_ids[(a, b) if a < b else (b, a)]
        mbc = edge_ids[(b, c) if b < c else (c, b)]
        mca = edge_ids[(c, a) if c < a else (a, c)]
        children[4 * t + 0] = (a, mab, mca)
        children[4 * t + 1] = (mab, b, mbc)
        children[4 * t + 2] = (mca, mbc, c)
        children[4 * t + 3] = (mab, mbc, mca)
    rows = []
    for v0, v1, owner, seg in mesh.boundary_edges:
        v0, v1, owner, seg = int(v0), int(v1), int(owner), int(seg)
        mid = edge_ids[(v0, v1) if v0 < v1 else (v1, v0)]
        tri = [int(x) for x in mesh.triangles[owner]]
        rows.append((v0, mid, 4 * owner + tri.index(v0), seg))
        rows.append((mid, v1, 4 * owner + tri.index(v1), seg))
    return Mesh(vertices, children, np.asarray(rows, dtype=np.int64),
                mesh.corner_vertex_ids, mesh.spec, level=mesh.level + 1)


def perturb_interior(mesh, kappa=0.2, seed=0):
    """Randomly displace interior vertices; boundary vertices stay put.

    Each interior vertex moves by at most kappa times the length of its
    shortest incident edge (measured on the input mesh), in a uniformly
    random direction, using the PCG64 stream for the given seed.
    Vertices are processed in ascending index order and each trial
    position must keep all incident triangles positively oriented
    against the current (partially updated) coordinates; an invalid
    displacement is halved up to 20 times and the vertex is left in
    place if that fails (counted in perturbation_stats, not an error).
    """
    kappa = float(kappa)
    if not 0.0 <= kappa <= 0.3:
        raise ValueError("kappa must lie in [0, 0.3]")
    rng = np.random.default_rng(int(seed))
    verts = mesh.vertices.copy()
    incident = [[] for _ in range(mesh.num_vertices)]
    for t, tri in enumerate(mesh.triangles):
        for k in range(3):
            incident[int(tri[k])].append(t)
    lmin = np.full(mesh.num_vertices, np.inf)
    p = mesh.vertices[mesh.triangles]
    lens = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)
    for t, tri in enumerate(mesh.triangles):
        for k in range(3):
            u, v = int(tri[k]), int(tri[(k + 1) % 3])
            lmin[u] = min(lmin[u], lens[t, k])
            lmin[v] = min(lmin[v], lens[t, k])
    moved = stuck = 0
    for v in mesh.interior_vertices():
        v = int(v)
        ang = rng.uniform(0.0, TWO_PI)
        mag = kappa * lmin[v] * rng.uniform(0.0, 1.0)
        disp = mag * np.array([np.cos(ang), np.sin(ang)])
        placed = False
        for _ in range(21):
            trial = mesh.vertices[v] + disp
            old = verts[v].copy()
            verts[v] = trial
            ok = True
            for t in incident[v]:
                a, b, c = verts[mesh.triangles[t]]
                area2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
                if area2 <= 1e-12 * lmin[v] ** 2:
                    ok = False
                    break
            if ok:
                placed = True
                break
            verts[v] = old
            disp *= 0.5
        if placed and (disp[0] != 0.0 or disp[1] != 0.0):
            moved += 1
        elif not placed:
            stuck += 1
    out = Mesh(verts, mesh.triangles.copy(), mesh.boundary_edges.copy(),
               mesh.corner_vertex_ids.copy(), mesh.spec, level=mesh.level)
    out.perturbation_stats = {"moved": moved, "stuck": stuck,
                              "interior": int(len(mesh.interior_vertices()))}
    return out


def _level_seed(seed, level):
    return (int(seed) + 1) * 1000003 + int(level)


BASE_TRIANGLE_TARGET = 64


def build_family(spec, kind, levels, kappa=0.2, seed=0,
                 base_triangles=BASE_TRIANGLE_TARGET):
    """Hierarchy of `levels` meshes built above a pre-refined base.

    The initial triangulation is red-refined until it carries at least
    `base_triangles` cells; that mesh is level 1.  Starting from a
    uniformly resolved base keeps the per-level costs of a study
    comparable across domains of different shape.  Superconvergent:
    successive red refinements of the base.  Generic: each level is the
    red-refined mesh perturbed with a seed derived from (seed, level),
    so levels are deterministic but not nested.
    """
    kind = MeshFamilyKind.normalize(kind)
    levels = int(levels)
    if levels < 2:
        raise ValueError("a family needs at least 2 levels")
    root = initial_triangulation(spec)
    while root.num_triangles < int(base_triangles):
        root = refine_regular(root)
    root.level = 0
    base = [root]
    for _ in range(levels - 1):
        base.append(refine_regular(base[-1]))
    if kind == MeshFamilyKind.SUPERCONVERGENT:
        return base
    return [perturb_interior(m, kappa, _level_seed(seed, j))
            for j, m in enumerate(base)]


def save_mesh(mesh, path):
    """Write a mesh to a .npz archive restored exactly by load_mesh.

    The archive stores the vertex, triangle, and boundary-edge arrays
    verbatim together with the refinement level and the sector opening
    angle, from which the polygon is rebuilt on load.  The write is
    atomic (temporary file, then rename).
    """
    tmp = "%s.tmp%d" % (path, os.getpid())
    try:
        with open(tmp, "wb") as fh:
            np.savez(fh,
                     vertices=mesh.vertices,
                     triangles=mesh.triangles,
                     boundary_edges=mesh.boundary_edges,
                     corner_vertex_ids=mesh.corner_vertex_ids,
                     level=np.int64(mesh.level),
                     omega1=np.float64(mesh.spec.angles[0]))
        os.replace(tmp, path)
    except OSError:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def load_mesh(path):
    """Rebuild a mesh saved by save_mesh, re-running conformity checks."""
    with np.load(path) as data:
        spec = build_sector_domain(float(data["omega1"]))
        return Mesh(data["vertices"], data["triangles"],
                    data["boundary_edges"], data["corner_vertex_ids"],
                    spec, level=int(data["level"]))


class IrregularityReport:
    """Result of the structured-mesh diagnostics for one mesh."""

    def __init__(self, level, h, max_interior_discrepancy, discrepancy_ratio,
                 e2_area_fraction, boundary_vertex_violations, verdict):
        self.level = level
        self.h = h
        self.max_interior_discrepancy = max_interior_discrepancy
        self.discrepancy_ratio = discrepancy_ratio
        self.e2_area_fraction = e2_area_fraction
        self.boundary_vertex_violations = boundary_vertex_violations
        self.verdict = verdict

    def __repr__(self):
        return ("IrregularityReport(level=%d, h=%.4g, max_disc=%.3e, "
                "ratio=%.3e, e2_area=%.3e, bviol=%d, verdict=%s)" % (
                    self.level, self.h, self.max_interior_discrepancy,
                    self.discrepancy_ratio, self.e2_area_fraction,
                    self.boundary_vertex_violations, self.verdict))


def check_h2_irregular(mesh):
    """Measure deviation from the exactly-parallel (superconvergent) structure.

    For every interior edge, the two neighbouring triangles form a
    quadrilateral; opposite side lengths must agree to O(h^2) (threshold
    h^2 / (4 diam)).  Along the boundary, consecutive tangents at
    non-corner vertices must agree to O(h) and corresponding edges of the
    two neighbouring boundary triangles to O(h^2).  The verdict is True
    when no interior edge and no boundary vertex violates its threshold.
    """
    h = mesh.h
    diam = mesh.spec.diameter()
    tol_edge = h * h / (4.0 * diam)
    tol_tan = 4.0 * h / diam
    emap = mesh.edge_map()
    verts = mesh.vertices
    max_disc = 0.0
    exempt_tris = set()
    for (u, v), touch in emap.items():
        if len(touch) != 2:
            continue
        opp = []
        for t, k in touch:
            tri = mesh.triangles[t]
            opp.append(int(tri[(k + 2) % 3]))
        p, q = verts[u], verts[v]
        r0, r1 = verts[opp[0]], verts[opp[1]]
        # quad cycle p -> r0 -> q -> r1; opposite pairs (p,r0)/(q,r1), (r0,q)/(r1,p)
        d1 = abs(np.hypot(*(r0 - p)) - np.hypot(*(r1 - q)))
        d2 = abs(np.hypot(*(q - r0)) - np.hypot(*(p - r1)))
        disc = max(d1, d2)
        max_disc = max(max_disc, disc)
        if disc > tol_edge:
            exempt_tris.add(touch[0][0])
            exempt_tris.add(touch[1][0])
    areas = mesh.triangle_areas()
    e2_area = float(sum(areas[t] for t in exempt_tris))
    total_area = float(areas.sum())
    corners = set(int(i) for i in mesh.corner_vertex_ids)
    cyc = mesh.boundary_vertices()
    nb = len(cyc)
    violations = 0
    for i in range(nb):
        vid = int(cyc[i])
        if vid in corners:
            continue
        e_prev = mesh.boundary_edges[(i - 1) % nb]
        e_next = mesh.boundary_edges[i]
        pm, pv, pp = verts[int(e_prev[0])], verts[vid], verts[int(e_next[1])]
        t1 = (pv - pm) / np.hypot(*(pv - pm))
        t2 = (pp - pv) / np.hypot(*(pp - pv))
        bad = np.hypot(*(t2 - t1)) > tol_tan
        lens = []
        for erow, first in ((e_prev, int(e_prev[0])), (e_next, vid)):
            tri = [int(x) for x in mesh.triangles[int(erow[2])]]
            k = tri.index(first)
            ring = [tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]]
            lens.append([np.hypot(*(verts[ring[(s + 1) % 3]] - verts[ring[s]]))
                         for s in range(3)])
        if any(abs(a - b) > tol_edge for a, b in zip(*lens)):
            bad = True
        if bad:
            violations += 1
    ratio = max_disc / (h * h)
    verdict = bool(max_disc <= tol_edge and violations == 0)
    return IrregularityReport(mesh.level, h, max_disc, ratio,
                              e2_area / total_area, violations, verdict)


def local_polar(mesh, corner, x):
    """Polar coordinates (r, theta) of x relative to corner j of the polygon.

    theta is measured counterclockwise from the side leaving the corner
    and lies in [0, omega_j]; r = 0 returns theta = 0.  Accepts a single
    point or an (n, 2) array.
    """
    spec = mesh.spec if isinstance(mesh, Mesh) else mesh
    j = int(corner) % spec.num_corners
    t = spec.side_tangent(j)
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    d = pts - spec.corners[j]
    r = np.hypot(d[:, 0], d[:, 1])
    ang = np.arctan2(t[0] * d[:, 1] - t[1] * d[:, 0],
                     t[0] * d[:, 0] + t[1] * d[:, 1])
    ang[(ang < 0.0) & (ang > -1e-12)] = 0.0
    ang[ang < 0.0] += TWO_PI
    ang[r == 0.0] = 0.0
    w = spec.angles[j]
    ang = np.where(ang > w, np.where(ang - w < 1e-9, w, ang), ang)
    if single:
        return float(r[0]), float(ang[0])
    return r, ang


def save_mesh(mesh, path):
    """Plain-text mesh export with full round-trip precision."""
    lines = ["vertices %d triangles %d bedges %d" % (
        mesh.num_vertices, mesh.num_triangles, mesh.num_boundary_edges)]
    lines.append("level %d" % mesh.level)
    w = mesh.spec.omega1
    lines.append("polygon %d %d %s" % (mesh.spec.num_corners,
                                       mesh.spec.primary_corner_index,
                                       "none" if w is None else repr(float(w))))
    for cx, cy in mesh.spec.corners:
        lines.append("%s %s" % (repr(float(cx)), repr(float(cy))))
    lines.append("corner_vertices " + " ".join(str(int(i)) for i in mesh.corner_vertex_ids))
    for vx, vy in mesh.vertices:
        lines.append("%s %s" % (repr(float(vx)), repr(float(vy))))
    for a, b, c in mesh.triangles:
        lines.append("%d %d %d" % (a, b, c))
    for v0, v1, owner, seg in mesh.boundary_edges:
        lines.append("%d %d %d %d" % (v0, v1, owner, seg))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mesh(path):
    """Inverse of save_mesh."""
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    head = lines[0].split()
    if head[0] != "vertices" or head[2] != "triangles" or head[4] != "bedges":
        raise TriangulationFailure("bad mesh file header: %r" % lines[0])
    nv, nt, nb = int(head[1]), int(head[3]), int(head[5])
    level = int(lines[1].split()[1])
    ptoks = lines[2].split()
    nc, primary = int(ptoks[1]), int(ptoks[2])
    omega1 = None if ptoks[3] == "none" else float(ptoks[3])
    at = 3
    corners = np.array([[float(t) for t in lines[at + i].split()] for i in range(nc)])
    at += nc
    corner_ids = [int(t) for t in lines[at].split()[1:]]
    at += 1
    verts = np.array([[float(t) for t in lines[at + i].split()] for i in range(nv)])
    at += nv
    tris = np.array([[int(t) for t in lines[at + i].split()] for i in range(nt)],
                    dtype=np.int64)
    at += nt
    bedges = np.array([[int(t) for t in lines[at + i].split()] for i in range(nb)],
                      dtype=np.int64)
    spec = PolygonSpec(corners, primary_corner_index=primary, omega1=omega1)
    return Mesh(verts, tris, bedges, corner_ids, spec, level=level)
