"""
P1 finite elements on sector meshes.

Linear Lagrange elements on triangles; degrees of freedom are vertex
values.  Boundary functions live on the trace space and are indexed by
boundary-cycle position (the order of Mesh.boundary_edges), so their
mass matrix is cyclic tridiagonal.

The three global matrices are assembled from the classical local forms

    stiffness   A_T = area * grad(lam_i) . grad(lam_j)
    mass        M_T = (area/12) [[2,1,1],[1,2,1],[1,1,2]]
    edge mass   Mb_e = (len/6) [[2,1],[1,2]]

and every linear solve in the package goes through one hand-written
Jacobi-preconditioned conjugate gradient routine (cg_solve).  Volume
data enters either as an analytic evaluator integrated with a fixed
quadrature rule, as a P1 coefficient vector (load = M @ coeffs), or as
a sum of both; the same rule is reused by the optimal control layer so
that objective values and assembled gradients are exactly consistent.

The discrete harmonic extension S_h assigns boundary data nodally (an
L2 projection onto the trace space happens first when the datum is
analytic) and solves the interior Laplace equation; its companion, the
discrete (variational) normal derivative, recovers a trace function d
from (d, z)_Gamma = (grad phi, grad z) - (rhs, z) for all P1 z.
"""

import numpy as np
from scipy import sparse

from .mesh import Mesh


class DegenerateElement(RuntimeError):
    """A triangle with vanishing or negative area reached assembly."""


class QuadratureFailure(RuntimeError):
    """Non-finite values met while evaluating data at quadrature points."""


class SolverDivergence(RuntimeError):
    """The conjugate gradient iteration exhausted its budget."""


class NonzeroTrace(ValueError):
    """An operation required a function vanishing on the boundary."""


# ----------------------------------------------------------------------
# quadrature rules
# ----------------------------------------------------------------------

class QuadratureRule:
    """Nodes and weights on the reference triangle or the unit interval.

    Triangle rules use the reference triangle (0,0)-(1,0)-(0,1) and
    weights summing to its measure 1/2; interval rules live on [0,1]
    with weights summing to 1.  `order` is the highest total polynomial
    degree integrated exactly.
    """

    def __init__(self, name, dim, order, points, weights):
        self.name = name
        self.dim = dim
        self.order = order
        self.points = np.asarray(points, dtype=float)
        self.weights = np.asarray(weights, dtype=float)

    def __repr__(self):
        return "QuadratureRule(%s, dim=%d, order=%d, %d points)" % (
            self.name, self.dim, self.order, len(self.weights))


def _triangle_rule_order5():
    s15 = np.sqrt(15.0)
    a = (6.0 + s15) / 21.0
    b = (6.0 - s15) / 21.0
    wa = (155.0 + s15) / 1200.0
    wb = (155.0 - s15) / 1200.0
    pts = [(1.0 / 3.0, 1.0 / 3.0),
           (a, a), (1.0 - 2.0 * a, a), (a, 1.0 - 2.0 * a),
           (b, b), (1.0 - 2.0 * b, b), (b, 1.0 - 2.0 * b)]
    w = np.array([9.0 / 40.0, wa, wa, wa, wb, wb, wb]) * 0.5
    return QuadratureRule("tri7", 2, 5, pts, w)


def _triangle_rule_order9():
    # Duffy: collapse a 6x6 Gauss grid onto the triangle; exact through
    # degree 10 in the first variable, so order 9 on the triangle.
    x, w = np.polynomial.legendre.leggauss(6)
    u = 0.5 * (x + 1.0)
    wu = 0.5 * w
    pts = []
    wts = []
    for i in range(6):
        for j in range(6):
            pts.append((u[i], u[j] * (1.0 - u[i])))
            wts.append(wu[i] * wu[j] * (1.0 - u[i]))
    return QuadratureRule("tri-duffy36", 2, 9, pts, wts)


def _edge_rule(n, order):
    x, w = np.polynomial.legendre.leggauss(n)
    return QuadratureRule("edge%d" % n, 1, order, 0.5 * (x + 1.0), 0.5 * w)


_TRI_RULES = {5: _triangle_rule_order5(), 9: _triangle_rule_order9()}
_EDGE_RULES = {5: _edge_rule(3, 5), 9: _edge_rule(5, 9)}


def triangle_rule(order=5):
    """Smallest shipped triangle rule exact at least to the given order."""
    for o in sorted(_TRI_RULES):
        if order <= o:
            return _TRI_RULES[o]
    raise ValueError("no triangle rule of order %d" % order)


def edge_rule(order=5):
    for o in sorted(_EDGE_RULES):
        if order <= o:
            return _EDGE_RULES[o]
    raise ValueError("no edge rule of order %d" % order)


# ----------------------------------------------------------------------
# discrete functions
# ----------------------------------------------------------------------

class VolumeFunction:
    """P1 function on a mesh: one coefficient per vertex."""

    def __init__(self, mesh, coefficients):
        self.mesh = mesh
        self.coefficients = np.asarray(coefficients, dtype=float)
        if self.coefficients.shape != (mesh.num_vertices,):
            raise ValueError("expected one coefficient per vertex")

    def __call__(self, pts):
        """Evaluate at arbitrary points via barycentric point location."""
        pts = np.asarray(pts, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        verts = self.mesh.vertices
        tris = self.mesh.triangles
        p0 = verts[tris[:, 0]]
        d1 = verts[tris[:, 1]] - p0
        d2 = verts[tris[:, 2]] - p0
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        out = np.empty(len(pts))
        for i, p in enumerate(pts):
            r = p - p0
            xi = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
            eta = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
            lam = np.minimum(np.minimum(xi, eta), 1.0 - xi - eta)
            t = int(np.argmax(lam))
            if lam[t] < -1e-9:
                raise ValueError("point %s outside the mesh" % (p,))
            c = self.coefficients[tris[t]]
            out[i] = c[0] * (1.0 - xi[t] - eta[t]) + c[1] * xi[t] + c[2] * eta[t]
        return float(out[0]) if single else out

    def trace(self):
        """Boundary-cycle coefficients as a TraceFunction."""
        return TraceFunction(self.mesh,
                             self.coefficients[self.mesh.boundary_vertices()])


class TraceFunction:
    """Piecewise linear function on the boundary, in cycle numbering."""

    def __init__(self, mesh, coefficients):
        self.mesh = mesh
        self.coefficients = np.asarray(coefficients, dtype=float)
        if self.coefficients.shape != (mesh.num_boundary_edges,):
            raise ValueError("expected one coefficient per boundary vertex")

    def scatter(self):
        """Full vertex vector: boundary coefficients, zero inside."""
        full = np.zeros(self.mesh.num_vertices)
        full[self.mesh.boundary_vertices()] = self.coefficients
        return full


class NestedVolumeFunction:
    """P1 function living on a repeated red refinement of a root mesh.

    Holds the chain of meshes produced by refine_regular and the
    coefficients on the finest one.  Red refinement numbers the
    children of triangle t as 4t..4t+3 with known barycentric regions,
    so a point with a known root triangle is located on the fine mesh
    by descending the chain in O(depth).
    """

    def __init__(self, chain, coefficients):
        if len(chain) < 1:
            raise ValueError("empty refinement chain")
        self.chain = list(chain)
        self.fine = VolumeFunction(self.chain[-1], coefficients)

    @property
    def mesh(self):
        return self.chain[0]

    @property
    def coefficients(self):
        return self.fine.coefficients

    def _barycentric(self, level, tri, pts):
        verts = self.chain[level].vertices
        tris = self.chain[level].triangles[tri]
        p0 = verts[tris[:, 0]]
        d1 = verts[tris[:, 1]] - p0
        d2 = verts[tris[:, 2]] - p0
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        r = pts - p0
        xi = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
        eta = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
        return np.column_stack([1.0 - xi - eta, xi, eta])

    def values_on_root(self, tri, pts):
        """Values at points whose root-mesh triangle indices are known."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        cur = np.asarray(tri, dtype=np.int64).copy()
        for level in range(len(self.chain) - 1):
            lam = self._barycentric(level, cur, pts)
            child = np.where(lam[:, 0] >= 0.5, 0,
                             np.where(lam[:, 1] >= 0.5, 1,
                                      np.where(lam[:, 2] >= 0.5, 2, 3)))
            cur = 4 * cur + child
        lam = self._barycentric(len(self.chain) - 1, cur, pts)
        nodal = self.fine.coefficients[self.chain[-1].triangles[cur]]
        return np.sum(nodal * lam, axis=1)

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        root = self.chain[0]
        verts = root.vertices
        tris = root.triangles
        p0 = verts[tris[:, 0]]
        d1 = verts[tris[:, 1]] - p0
        d2 = verts[tris[:, 2]] - p0
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        idx = np.empty(len(pts), dtype=np.int64)
        for i, p in enumerate(pts):
            r = p - p0
            xi = (r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]) / det
            eta = (d1[:, 0] * r[:, 1] - d1[:, 1] * r[:, 0]) / det
            lam = np.minimum(np.minimum(xi, eta), 1.0 - xi - eta)
            t = int(np.argmax(lam))
            if lam[t] < -1e-9:
                raise ValueError("point %s outside the mesh" % (p,))
            idx[i] = t
        out = self.values_on_root(idx, pts)
        return float(out[0]) if single else out


class SumField:
    """Pointwise sum of volume data terms (P1 functions and evaluators)."""

    def __init__(self, parts):
        self.parts = list(parts)

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        total = np.zeros(len(pts))
        for part in self.parts:
            if isinstance(part, VolumeFunction):
                total += part(pts)
            else:
                total += np.asarray(part(pts), dtype=float)
        return float(total[0]) if single else total


class DofMap:
    """Boundary-cycle and interior numbering of the mesh vertices."""

    def __init__(self, mesh):
        self.mesh = mesh
        self.boundary = mesh.boundary_vertices().copy()
        self.interior = mesh.interior_vertices().copy()
        self.boundary_position = mesh.boundary_position().copy()
        self.interior_position = np.full(mesh.num_vertices, -1, dtype=np.int64)
        self.interior_position[self.interior] = np.arange(len(self.interior))

    @property
    def num_boundary(self):
        return len(self.boundary)

    @property
    def num_interior(self):
        return len(self.interior)


def dof_map(mesh):
    if "fem:dof" not in mesh._cache:
        mesh._cache["fem:dof"] = DofMap(mesh)
    return mesh._cache["fem:dof"]


class SparseSymOperator:
    """Thin wrapper around a symmetric CSR matrix."""

    def __init__(self, mat, name=""):
        self.mat = sparse.csr_matrix(mat)
        self.n = self.mat.shape[0]
        self.name = name

    def matvec(self, x):
        return self.mat @ x

    def diagonal(self):
        return self.mat.diagonal()

    def toarray(self):
        return self.mat.toarray()

    def __repr__(self):
        return "SparseSymOperator(%s, n=%d, nnz=%d)" % (
            self.name or "?", self.n, self.mat.nnz)


# ----------------------------------------------------------------------
# geometry and assembly
# ----------------------------------------------------------------------

def _triangle_geometry(mesh):
    """Areas and P1 shape gradients, cached on the mesh."""
    if "fem:geom" in mesh._cache:
        return mesh._cache["fem:geom"]
    p = mesh.vertices[mesh.triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    if np.any(det <= 0.0):
        raise DegenerateElement("nonpositive jacobian in assembly")
    areas = 0.5 * det
    grads = np.empty((mesh.num_triangles, 3, 2))
    # gradients of barycentric coordinates
    grads[:, 1, 0] = d2[:, 1] / det
    grads[:, 1, 1] = -d2[:, 0] / det
    grads[:, 2, 0] = -d1[:, 1] / det
    grads[:, 2, 1] = d1[:, 0] / det
    grads[:, 0] = -grads[:, 1] - grads[:, 2]
    mesh._cache["fem:geom"] = (areas, grads)
    return areas, grads


def assemble_stiffness(mesh):
    """Global stiffness matrix (grad u, grad v), cached on the mesh."""
    if "fem:A" in mesh._cache:
        return mesh._cache["fem:A"]
    areas, grads = _triangle_geometry(mesh)
    local = np.einsum("tid,tjd->tij", grads, grads) * areas[:, None, None]
    tris = mesh.triangles
    rows = np.repeat(tris[:, :, None], 3, axis=2).ravel()
    cols = np.repeat(tris[:, None, :], 3, axis=1).ravel()
    nv = mesh.num_vertices
    A = sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(nv, nv)).tocsr()
    A = (A + A.T) * 0.5
    op = SparseSymOperator(A, "stiffness")
    mesh._cache["fem:A"] = op
    return op


def assemble_mass(mesh):
    """Global volume mass matrix, cached on the mesh."""
    if "fem:M" in mesh._cache:
        return mesh._cache["fem:M"]
    areas, _ = _triangle_geometry(mesh)
    base = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    local = areas[:, None, None] * base[None, :, :]
    tris = mesh.triangles
    rows = np.repeat(tris[:, :, None], 3, axis=2).ravel()
    cols = np.repeat(tris[:, None, :], 3, axis=1).ravel()
    nv = mesh.num_vertices
    Mm = sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(nv, nv)).tocsr()
    Mm = (Mm + Mm.T) * 0.5
    op = SparseSymOperator(Mm, "mass")
    mesh._cache["fem:M"] = op
    return op


def boundary_edge_lengths(mesh):
    if "fem:blen" not in mesh._cache:
        v = mesh.vertices
        e = mesh.boundary_edges
        mesh._cache["fem:blen"] = np.hypot(
            *(v[e[:, 1]] - v[e[:, 0]]).T)
    return mesh._cache["fem:blen"]


def assemble_boundary_mass(mesh):
    """Trace-space mass matrix in cycle numbering (cyclic tridiagonal)."""
    if "fem:Mb" in mesh._cache:
        return mesh._cache["fem:Mb"]
    nb = mesh.num_boundary_edges
    L = boundary_edge_lengths(mesh)
    i = np.arange(nb)
    j = (i + 1) % nb
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([i, j, j, i])
    vals = np.concatenate([L / 3.0, L / 3.0, L / 6.0, L / 6.0])
    Mb = sparse.coo_matrix((vals, (rows, cols)), shape=(nb, nb)).tocsr()
    op = SparseSymOperator(Mb, "boundary-mass")
    mesh._cache["fem:Mb"] = op
    return op


def element_quadrature(mesh, order=5):
    """Physical quadrature points/weights per triangle, cached.

    Returns (pts, w, bary): pts has shape (nt, nq, 2), w (nt, nq) with
    sum(w[t]) = area of triangle t, and bary (nq, 3) holds the reference
    shape function values at the rule nodes.
    """
    key = "fem:quad%d" % order
    if key in mesh._cache:
        return mesh._cache[key]
    rule = triangle_rule(order)
    xi = rule.points
    bary = np.column_stack([1.0 - xi[:, 0] - xi[:, 1], xi[:, 0], xi[:, 1]])
    p = mesh.vertices[mesh.triangles]
    pts = np.einsum("qk,tkd->tqd", bary, p)
    areas, _ = _triangle_geometry(mesh)
    w = 2.0 * areas[:, None] * rule.weights[None, :]
    mesh._cache[key] = (pts, w, bary)
    return mesh._cache[key]


def eval_volume_data(mesh, data, order=5):
    """Values of volume data at the element quadrature points, (nt, nq).

    P1 coefficient data is evaluated exactly from nodal values; analytic
    evaluators are called on the physical points; SumField combines both.
    """
    pts, w, bary = element_quadrature(mesh, order)
    nt, nq = w.shape
    if isinstance(data, SumField):
        vals = np.zeros((nt, nq))
        for part in data.parts:
            vals += eval_volume_data(mesh, part, order)
        return vals
    if isinstance(data, VolumeFunction):
        nodal = data.coefficients[mesh.triangles]
        return nodal @ bary.T
    if isinstance(data, NestedVolumeFunction):
        if data.mesh is not mesh:
            raise QuadratureFailure("nested data rooted on a different mesh")
        tri = np.repeat(np.arange(nt, dtype=np.int64), nq)
        return data.values_on_root(tri, pts.reshape(-1, 2)).reshape(nt, nq)
    if np.isscalar(data):
        return np.full((nt, nq), float(data))
    vals = np.asarray(data(pts.reshape(-1, 2)), dtype=float).reshape(nt, nq)
    if not np.all(np.isfinite(vals)):
        raise QuadratureFailure("non-finite volume data at quadrature points")
    return vals


def assemble_load_volume(mesh, f, order=5):
    """Vertex load vector (f, lambda_i) by element quadrature."""
    pts, w, bary = element_quadrature(mesh, order)
    vals = eval_volume_data(mesh, f, order)
    local = np.einsum("tq,tq,qk->tk", w, vals, bary)
    b = np.zeros(mesh.num_vertices)
    np.add.at(b, mesh.triangles.ravel(), local.ravel())
    return b


def assemble_load_boundary(mesh, g, order=5):
    """Cycle-indexed load vector (g, e_i)_Gamma by edge quadrature."""
    rule = edge_rule(order)
    s, w = rule.points, rule.weights
    nb = mesh.num_boundary_edges
    L = boundary_edge_lengths(mesh)
    v = mesh.vertices
    b = np.zeros(nb)
    for i, (v0, v1, owner, seg) in enumerate(mesh.boundary_edges):
        p, q = v[int(v0)], v[int(v1)]
        pts = p[None, :] + s[:, None] * (q - p)[None, :]
        vals = np.asarray(g(pts, int(seg)), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise QuadratureFailure("non-finite boundary data on edge %d" % i)
        b[i] += L[i] * np.sum(w * vals * (1.0 - s))
        b[(i + 1) % nb] += L[i] * np.sum(w * vals * s)
    return b


# ----------------------------------------------------------------------
# conjugate gradients
# ----------------------------------------------------------------------

def _as_matvec(A):
    if isinstance(A, SparseSymOperator):
        return A.matvec
    if sparse.issparse(A):
        return lambda x: A @ x
    if isinstance(A, np.ndarray):
        return lambda x: A @ x
    if callable(A):
        return A
    raise TypeError("cannot interpret %r as a linear operator" % (A,))


def cg_solve(A, b, tol=1e-11, maxit=None, jacobi=None, x0=None):
    """Jacobi-preconditioned conjugate gradients.

    Stops when ||b - A x||_2 <= tol * ||b||_2 and returns (x, iterations).
    `jacobi` is the matrix diagonal (identity preconditioning if None).
    Raises SolverDivergence when the iteration budget is exhausted.
    """
    b = np.asarray(b, dtype=float)
    n = len(b)
    matvec = _as_matvec(A)
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros(n), 0
    if maxit is None:
        maxit = 20 * n + 200
    if jacobi is not None:
        d = np.asarray(jacobi, dtype=float)
        if np.any(d <= 0.0):
            raise ValueError("jacobi preconditioner needs a positive diagonal")
        minv = 1.0 / d
    else:
        minv = None
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - matvec(x) if x0 is not None else b.copy()
    target = tol * nb
    if np.linalg.norm(r) <= target:
        return x, 0
    z = r * minv if minv is not None else r
    p = z.copy()
    rz = r @ z
    for it in range(1, maxit + 1):
        Ap = matvec(p)
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= target:
            return x, it
        z = r * minv if minv is not None else r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverDivergence("cg did not reach %g within %d iterations" % (tol, maxit))


# ----------------------------------------------------------------------
# boundary projection, Dirichlet solves, normal derivative
# ----------------------------------------------------------------------

def l2_project_boundary(mesh, g, order=5):
    """L2 projection of boundary data onto the trace space."""
    if isinstance(g, TraceFunction):
        return g
    b = assemble_load_boundary(mesh, g, order)
    Mb = assemble_boundary_mass(mesh)
    q, _ = cg_solve(Mb, b, tol=1e-13, jacobi=Mb.diagonal())
    return TraceFunction(mesh, q)


def _interior_blocks(mesh):
    if "fem:AII" in mesh._cache:
        return mesh._cache["fem:AII"]
    A = assemble_stiffness(mesh).mat
    dof = dof_map(mesh)
    AII = A[dof.interior][:, dof.interior].tocsr()
    AIB = A[dof.interior][:, dof.boundary].tocsr()
    mesh._cache["fem:AII"] = (AII, AIB, AII.diagonal())
    return mesh._cache["fem:AII"]


def _volume_load(mesh, f, order):
    if f is None:
        return np.zeros(mesh.num_vertices)
    if isinstance(f, np.ndarray) and f.shape == (mesh.num_vertices,):
        return f
    if isinstance(f, VolumeFunction):
        return assemble_mass(mesh).matvec(f.coefficients)
    return assemble_load_volume(mesh, f, order)


def solve_dirichlet(mesh, f, g, tol=1e-11, maxit=None, order=5, x0=None):
    """P1 solution of -Laplace(y) = f with Dirichlet trace g.

    g may be a TraceFunction (used nodally as is), a cycle-indexed
    coefficient vector, or an analytic evaluator (L2-projected first).
    f may be None, an analytic evaluator, a VolumeFunction, or a
    precomputed vertex load vector.  Returns a VolumeFunction whose
    boundary coefficients equal g exactly; the iteration count of the
    interior solve is stored on the result as solve_iterations.
    """
    dof = dof_map(mesh)
    if isinstance(g, TraceFunction):
        gb = g.coefficients
    elif isinstance(g, np.ndarray) and g.shape == (dof.num_boundary,):
        gb = g
    elif callable(g):
        gb = l2_project_boundary(mesh, g, order).coefficients
    else:
        raise TypeError("unsupported boundary datum %r" % (g,))
    b = _volume_load(mesh, f, order)
    AII, AIB, diag = _interior_blocks(mesh)
    y = np.zeros(mesh.num_vertices)
    y[dof.boundary] = gb
    rhs = b[dof.interior] - AIB @ gb
    if dof.num_interior:
        yi, iters = cg_solve(AII, rhs, tol=tol, maxit=maxit, jacobi=diag,
                             x0=x0[dof.interior] if x0 is not None else None)
        y[dof.interior] = yi
    else:
        iters = 0
    out = VolumeFunction(mesh, y)
    out.solve_iterations = iters
    return out


def discrete_harmonic_extension(mesh, u, tol=1e-11, order=5, x0=None):
    """S_h u: boundary data nodally, discretely harmonic inside."""
    return solve_dirichlet(mesh, None, u, tol=tol, order=order, x0=x0)


def discrete_normal_derivative(mesh, phi, rhs, tol=1e-13, order=5):
    """Variational normal derivative of a zero-trace P1 function.

    Solves (d, z)_Gamma = (grad phi, grad z) - (rhs, z) over the trace
    space; rhs accepts the same forms as the Dirichlet solver.  Raises
    NonzeroTrace when phi has a boundary coefficient above 1e-12.
    """
    coeffs = phi.coefficients if isinstance(phi, VolumeFunction) else np.asarray(phi)
    dof = dof_map(mesh)
    if np.max(np.abs(coeffs[dof.boundary])) > 1e-12:
        raise NonzeroTrace("phi does not vanish on the boundary")
    b = _volume_load(mesh, rhs, order)
    A = assemble_stiffness(mesh)
    residual = A.matvec(coeffs) - b
    r = residual[dof.boundary]
    Mb = assemble_boundary_mass(mesh)
    d, _ = cg_solve(Mb, r, tol=tol, jacobi=Mb.diagonal())
    return TraceFunction(mesh, d)


def l2_norm_volume(mesh, v):
    c = v.coefficients if isinstance(v, VolumeFunction) else np.asarray(v)
    Mm = assemble_mass(mesh)
    return float(np.sqrt(max(c @ Mm.matvec(c), 0.0)))


def l2_norm_boundary(mesh, u):
    c = u.coefficients if isinstance(u, TraceFunction) else np.asarray(u)
    Mb = assemble_boundary_mass(mesh)
    return float(np.sqrt(max(c @ Mb.matvec(c), 0.0)))
