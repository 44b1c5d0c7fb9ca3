"""
Manufactured optimal controls with corner singularities.

On a sector domain with opening angle omega at the primary corner, the
adjoint state is manufactured as the product

    phi(x) = s(x) b(x),   s = r^lam sin(lam theta),

of a harmonic corner singularity s (lam equal to pi/omega or twice
that) and a smooth bubble b that vanishes on the part of the boundary
not covered by the two corner rays, so that phi vanishes on the whole
boundary.  The optimal control is the projection of the scaled normal
derivative,

    u(x) = clip(d(x), a, b),   d = (1/nu) dphi/dn,

which inherits the r^(lam-1) blow-up at the corner whenever lam < 1;
with finite bounds the projection clamps a neighbourhood of the corner
to the lower bound.  Prescribing the target

    y_target = S(u) + Laplacian(phi)

(a harmonic extension of u plus the analytic Laplacian) makes the
computed discrete control approximate u, and the distance to an
interpolant of u measures the convergence order.  The extension is
computed by the finite element method, by default on the study mesh
itself, optionally on a reference mesh obtained by red-refining the
study mesh a configurable number of times; the choice perturbs the
data at the order of the state approximation error, which stays far
below the control error on the shipped cases.

Three interpolants of u are provided.  The plain nodal interpolant
used by the convergence studies takes exact nodal values, except at a
corner where u is unbounded and unclamped, whose value is substituted
by u evaluated a short arclength along the two adjacent boundary
segments.  The modified Lagrange interpolant assigns the bound value
at nodes whose pair of adjacent edges touches a bound and the exact
nodal value elsewhere.  The weighted quasi-interpolant assigns the
ratio

    u*_j = int(d u e_j) / int(d e_j),   d = nu u - dphi/dn,

over the two adjacent edges (a patch average where the denominator
degenerates, in particular on every patch that misses the active set,
where d vanishes identically); the construction makes u* orthogonal to
d in the boundary L2 inner product.
"""

import numpy as np

from . import mesh as _mesh
from . import fem


class CornerSingularity(ValueError):
    """Divergent evaluation exactly at the singular corner."""


class CaseMismatch(ValueError):
    """The requested bubble does not vanish on the required boundary."""


class AmbiguousBounds(RuntimeError):
    """A boundary node touches both bounds within tolerance."""


# ----------------------------------------------------------------------
# corner frame and the harmonic singularity
# ----------------------------------------------------------------------

class CornerFrame:
    """Local polar coordinates at one corner of a polygon."""

    def __init__(self, spec, corner_index=0):
        self.spec = spec
        self.corner_index = corner_index
        self.corner = spec.corners[corner_index].copy()
        self.omega = spec.angles[corner_index]
        t = spec.side_tangent(corner_index)
        self.rotation = np.array([[t[0], -t[1]], [t[1], t[0]]])

    def polar(self, pts):
        return _mesh.local_polar(self.spec, self.corner_index, pts)


def eval_singular(frame, lam, pts, gradient=False):
    """Values (and optionally gradients) of r^lam sin(lam theta).

    The gradient at r = 0 raises CornerSingularity when lam < 1, is the
    constant unit-tangential vector when lam = 1, and vanishes when
    lam > 1.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    r, theta = frame.polar(pts)
    r = np.atleast_1d(r)
    theta = np.atleast_1d(theta)
    s = r ** lam * np.sin(lam * theta)
    if not gradient:
        return s
    at_corner = r == 0.0
    if np.any(at_corner) and lam < 1.0:
        raise CornerSingularity("gradient of r^%g at the corner" % lam)
    away = ~at_corner
    rad = np.zeros_like(r)
    rad[away] = lam * r[away] ** (lam - 1.0)
    if lam == 1.0:
        rad[at_corner] = 1.0
    e_r = np.column_stack([np.cos(theta), np.sin(theta)])
    e_t = np.column_stack([-np.sin(theta), np.cos(theta)])
    local = rad[:, None] * (np.sin(lam * theta)[:, None] * e_r
                            + np.cos(lam * theta)[:, None] * e_t)
    grad = local @ frame.rotation.T
    return s, grad


# ----------------------------------------------------------------------
# bubbles
# ----------------------------------------------------------------------

def bubble_case(omega1):
    """The shipped bubble matching the opening angle."""
    if omega1 <= np.pi / 2.0 + 1e-12:
        return 1
    if omega1 <= 3.0 * np.pi / 4.0 + 1e-12:
        return 2
    if omega1 <= 5.0 * np.pi / 4.0 + 1e-12:
        return 3
    return 4


def _allowed_cases(omega1):
    if omega1 <= np.pi / 2.0 + 1e-12:
        return (1,)
    if omega1 <= 3.0 * np.pi / 4.0 + 1e-12:
        return (2, 3, 4)
    if omega1 <= 5.0 * np.pi / 4.0 + 1e-12:
        return (3, 4)
    return (4,)


def bubble_value(case, omega1, pts):
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    if case == 1:
        return np.sin(omega1) * (x - 1.0) + (1.0 - np.cos(omega1)) * y
    if case == 2:
        return (1.0 - x) * (1.0 - y)
    if case == 3:
        return (1.0 - x ** 2) * (1.0 - y)
    if case == 4:
        return (1.0 - x ** 2) * (1.0 - y ** 2)
    raise CaseMismatch("unknown bubble case %r" % (case,))


def bubble_gradient(case, omega1, pts):
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    g = np.empty((len(pts), 2))
    if case == 1:
        g[:, 0] = np.sin(omega1)
        g[:, 1] = 1.0 - np.cos(omega1)
    elif case == 2:
        g[:, 0] = -(1.0 - y)
        g[:, 1] = -(1.0 - x)
    elif case == 3:
        g[:, 0] = -2.0 * x * (1.0 - y)
        g[:, 1] = -(1.0 - x ** 2)
    elif case == 4:
        g[:, 0] = -2.0 * x * (1.0 - y ** 2)
        g[:, 1] = -2.0 * y * (1.0 - x ** 2)
    else:
        raise CaseMismatch("unknown bubble case %r" % (case,))
    return g


def bubble_laplacian(case, omega1, pts):
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    if case in (1, 2):
        return np.zeros(len(pts))
    if case == 3:
        return -2.0 * (1.0 - y)
    if case == 4:
        return -2.0 * (1.0 - y ** 2) - 2.0 * (1.0 - x ** 2)
    raise CaseMismatch("unknown bubble case %r" % (case,))


# ----------------------------------------------------------------------
# exact fields
# ----------------------------------------------------------------------

class ExactFields:
    """Closed-form adjoint, control, and data of one manufactured problem."""

    def __init__(self, spec, lam, case, nu, bounds):
        self.spec = spec
        self.frame = CornerFrame(spec, 0)
        self.lam = lam
        self.case = case
        self.nu = nu
        self.bounds = bounds
        # sign of the normal-derivative blow-up along both corner rays
        self.corner_limit = -np.sign(
            float(bubble_value(case, spec.angles[0], np.zeros((1, 2)))[0]))

    def phi(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        s = eval_singular(self.frame, self.lam, pts)
        return s * bubble_value(self.case, self.frame.omega, pts)

    def grad_phi(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        s, gs = eval_singular(self.frame, self.lam, pts, gradient=True)
        b = bubble_value(self.case, self.frame.omega, pts)
        gb = bubble_gradient(self.case, self.frame.omega, pts)
        return b[:, None] * gs + s[:, None] * gb

    def laplacian_phi(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        s, gs = eval_singular(self.frame, self.lam, pts, gradient=True)
        b = bubble_value(self.case, self.frame.omega, pts)
        gb = bubble_gradient(self.case, self.frame.omega, pts)
        lb = bubble_laplacian(self.case, self.frame.omega, pts)
        return 2.0 * np.sum(gs * gb, axis=1) + s * lb

    def dn_phi(self, pts, seg):
        """Outward normal derivative of phi on boundary side `seg`.

        Points at the singular corner itself get the signed limit
        (plus or minus infinity) when lam < 1.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        n = self.spec.side_normal(seg)
        r, _ = self.frame.polar(pts)
        r = np.atleast_1d(r)
        at_corner = r == 0.0
        out = np.empty(len(pts))
        if np.any(at_corner):
            if self.lam < 1.0:
                out[at_corner] = self.corner_limit * np.inf
            else:
                s, gs = eval_singular(self.frame, self.lam,
                                      pts[at_corner], gradient=True)
                b = bubble_value(self.case, self.frame.omega, pts[at_corner])
                out[at_corner] = (b * (gs @ n)) + s * (
                    bubble_gradient(self.case, self.frame.omega,
                                    pts[at_corner]) @ n)
        away = ~at_corner
        if np.any(away):
            out[away] = self.grad_phi(pts[away]) @ n
        return out

    def candidate(self, pts, seg):
        """Unprojected control candidate (1/nu) dphi/dn."""
        return self.dn_phi(pts, seg) / self.nu

    def u_bar(self, pts, seg):
        """Optimal control: the candidate projected onto [a, b]."""
        return np.clip(self.candidate(pts, seg),
                       self.bounds[0], self.bounds[1])

    def d_bar(self, pts, seg):
        """Multiplier residual nu u - dphi/dn, exactly zero off the
        active set (everywhere, when both bounds are infinite)."""
        a, b = self.bounds
        cand = self.candidate(pts, seg)
        out = np.zeros_like(cand)
        low = cand < a
        out[low] = self.nu * (a - cand[low])
        high = cand > b
        out[high] = self.nu * (b - cand[high])
        return out


class ManufacturedProblem:
    """Manufactured problem on a sector domain.

    `lambda_choice` selects the exponent of the singular factor:
    "leading" uses pi/omega1, "special" uses 2 pi/omega1 and requires a
    reentrant corner (omega1 > pi).  With `constrained` the default
    bounds are a = -omega1/pi and b = 1.
    """

    def __init__(self, omega1, lambda_choice="leading", constrained=False,
                 nu=1.0, case=None, bounds=None, reference_levels=None):
        self.omega1 = float(omega1)
        self.spec = _mesh.build_sector_domain(self.omega1)
        self.lambda1 = np.pi / self.omega1
        if lambda_choice == "leading":
            self.lambda_used = self.lambda1
        elif lambda_choice == "special":
            if not self.omega1 > np.pi:
                raise ValueError("the special exponent needs omega1 > pi")
            self.lambda_used = 2.0 * self.lambda1
        else:
            raise ValueError("unknown lambda choice %r" % (lambda_choice,))
        self.lambda_choice = lambda_choice
        if case is None:
            case = bubble_case(self.omega1)
        elif case not in _allowed_cases(self.omega1):
            raise CaseMismatch(
                "bubble case %d does not vanish on the boundary of the "
                "omega1=%g sector" % (case, self.omega1))
        self.case = case
        self.constrained = bool(constrained)
        if bounds is not None:
            self.bounds = (float(bounds[0]), float(bounds[1]))
        elif constrained:
            self.bounds = (-1.0 / self.lambda1, 1.0)
        else:
            self.bounds = (-np.inf, np.inf)
        self.nu = float(nu)
        self.reference_levels = (DEFAULT_REFERENCE_LEVELS
                                 if reference_levels is None
                                 else int(reference_levels))
        self.fields = ExactFields(self.spec, self.lambda_used, case,
                                  self.nu, self.bounds)

    def y_omega(self, mesh):
        return build_y_omega(self.fields, mesh,
                             reference_levels=self.reference_levels)

    def control_problem(self, mesh):
        from . import control
        return control.ControlProblem(mesh, self.y_omega(mesh), nu=self.nu,
                                      bounds=self.bounds)


DEFAULT_REFERENCE_LEVELS = 0


def build_y_omega(fields, mesh, reference_levels=DEFAULT_REFERENCE_LEVELS):
    """Target datum S(u) + Laplacian(phi) on the given mesh.

    The first part is the finite element harmonic extension of the
    boundary projection of the exact control, computed by default on
    the study mesh itself, or on a reference mesh `reference_levels`
    red refinements finer (evaluated on the study mesh through the
    refinement chain); the second is analytic.  The same-level default
    makes the data part of the state misfit exactly representable; the
    induced data perturbation either way is of the order of the state
    approximation error, which is dominated by the control error in
    the shipped cases (measured below one percent of e_j).  The
    returned SumField evaluates at arbitrary interior points and
    carries the extension as `ybar_h`.
    """
    chain = [mesh]
    for _ in range(int(reference_levels)):
        chain.append(_mesh.refine_regular(chain[-1]))
    ref = chain[-1]
    u_proj = fem.l2_project_boundary(ref, fields.u_bar)
    ybar = fem.discrete_harmonic_extension(ref, u_proj, tol=1e-12)
    if len(chain) == 1:
        out = fem.SumField([ybar, fields.laplacian_phi])
        out.ybar_h = ybar
        return out
    nested = fem.NestedVolumeFunction(chain, ybar.coefficients)
    out = fem.SumField([nested, fields.laplacian_phi])
    out.ybar_h = nested
    return out


# ----------------------------------------------------------------------
# interpolants of the exact control
# ----------------------------------------------------------------------

def _boundary_nodes(mesh):
    """Per boundary node: position, both adjacent edges with their data."""
    v = mesh.vertices
    edges = mesh.boundary_edges
    nb = len(edges)
    L = fem.boundary_edge_lengths(mesh)
    nodes = []
    for j in range(nb):
        prev = (j - 1) % nb
        nodes.append({
            "vertex": int(edges[j, 0]),
            "point": v[edges[j, 0]],
            "edges": ((int(edges[prev, 0]), int(edges[prev, 1]),
                       int(edges[prev, 3]), L[prev]),
                      (int(edges[j, 0]), int(edges[j, 1]),
                       int(edges[j, 3]), L[j])),
        })
    return nodes


def corner_substitution_points(fields, mesh, epsilon=None):
    """Evaluation points replacing the singular corner node.

    One point on each corner ray, by default a quarter of the adjacent
    boundary edge length away from the corner; `epsilon` overrides the
    distance on both rays.
    """
    v = mesh.vertices
    edges = mesh.boundary_edges
    L = fem.boundary_edge_lengths(mesh)
    nb = len(edges)
    out = []
    for edge_i, frac_from in ((0, 0), (nb - 1, 1)):
        p = v[edges[edge_i, 0]]
        q = v[edges[edge_i, 1]]
        eps = L[edge_i] / 4.0 if epsilon is None else float(epsilon)
        t = eps / L[edge_i]
        if frac_from == 0:
            pt = p + t * (q - p)
        else:
            pt = q + t * (p - q)
        out.append((pt, int(edges[edge_i, 3])))
    return out


def _corner_node_value(fields, mesh, epsilon):
    vals = [float(fields.u_bar(pt[None, :], seg)[0])
            for pt, seg in corner_substitution_points(fields, mesh, epsilon)]
    return 0.5 * (vals[0] + vals[1])


def modified_lagrange_interpolant(fields, mesh, epsilon_corner=None,
                                  samples=33, tol=1e-10):
    """Nodal interpolant with bound detection on the adjacent edges.

    A node whose two adjacent edges contain a point at the lower bound
    (within `tol`) gets the lower bound, symmetrically for the upper
    bound; both at once raise AmbiguousBounds.  Other nodes get the
    exact control value, with the corner substitution where the control
    is unbounded.  The result is clipped to the bounds.
    """
    a, b = fields.bounds
    singular = fields.lam < 1.0
    s = np.linspace(0.0, 1.0, samples)
    v = mesh.vertices
    values = np.empty(mesh.num_boundary_edges)
    primary = mesh.corner_vertex_ids[0]
    for j, node in enumerate(_boundary_nodes(mesh)):
        lo = np.inf
        hi = -np.inf
        for v0, v1, seg, _ in node["edges"]:
            p, q = v[v0], v[v1]
            pts = p[None, :] + s[:, None] * (q - p)[None, :]
            vals = fields.u_bar(pts, seg)
            lo = min(lo, float(np.min(vals)))
            hi = max(hi, float(np.max(vals)))
        hits_lower = np.isfinite(a) and lo <= a + tol
        hits_upper = np.isfinite(b) and hi >= b - tol
        if hits_lower and hits_upper:
            raise AmbiguousBounds(
                "node %d touches both bounds within %g" % (j, tol))
        if hits_lower:
            values[j] = a
        elif hits_upper:
            values[j] = b
        elif node["vertex"] == primary and singular:
            values[j] = _corner_node_value(fields, mesh, epsilon_corner)
        else:
            values[j] = float(fields.u_bar(node["point"][None, :],
                                           node["edges"][1][2])[0])
    return fem.TraceFunction(mesh, np.clip(values, a, b))


def casas_raymond_interpolant(fields, mesh, order=9, clamp=False,
                              details=False):
    """Weighted quasi-interpolant u*_j = int(d u e_j) / int(d e_j).

    The weight d = nu u - dphi/dn vanishes off the active set, so the
    integrals, taken over the two edges adjacent to node j with the
    given quadrature order, degenerate on every patch that misses the
    active set (everywhere in the unconstrained case); such nodes fall
    back to the plain patch average of u.  The construction makes
    int(d (u* - u) e_j) vanish for every boundary hat e_j, hence u* is
    orthogonal to d globally.  With `clamp` the result is clipped to
    the bounds.  With `details` the per-node numerators, denominators,
    patch averages, and chosen branch come back alongside the trace
    function.
    """
    rule = fem.edge_rule(order)
    sq, wq = rule.points, rule.weights
    v = mesh.vertices
    nb = mesh.num_boundary_edges
    values = np.empty(nb)
    info = {"numerator": np.zeros(nb), "denominator": np.zeros(nb),
            "magnitude": np.zeros(nb), "patch_average": np.zeros(nb),
            "weighted": np.zeros(nb, dtype=bool)}
    for j, node in enumerate(_boundary_nodes(mesh)):
        num = 0.0
        den = 0.0
        mag = 0.0
        plain = 0.0
        length = 0.0
        for side, (v0, v1, seg, L) in enumerate(node["edges"]):
            p, q = v[v0], v[v1]
            pts = p[None, :] + sq[:, None] * (q - p)[None, :]
            # hat e_j rises toward the node: it sits at v1 of the first
            # adjacent edge and at v0 of the second
            hat = sq if side == 0 else 1.0 - sq
            d = fields.d_bar(pts, seg)
            u = fields.u_bar(pts, seg)
            num += L * np.sum(wq * d * u * hat)
            den += L * np.sum(wq * d * hat)
            mag += L * np.sum(wq * np.abs(d) * hat)
            plain += L * np.sum(wq * u)
            length += L
        weighted = abs(den) > 1e-14 * max(mag, 1e-300)
        values[j] = num / den if weighted else plain / length
        info["numerator"][j] = num
        info["denominator"][j] = den
        info["magnitude"][j] = mag
        info["patch_average"][j] = plain / length
        info["weighted"][j] = weighted
    if clamp:
        values = np.clip(values, fields.bounds[0], fields.bounds[1])
    trace = fem.TraceFunction(mesh, values)
    return (trace, info) if details else trace


def _corner_unclamped(fields):
    """True when the corner blow-up escapes the bound on its side."""
    if fields.corner_limit < 0:
        return not np.isfinite(fields.bounds[0])
    return not np.isfinite(fields.bounds[1])


def interpolate_control(fields, mesh, epsilon_corner=None):
    """Nodal interpolant of the exact control, used by the studies.

    Every boundary node receives the exact control value.  A corner
    where the control is unbounded (singular exponent and no clamping
    bound on the blow-up side) is substituted by the control evaluated
    a short arclength along both adjacent boundary segments, averaged:
    a quarter of the adjacent edge length by default, or the absolute
    distance `epsilon_corner`.
    """
    values = np.empty(mesh.num_boundary_edges)
    primary = mesh.corner_vertex_ids[0]
    substitute = fields.lam < 1.0 and _corner_unclamped(fields)
    for j, node in enumerate(_boundary_nodes(mesh)):
        if substitute and node["vertex"] == primary:
            values[j] = _corner_node_value(fields, mesh, epsilon_corner)
        else:
            values[j] = float(fields.u_bar(node["point"][None, :],
                                           node["edges"][1][2])[0])
    return fem.TraceFunction(mesh, values)
