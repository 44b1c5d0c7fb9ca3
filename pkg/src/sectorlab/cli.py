"""
Command-line interface: studies, rate queries, mesh diagnostics, checks.

Four subcommands cover the laboratory workflow:

    study   run convergence studies from a JSON config or flags and
            write CSV/JSON/plot reports with a one-line verdict each;
    rates   print the theoretical convergence rate for a domain and
            regime, or a table over a grid of opening angles;
    mesh    build a mesh family, print its structure diagnostics per
            level, optionally export the meshes to .npz archives;
    check   run the fast invariant suites (Hessian symmetry, gradient
            versus finite differences, harmonic extension, normal
            derivative identity, interpolant orthogonality, active set
            solver) on a coarse manufactured case.

Exit codes: 0 all passed, 1 usage or runtime error, 2 a verdict or
property check failed.  Angles are accepted as decimal radians or as
fraction strings such as "3pi/2".  All outputs are deterministic for a
fixed (config, seed); reports land in --output, the SECTORLAB_OUTDIR
environment variable, or the working directory, in that order.
"""

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import control, fem, manufactured, study
from . import mesh as mesh_mod

OUTDIR_ENV = "SECTORLAB_OUTDIR"

EXIT_PASS = 0
EXIT_ERROR = 1
EXIT_FAIL = 2

DEFAULT_CHECK_OMEGA = 1.5 * np.pi


def parse_angle(text):
    """Angle in radians from a decimal or a pi-fraction string.

    Accepts plain floats ("4.71238898") and strings of the form
    "[coef]pi[/den]" such as "pi", "3pi/2", "0.75pi".
    """
    s = str(text).strip().lower().replace(" ", "")
    try:
        if "pi" in s:
            head, _, tail = s.partition("pi")
            num = float(head) if head else 1.0
            den = 1.0
            if tail:
                if not tail.startswith("/"):
                    raise ValueError
                den = float(tail[1:])
            return num * np.pi / den
        return float(s)
    except ValueError:
        raise ValueError("cannot parse angle %r" % (text,))


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage failures exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write("%s: error: %s\n" % (self.prog, message))
        raise SystemExit(EXIT_ERROR)


def build_parser():
    parser = _Parser(prog="sectorlab", description=__doc__.strip(),
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command")

    st = sub.add_parser("study", help="run convergence studies")
    st.add_argument("--config", help="JSON file: one study object or a list")
    st.add_argument("--omega1", type=parse_angle,
                    help="sector opening angle (radians or e.g. 3pi/2)")
    st.add_argument("--lambda-choice", choices=("leading", "special"),
                    dest="lambda_choice")
    st.add_argument("--constrained", action="store_const", const=True,
                    dest="constrained")
    st.add_argument("--unconstrained", action="store_const", const=False,
                    dest="constrained")
    st.add_argument("--family", choices=mesh_mod.MeshFamilyKind.ALL)
    st.add_argument("--levels", type=int)
    st.add_argument("--nu", type=float)
    st.add_argument("--bounds", type=float, nargs=2, metavar=("A", "B"))
    st.add_argument("--kappa", type=float)
    st.add_argument("--seed", type=int)
    st.add_argument("--band", type=float, nargs=2, metavar=("LO", "HI"))
    st.add_argument("--no-assumption", action="store_const", const=False,
                    dest="assumption")
    st.add_argument("--quad-order", type=int, dest="quad_order")
    st.add_argument("--epsilon-corner", type=float, dest="epsilon_corner")
    st.add_argument("--reference-levels", type=int, dest="reference_levels")
    st.add_argument("--cg-tol", type=float, dest="cg_tol")
    st.add_argument("--pdas-tol", type=float, dest="pdas_tol")
    st.add_argument("--name")
    st.add_argument("--output", help="report directory")
    st.add_argument("--jobs", type=int, default=1,
                    help="run independent cases concurrently")

    rt = sub.add_parser("rates", help="print theoretical rates")
    rt.add_argument("--omega1", type=parse_angle)
    rt.add_argument("--constrained", action="store_const", const=True,
                    dest="constrained")
    rt.add_argument("--unconstrained", action="store_const", const=False,
                    dest="constrained")
    rt.add_argument("--special", action="store_true",
                    help="vanishing leading coefficient at the corner")
    rt.add_argument("--family", choices=mesh_mod.MeshFamilyKind.ALL,
                    default=mesh_mod.MeshFamilyKind.GENERIC)
    rt.add_argument("--no-assumption", action="store_const", const=False,
                    dest="assumption")
    rt.add_argument("--table", action="store_true",
                    help="print the rate table over an angle grid")

    ms = sub.add_parser("mesh", help="build and diagnose a mesh family")
    ms.add_argument("--omega1", type=parse_angle)
    ms.add_argument("--family", choices=mesh_mod.MeshFamilyKind.ALL,
                    default=mesh_mod.MeshFamilyKind.GENERIC)
    ms.add_argument("--levels", type=int, default=4)
    ms.add_argument("--kappa", type=float, default=0.2)
    ms.add_argument("--seed", type=int, default=0)
    ms.add_argument("--export", action="store_true",
                    help="write each level to a .npz archive")
    ms.add_argument("--output", help="export directory")

    ck = sub.add_parser("check", help="run the fast invariant suites")
    ck.add_argument("--omega1", type=parse_angle, default=DEFAULT_CHECK_OMEGA)
    ck.add_argument("--quad-oracle", action="store_true", dest="quad_oracle",
                    help="report order-5 versus order-9 quadrature drift")
    ck.add_argument("--flip-flux-sign", action="store_true",
                    dest="flip_flux_sign",
                    help="mutation sanity: negate the adjoint flux term")
    return parser


# ----------------------------------------------------------------------
# study
# ----------------------------------------------------------------------

_CASE_KEYS = ("omega1", "lambda_choice", "constrained", "family", "levels",
              "nu", "kappa", "seed", "quad_order", "epsilon_corner",
              "reference_levels", "cg_tol", "pdas_tol", "name", "assumption")


def _flag_overrides(ns):
    overrides = {}
    for key in _CASE_KEYS:
        value = getattr(ns, key, None)
        if value is not None:
            overrides[key] = value
    if ns.bounds is not None:
        overrides["bounds"] = tuple(ns.bounds)
    if ns.band is not None:
        overrides["band"] = tuple(ns.band)
    return overrides


def _resolve_cases(ns):
    """Case dictionaries from the config file and flag overrides."""
    overrides = _flag_overrides(ns)
    if ns.config:
        with open(ns.config) as fh:
            blob = json.load(fh)
        entries = blob if isinstance(blob, list) else [blob]
        cases = []
        for entry in entries:
            case = dict(entry)
            case.update(overrides)
            cases.append(case)
        return cases
    if "omega1" not in overrides:
        return []
    return [overrides]


def _run_case(case, default_outdir):
    """Run one study and write its reports; returns a summary dict."""
    cfg = study.StudyConfig.from_dict(case)
    report = study.run_study(cfg)
    outdir = cfg.output_dir or default_outdir
    paths = study.emit_report(report, outdir)
    return {
        "name": cfg.case_name(),
        "headline": report.headline,
        "theory": report.rate.describe(),
        "band": report.band,
        "verdict": bool(report.verdict),
        "paths": paths,
    }


def cmd_study(ns):
    try:
        cases = _resolve_cases(ns)
    except Exception as exc:
        sys.stderr.write("error: %s\n" % exc)
        return EXIT_ERROR
    if not cases:
        sys.stderr.write("usage: sectorlab study [--config FILE] "
                         "[--omega1 ANGLE] [flags]\n"
                         "error: need --config or at least --omega1\n")
        return EXIT_ERROR
    outdir = ns.output or os.environ.get(OUTDIR_ENV) or "."
    try:
        if ns.jobs and ns.jobs > 1:
            with ProcessPoolExecutor(max_workers=ns.jobs) as pool:
                futures = [pool.submit(_run_case, case, outdir)
                           for case in cases]
                results = [f.result() for f in futures]
        else:
            results = [_run_case(case, outdir) for case in cases]
    except Exception as exc:
        sys.stderr.write("error: %s\n" % exc)
        return EXIT_ERROR
    all_pass = True
    for res in results:
        verdict = "PASS" if res["verdict"] else "FAIL"
        print("%s: headline=%.4f theory[%s] band=[%.3g, %.3g] %s"
              % (res["name"], res["headline"], res["theory"],
                 res["band"][0], res["band"][1], verdict))
        all_pass = all_pass and res["verdict"]
    return EXIT_PASS if all_pass else EXIT_FAIL


# ----------------------------------------------------------------------
# rates
# ----------------------------------------------------------------------

def _rate_for(omega1, constrained, special, family, assumption):
    spec = mesh_mod.build_sector_domain(omega1)
    flags = [False] * spec.num_corners
    if special:
        flags[spec.primary_corner_index] = True
    query = study.RateQuery(spec.angles, constrained=constrained,
                            special=flags, family=family,
                            assumption=assumption)
    return study.theoretical_rate(query)


def cmd_rates(ns):
    constrained = bool(ns.constrained)
    assumption = ns.assumption is not False
    if ns.table:
        grid = np.linspace(np.pi / 3.0, 2.0 * np.pi - 0.05, 50)
        print("%-12s %-24s %-24s %-24s %-24s"
              % ("omega1", "unc-generic", "unc-superconv",
                 "con-generic", "con-superconv"))
        for w in grid:
            cells = []
            for con, fam in ((False, "generic"), (False, "superconvergent"),
                             (True, "generic"), (True, "superconvergent")):
                rate = _rate_for(w, con, ns.special, fam, assumption)
                cells.append(rate.describe())
            print("%-12.6f %-24s %-24s %-24s %-24s" % (w, *cells))
        return EXIT_PASS
    if ns.omega1 is None:
        sys.stderr.write("usage: sectorlab rates --omega1 ANGLE [flags]\n"
                         "error: need --omega1 or --table\n")
        return EXIT_ERROR
    try:
        rate = _rate_for(ns.omega1, constrained, ns.special, ns.family,
                         assumption)
    except (ValueError, study.UnsupportedRegime) as exc:
        sys.stderr.write("error: %s\n" % exc)
        return EXIT_ERROR
    print(rate.describe())
    return EXIT_PASS


# ----------------------------------------------------------------------
# mesh
# ----------------------------------------------------------------------

def cmd_mesh(ns):
    if ns.omega1 is None:
        sys.stderr.write("usage: sectorlab mesh --omega1 ANGLE [flags]\n"
                         "error: need --omega1\n")
        return EXIT_ERROR
    try:
        spec = mesh_mod.build_sector_domain(ns.omega1)
        family = mesh_mod.build_family(spec, ns.family, ns.levels,
                                       kappa=ns.kappa, seed=ns.seed)
        for m in family:
            print(repr(mesh_mod.check_h2_irregular(m)))
        if ns.export:
            outdir = ns.output or os.environ.get(OUTDIR_ENV) or "."
            os.makedirs(outdir, exist_ok=True)
            for k, m in enumerate(family):
                path = os.path.join(
                    outdir, "mesh_%s_level%d.npz" % (ns.family, k))
                mesh_mod.save_mesh(m, path)
                back = mesh_mod.load_mesh(path)
                same = (np.array_equal(back.vertices, m.vertices)
                        and np.array_equal(back.triangles, m.triangles)
                        and np.array_equal(back.boundary_edges,
                                           m.boundary_edges))
                if not same:
                    sys.stderr.write("error: %s did not round-trip\n" % path)
                    return EXIT_ERROR
                print("wrote %s" % path)
    except Exception as exc:
        sys.stderr.write("error: %s\n" % exc)
        return EXIT_ERROR
    return EXIT_PASS


# ----------------------------------------------------------------------
# check: the fast invariant suites
# ----------------------------------------------------------------------

def _check_setup(omega1):
    """Coarse manufactured problems and mesh shared by the suites."""
    unc = manufactured.ManufacturedProblem(omega1, "leading")
    con = manufactured.ManufacturedProblem(omega1, "leading",
                                           constrained=True)
    family = mesh_mod.build_family(unc.spec, "generic", 2, kappa=0.2, seed=0)
    return family[1], unc, con


def _suite_hessian(m, unc, con):
    cp = control.ControlProblem(m, unc.y_omega(m), nu=unc.nu,
                                solver_tol=1e-14)
    rng = np.random.default_rng(2024)
    nb = cp.dof.num_boundary
    worst_sym = 0.0
    worst_margin = np.inf
    for _ in range(10):
        v = rng.standard_normal(nb)
        w = rng.standard_normal(nb)
        Hv = cp.apply_hessian(v)
        Hw = cp.apply_hessian(w)
        a = float(w @ Hv)
        b = float(v @ Hw)
        worst_sym = max(worst_sym, abs(a - b) / max(abs(a), abs(b), 1e-300))
        vHv = float(v @ Hv)
        margin = vHv - unc.nu * float(v @ cp.Mb.matvec(v))
        worst_margin = min(worst_margin, margin / max(abs(vHv), 1e-300))
    ok = worst_sym <= 1e-10 and worst_margin >= -1e-12
    return ok, ("max sym rel err %.2e, min pd margin %.2e"
                % (worst_sym, worst_margin))


def _suite_gradient_fd(m, unc, con):
    cp = control.ControlProblem(m, unc.y_omega(m), nu=unc.nu,
                                solver_tol=1e-14)
    rng = np.random.default_rng(7)
    nb = cp.dof.num_boundary
    u0 = rng.standard_normal(nb)
    g = cp.reduced_residual(u0).gradient
    step = 1e-5
    worst = 0.0
    for _ in range(10):
        v = rng.standard_normal(nb)
        v /= np.linalg.norm(v)
        plus = cp.objective(u0 + step * v)
        minus = cp.objective(u0 - step * v)
        fd = (plus - minus) / (2.0 * step)
        gv = float(g @ v)
        worst = max(worst, abs(fd - gv) / max(abs(gv), 1e-300))
    return worst <= 1e-6, "max rel err %.2e over 10 directions" % worst


def _suite_extension(m, unc, con):
    dof = fem.dof_map(m)
    rng = np.random.default_rng(5)
    u = rng.standard_normal(dof.num_boundary)
    ext = fem.discrete_harmonic_extension(
        m, fem.TraceFunction(m, u), tol=1e-14)
    exact = float(np.max(np.abs(ext.coefficients[dof.boundary] - u)))
    worst = 0.0
    for a, b, c in ((1.0, 0.0, 0.0), (0.3, -0.7, 0.4), (-2.0, 1.0, 1.0)):
        nodal = a + b * m.vertices[:, 0] + c * m.vertices[:, 1]
        ext = fem.discrete_harmonic_extension(
            m, fem.TraceFunction(m, nodal[dof.boundary]), tol=1e-14)
        err = np.max(np.abs(ext.coefficients - nodal))
        worst = max(worst, float(err) / max(np.max(np.abs(nodal)), 1.0))
    ok = exact == 0.0 and worst <= 1e-12
    return ok, ("trace repro max %.1e, affine max rel err %.2e"
                % (exact, worst))


def _suite_normal_identity(m, unc, con):
    dof = fem.dof_map(m)
    A = fem.assemble_stiffness(m)
    Mb = fem.assemble_boundary_mass(m)
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(20):
        phi = rng.standard_normal(m.num_vertices)
        phi[dof.boundary] = 0.0
        f = fem.VolumeFunction(m, rng.standard_normal(m.num_vertices))
        d = fem.discrete_normal_derivative(m, phi, f)
        b = fem.assemble_load_volume(m, f)
        target = (A.matvec(phi) - b)[dof.boundary]
        resid = Mb.matvec(d.coefficients) - target
        worst = max(worst, float(np.linalg.norm(resid))
                    / max(float(np.linalg.norm(target)), 1e-300))
    return worst <= 1e-10, "max rel residual %.2e over 20 functions" % worst


def _orthogonality_defect(fields, m, trace, order=9):
    """int_Gamma d (u* - u) ds by per-edge Gauss quadrature."""
    rule = fem.edge_rule(order)
    sq, wq = rule.points, rule.weights
    v = m.vertices
    L = fem.boundary_edge_lengths(m)
    uh = trace.coefficients
    nb = m.num_boundary_edges
    total = 0.0
    mag = 0.0
    for e, (v0, v1, _, seg) in enumerate(m.boundary_edges):
        pts = v[v0][None, :] + sq[:, None] * (v[v1] - v[v0])[None, :]
        d = fields.d_bar(pts, seg)
        u = fields.u_bar(pts, seg)
        ustar = uh[e] * (1.0 - sq) + uh[(e + 1) % nb] * sq
        total += L[e] * np.sum(wq * d * (ustar - u))
        mag += L[e] * np.sum(wq * np.abs(d) * np.abs(u))
    return total, mag


def _suite_orthogonality(m, unc, con):
    a, b = con.fields.bounds
    ml = manufactured.modified_lagrange_interpolant(con.fields, m)
    cr = manufactured.casas_raymond_interpolant(con.fields, m, order=9,
                                                clamp=True)
    worst = 0.0
    feasible = True
    for trace in (ml, cr):
        defect, mag = _orthogonality_defect(con.fields, m, trace)
        worst = max(worst, abs(defect) / max(mag, 1.0))
        feasible = feasible and bool(
            np.all(trace.coefficients >= a)
            and np.all(trace.coefficients <= b))
    ok = worst <= 1e-8 and feasible
    return ok, ("max rel defect %.2e, feasible=%s" % (worst, feasible))


def _suite_pdas(m, unc, con):
    y = con.y_omega(m)
    cp = control.ControlProblem(m, y, nu=con.nu, bounds=con.bounds)
    sol = control.solve_constrained_pdas(cp, tol=1e-9)
    vi = control.verify_discrete_vi(cp, sol)
    wide = control.ControlProblem(m, y, nu=con.nu, bounds=(-1e6, 1e6))
    sol_wide = control.solve_constrained_pdas(wide, tol=1e-12)
    free = control.ControlProblem(m, y, nu=con.nu)
    sol_free = control.solve_unconstrained(free, tol=1e-12)
    agree = fem.l2_norm_boundary(
        m, sol_wide.u_h.coefficients - sol_free.u_h.coefficients)
    ok = (sol.pdas_iterations <= 30 and vi >= -1e-8 and agree <= 1e-9)
    return ok, ("%d iterations, vi %.1e, wide-bounds agreement %.1e"
                % (sol.pdas_iterations, vi, agree))


CHECK_SUITES = (
    ("hessian-symmetry-pd", _suite_hessian),
    ("gradient-vs-fd", _suite_gradient_fd),
    ("harmonic-extension", _suite_extension),
    ("normal-derivative-identity", _suite_normal_identity),
    ("interpolant-orthogonality", _suite_orthogonality),
    ("pdas-vi-agreement", _suite_pdas),
)


def run_property_suites(omega1=DEFAULT_CHECK_OMEGA, flip_flux_sign=False):
    """Run every fast invariant suite; returns a list of result dicts."""
    previous = control.FLUX_SIGN
    if flip_flux_sign:
        control.FLUX_SIGN = -1.0
    try:
        m, unc, con = _check_setup(omega1)
        results = []
        for name, suite in CHECK_SUITES:
            start = time.perf_counter()
            try:
                ok, detail = suite(m, unc, con)
            except Exception as exc:
                ok, detail = False, "raised %s: %s" % (type(exc).__name__,
                                                       exc)
            results.append({"name": name, "ok": bool(ok), "detail": detail,
                            "seconds": time.perf_counter() - start})
        return results
    finally:
        control.FLUX_SIGN = previous


def _print_quad_oracle(omega1):
    m, unc, con = _check_setup(omega1)
    rng = np.random.default_rng(3)
    u0 = rng.standard_normal(fem.dof_map(m).num_boundary)
    values = {}
    for order in (5, 9):
        cp = control.ControlProblem(m, unc.y_omega(m), nu=unc.nu,
                                    quad_order=order)
        values[order] = cp.objective(u0)
    ml = manufactured.modified_lagrange_interpolant(con.fields, m)
    d5, _ = _orthogonality_defect(con.fields, m, ml, order=5)
    d9, mag = _orthogonality_defect(con.fields, m, ml, order=9)
    print("quad-oracle: objective order5=%r order9=%r |diff|=%.3e"
          % (values[5], values[9], abs(values[5] - values[9])))
    print("quad-oracle: orthogonality defect order5=%.6e order9=%.6e "
          "(scale %.3e)" % (d5, d9, mag))


def cmd_check(ns):
    try:
        results = run_property_suites(ns.omega1,
                                      flip_flux_sign=ns.flip_flux_sign)
        for res in results:
            print("check %-28s %s  [%.2fs]  %s"
                  % (res["name"], "PASS" if res["ok"] else "FAIL",
                     res["seconds"], res["detail"]))
        if ns.quad_oracle:
            _print_quad_oracle(ns.omega1)
    except Exception as exc:
        sys.stderr.write("error: %s\n" % exc)
        return EXIT_ERROR
    failed = [res["name"] for res in results if not res["ok"]]
    if failed:
        sys.stderr.write("failed properties: %s\n" % ", ".join(failed))
        return EXIT_FAIL
    return EXIT_PASS


# ----------------------------------------------------------------------

def main(argv=None):
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_ERROR
    handler = {"study": cmd_study, "rates": cmd_rates,
               "mesh": cmd_mesh, "check": cmd_check}[ns.command]
    try:
        return handler(ns)
    except SystemExit:
        raise
    except Exception as exc:
        sys.stderr.write("error: %s\n" % exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
