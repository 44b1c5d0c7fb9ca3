"""Tests for rates, study orchestration, and report emission."""

import csv
import json

import numpy as np
import pytest

from sectorlab import mesh as msh
from sectorlab import fem
from sectorlab import manufactured as mf
from sectorlab import study


W32 = 3.0 * np.pi / 2.0
L_ANGLES = [W32] + [np.pi / 2.0] * 5
TRI_ANGLES = [np.pi / 2.0, np.pi / 4.0, np.pi / 4.0]


def _rate(angles, **kw):
    return study.theoretical_rate(study.RateQuery(angles, **kw))


def test_rate_unconstrained_leading_reentrant():
    r = _rate(L_ANGLES)
    assert abs(r.s - 1.0 / 6.0) < 1e-15 and r.r == 0
    assert r.describe() == "s=0.16667 r=0 (Thm 4.1)"
    rs = _rate(L_ANGLES, family="superconvergent")
    assert abs(rs.s - 1.0 / 6.0) < 1e-15 and rs.r == 0


def test_rate_unconstrained_convex_triangle():
    r = _rate(TRI_ANGLES)
    assert r.s == 1.0 and r.r == 1 and r.theorem == "Thm 4.1"
    rs = _rate(TRI_ANGLES, family="superconvergent")
    assert rs.s == 1.5 and rs.r == 0
    assert rs.describe() == "s=1.5 r=0"


def test_rate_unconstrained_special():
    special = [True] + [False] * 5
    r = _rate(L_ANGLES, special=special)
    assert abs(r.s - 5.0 / 6.0) < 1e-15 and r.r == 0
    rs = _rate(L_ANGLES, special=special, family="superconvergent")
    assert abs(rs.s - 5.0 / 6.0) < 1e-15 and rs.r == 0


def test_rate_constrained_leading():
    r = _rate(L_ANGLES, constrained=True)
    assert r.s == 1.0 and r.r == 1 and r.theorem == "Thm 5.2"
    rs = _rate(L_ANGLES, constrained=True, family="superconvergent")
    assert abs(rs.s - 4.0 / 3.0) < 1e-15 and rs.r == 0


def test_rate_constrained_special():
    special = [True] + [False] * 5
    r = _rate(L_ANGLES, constrained=True, special=special)
    assert abs(r.s - 5.0 / 6.0) < 1e-15 and r.r == 0
    rs = _rate(L_ANGLES, constrained=True, special=special,
               family="superconvergent")
    assert abs(rs.s - 5.0 / 6.0) < 1e-15


def test_rate_constrained_nonconvex_floor():
    r = _rate(L_ANGLES, constrained=True, assumption=False)
    assert r.s == 0.5 and r.extra
    assert r.describe() == "s=0.5 log^(1/4) (Thm 5.3)"
    # a convex domain keeps the Thm 5.2 rate even without the assumption
    rc = _rate(TRI_ANGLES, constrained=True, assumption=False)
    assert rc.theorem == "Thm 5.2" and rc.s == 1.0


def test_rate_table_total_on_shipped_grid():
    for omega1 in np.linspace(np.pi / 3, 2 * np.pi - 0.05, 50):
        spec = msh.build_sector_domain(omega1)
        for constrained in (False, True):
            for special_flag in (False, True):
                if special_flag and omega1 <= np.pi:
                    continue
                special = [False] * spec.num_corners
                special[0] = special_flag
                for family in msh.MeshFamilyKind.ALL:
                    for assumption in (False, True):
                        q = study.RateQuery(spec.angles,
                                            constrained=constrained,
                                            special=special, family=family,
                                            assumption=assumption)
                        r = study.theoretical_rate(q)
                        assert r.s > 0 and r.r in (0, 1)


def test_rate_query_validation():
    with pytest.raises(ValueError):
        study.RateQuery([0.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        study.RateQuery([1.0, 1.0, 1.0], special=[True])


def test_eoc_arithmetic_exact():
    rng = np.random.default_rng(0)
    for _ in range(5):
        s = rng.uniform(0.1, 2.0)
        C = rng.uniform(0.5, 10.0)
        errors = C * 2.0 ** (-s * np.arange(1, 7))
        eocs = study.compute_eocs(errors)
        assert np.max(np.abs(eocs - s)) < 1e-12
    assert np.allclose(study.compute_eocs([0.02, 0.01, 0.005]), [1.0, 1.0])
    assert study.compute_eocs([0.1, 0.1])[0] == 0.0
    with pytest.raises(ValueError):
        study.compute_eocs([0.1, 0.0])


def _synthetic_runner(s):
    def runner(cfg, m, problem=None, y_omega=None):
        return {"level": m.level + 1, "h": m.h, "dofs": m.num_vertices,
                "bdofs": m.num_boundary_edges, "error": 3.0 * m.h ** s,
                "iters": 1, "seconds": 0.0}
    return runner


def test_run_study_with_synthetic_levels():
    cfg = study.StudyConfig(W32, "leading", family="superconvergent",
                            levels=4)
    report = study.run_study(cfg, level_runner=_synthetic_runner(1.0 / 6.0))
    assert np.max(np.abs(report.eocs - 1.0 / 6.0)) < 1e-12
    assert abs(report.headline - 1.0 / 6.0) < 1e-12
    assert abs(report.lsq_slope - report.headline) < 0.05
    # no shipped band for this family: default band around the theory rate
    assert report.band == (0.0, 1.0 / 6.0 + 0.25)
    assert report.verdict
    bad = study.run_study(cfg, level_runner=_synthetic_runner(0.9))
    assert not bad.verdict
    # a shipped case resolves its calibrated band, an override wins
    gen = study.StudyConfig(W32, "leading", levels=3)
    rep_gen = study.run_study(gen, level_runner=_synthetic_runner(0.17))
    assert rep_gen.band == (0.10, 0.28) and rep_gen.verdict
    forced = study.StudyConfig(W32, "leading", levels=3, band=(0.5, 0.9))
    rep_forced = study.run_study(forced, level_runner=_synthetic_runner(0.17))
    assert rep_forced.band == (0.5, 0.9) and not rep_forced.verdict


def test_study_config_roundtrip_and_validation():
    cfg = study.StudyConfig(W32, "special", constrained=True, levels=3,
                            bounds=(-1.5, 1.0), kappa=0.15, seed=9,
                            band=(0.5, 1.1), name="case")
    d = json.loads(json.dumps(cfg.to_dict()))
    cfg2 = study.StudyConfig.from_dict(d)
    assert cfg2.to_dict() == cfg.to_dict()
    assert cfg2.bounds == (-1.5, 1.0) and cfg2.band == (0.5, 1.1)
    with pytest.raises(ValueError):
        study.StudyConfig(W32, levels=2)


def test_acceptance_band_lookup():
    assert study.acceptance_band(W32, "leading", False,
                                 "generic") == (0.10, 0.28)
    assert study.acceptance_band(np.pi / 2, "leading", False,
                                 "superconvergent") == (1.30, 1.65)
    assert study.acceptance_band(W32, "special", True,
                                 "superconvergent") is None
    assert study.acceptance_band(2.0, "leading", False, "generic") is None


def test_run_level_zero_target_gives_interpolant_norm():
    cfg = study.StudyConfig(W32, "leading", levels=3)
    problem = cfg.problem()
    m = msh.build_family(problem.spec, "superconvergent", 3)[1]
    rec = study.run_level(cfg, m, problem=problem,
                          y_omega=lambda pts: np.zeros(len(pts)))
    interp = mf.interpolate_control(problem.fields, m)
    norm = fem.l2_norm_boundary(m, interp.coefficients)
    # with y_Omega = 0 the optimal control is 0, so e = ||I_h u||
    assert abs(rec["error"] - norm) <= 1e-9 * norm


def test_run_study_real_coarse_case_is_deterministic(tmp_path):
    cfg = study.StudyConfig(W32, "leading", levels=3, seed=4)
    r1 = study.run_study(cfg)
    r2 = study.run_study(cfg)
    e1 = [rec["error"] for rec in r1.records]
    e2 = [rec["error"] for rec in r2.records]
    assert e1 == e2
    assert all(rec["error"] > 0 for rec in r1.records)
    assert all(b < a for a, b in zip(e1, e1[1:]))  # monotone decrease
    assert abs(r1.rate.s - 1.0 / 6.0) < 1e-15
    paths = study.emit_report(r1, str(tmp_path), name="case")
    paths2 = study.emit_report(r2, str(tmp_path / "again"), name="case")
    rows1 = list(csv.reader(open(paths[0])))
    rows2 = list(csv.reader(open(paths2[0])))
    assert rows1[0] == ["level", "h", "dofs", "bdofs", "error", "eoc",
                        "toc_s", "toc_r", "iters", "seconds"]
    for a, b in zip(rows1, rows2):
        assert a[:9] == b[:9]  # all but wall time identical


def test_emit_report_roundtrip(tmp_path):
    cfg = study.StudyConfig(W32, "leading", family="superconvergent",
                            levels=4, name="synthetic")
    report = study.run_study(cfg, level_runner=_synthetic_runner(0.25))
    csv_path, json_path, plot_path = study.emit_report(report, str(tmp_path))
    rows = list(csv.reader(open(csv_path)))
    assert len(rows) == 1 + 4
    assert rows[1][5] == ""  # no EOC at the first level
    for i, rec in enumerate(report.records):
        assert float(rows[1 + i][1]) == rec["h"]
        assert float(rows[1 + i][4]) == rec["error"]
        assert float(rows[1 + i][6]) == report.rate.s
    blob = json.load(open(json_path))
    assert blob["config"]["omega1"] == cfg.omega1
    assert blob["headline_eoc"] == report.headline
    assert len(blob["levels"]) == 4 and len(blob["eocs"]) == 3
    data = np.loadtxt(plot_path)
    slope = np.polyfit(data[-3:, 0], data[-3:, 1], 1)[0]
    assert abs(slope - report.headline) < 0.05
    blocker = tmp_path / "blocker"
    blocker.write_text("occupied")
    with pytest.raises(study.IOFailure):
        study.emit_report(report, str(blocker / "x"))


def _constrained_solution(levels=3):
    cfg = study.StudyConfig(W32, "leading", constrained=True, levels=levels)
    problem = cfg.problem()
    fam = msh.build_family(problem.spec, "superconvergent", levels)
    rec = study.run_level(cfg, fam[-1], problem=problem)
    return rec["solution"], fam[-1]


def test_corner_flattening_report():
    sol, m = _constrained_solution()
    rep = study.corner_flattening_report(sol, m, rho=0.1)
    assert 0.0 <= rep["fraction_at_bound"] <= 1.0
    assert rep["bound"] in ("lower", "upper", "mixed", "none")
    assert rep["nodes_in_band"] > 0
    # the reentrant blow-up is negative, so the lower bound is taken
    assert rep["bound"] == "lower"
    assert rep["largest_clamped_radius"] > 0.0


def test_corner_flattening_rejects_unconstrained():
    cfg = study.StudyConfig(W32, "leading", levels=3)
    problem = cfg.problem()
    fam = msh.build_family(problem.spec, "superconvergent", 3)
    rec = study.run_level(cfg, fam[-1], problem=problem)
    with pytest.raises(ValueError):
        study.corner_flattening_report(rec["solution"], fam[-1])
