"""Integration tests for the command-line interface."""

import json
import os

import numpy as np
import pytest

from sectorlab import cli
from sectorlab import mesh as M


def test_parse_angle_forms():
    assert abs(cli.parse_angle("3pi/2") - 1.5 * np.pi) < 1e-15
    assert abs(cli.parse_angle("pi") - np.pi) < 1e-15
    assert abs(cli.parse_angle("0.75pi") - 0.75 * np.pi) < 1e-15
    assert abs(cli.parse_angle("2pi/3") - 2 * np.pi / 3) < 1e-15
    assert cli.parse_angle("4.712388980384690") == 4.71238898038469
    assert cli.parse_angle(" PI / 2 ") == np.pi / 2
    for bad in ("abc", "pi/", "2tau", "pi2", ""):
        with pytest.raises(ValueError):
            cli.parse_angle(bad)


def test_rates_pinned_outputs(capsys):
    assert cli.main(["rates", "--omega1", "4.71238898",
                     "--unconstrained"]) == 0
    assert capsys.readouterr().out == "s=0.16667 r=0 (Thm 4.1)\n"
    assert cli.main(["rates", "--omega1", "1.57079633", "--unconstrained",
                     "--family", "superconvergent"]) == 0
    assert capsys.readouterr().out == "s=1.5 r=0\n"
    assert cli.main(["rates", "--omega1", "4.71238898", "--constrained",
                     "--no-assumption"]) == 0
    assert capsys.readouterr().out == "s=0.5 log^(1/4) (Thm 5.3)\n"
    assert cli.main(["rates", "--omega1", "3pi/2", "--constrained"]) == 0
    assert capsys.readouterr().out == "s=1 r=1 (Thm 5.2)\n"
    assert cli.main(["rates", "--omega1", "3pi/2", "--special",
                     "--unconstrained"]) == 0
    assert capsys.readouterr().out == "s=0.83333 r=0 (Thm 4.1)\n"


def test_rates_table_total_and_deterministic(capsys):
    assert cli.main(["rates", "--table"]) == 0
    first = capsys.readouterr().out
    assert cli.main(["rates", "--table"]) == 0
    second = capsys.readouterr().out
    assert first == second
    lines = first.strip().splitlines()
    assert len(lines) == 51  # header plus 50 grid angles
    assert "unc-generic" in lines[0]


def test_rates_errors(capsys):
    assert cli.main(["rates", "--omega1", "7.0"]) == 1
    assert "error" in capsys.readouterr().err
    assert cli.main(["rates"]) == 1
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        cli.main(["rates", "--omega1", "not-an-angle"])
    assert exc.value.code == 1


def test_unknown_flag_exits_one():
    with pytest.raises(SystemExit) as exc:
        cli.main(["study", "--bogus"])
    assert exc.value.code == 1


def test_no_subcommand_exits_one(capsys):
    assert cli.main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_study_requires_config_or_omega(capsys):
    assert cli.main(["study"]) == 1
    err = capsys.readouterr().err
    assert "usage" in err and "--omega1" in err


def test_study_coarse_deterministic(tmp_path, capsys):
    args = ["study", "--omega1", "3pi/2", "--levels", "3", "--seed", "7"]
    rc1 = cli.main(args + ["--output", str(tmp_path / "a")])
    out1 = capsys.readouterr().out
    rc2 = cli.main(args + ["--output", str(tmp_path / "b")])
    out2 = capsys.readouterr().out
    assert rc1 == 0 and rc2 == 0
    assert out1 == out2 and "PASS" in out1
    name = "omega4.7124_leading_unc_generic"
    rows_a = open(tmp_path / "a" / (name + ".csv")).read().splitlines()
    rows_b = open(tmp_path / "b" / (name + ".csv")).read().splitlines()
    assert rows_a[0] == ("level,h,dofs,bdofs,error,eoc,"
                         "toc_s,toc_r,iters,seconds")
    # identical except the wall-time column
    for ra, rb in zip(rows_a[1:], rows_b[1:]):
        assert ra.split(",")[:9] == rb.split(",")[:9]
    plot_a = open(tmp_path / "a" / (name + "_plot.dat")).read()
    plot_b = open(tmp_path / "b" / (name + "_plot.dat")).read()
    assert plot_a == plot_b
    blob = json.load(open(tmp_path / "a" / (name + ".json")))
    assert blob["config"]["seed"] == 7 and blob["config"]["levels"] == 3
    assert blob["verdict"] is True


def test_study_env_output_dir(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(cli.OUTDIR_ENV, str(tmp_path))
    rc = cli.main(["study", "--omega1", "pi/2", "--levels", "3",
                   "--name", "envcase"])
    capsys.readouterr()
    assert rc in (0, 2)
    assert (tmp_path / "envcase.csv").exists()
    assert (tmp_path / "envcase.json").exists()


def test_study_config_file_with_jobs(tmp_path, capsys):
    cases = [
        {"omega1": 4.71238898038469, "levels": 3, "seed": 1,
         "name": "jobA"},
        {"omega1": 1.5707963267948966, "levels": 3, "seed": 1,
         "name": "jobB"},
    ]
    cfg_path = tmp_path / "cases.json"
    cfg_path.write_text(json.dumps(cases))
    rc = cli.main(["study", "--config", str(cfg_path), "--jobs", "2",
                   "--output", str(tmp_path)])
    out = capsys.readouterr().out
    lines = out.strip().splitlines()
    assert lines[0].startswith("jobA:") and lines[1].startswith("jobB:")
    for name in ("jobA", "jobB"):
        for ext in (".csv", ".json", "_plot.dat"):
            assert (tmp_path / (name + ext)).exists()
    # flag overrides apply to every case in the file
    rc2 = cli.main(["study", "--config", str(cfg_path), "--levels", "3",
                    "--seed", "3", "--name", "override",
                    "--output", str(tmp_path)])
    out2 = capsys.readouterr().out
    assert out2.count("override:") == 2
    assert rc in (0, 2) and rc2 in (0, 2)


def test_study_missing_config_file(tmp_path, capsys):
    assert cli.main(["study", "--config",
                     str(tmp_path / "missing.json")]) == 1
    assert "error" in capsys.readouterr().err


def test_mesh_reports_and_export(tmp_path, capsys):
    rc = cli.main(["mesh", "--omega1", "3pi/2", "--levels", "3"])
    out = capsys.readouterr().out
    assert rc == 0
    lines = out.strip().splitlines()
    assert len(lines) == 3
    assert all("IrregularityReport" in ln for ln in lines)
    assert "verdict=False" in lines[1] and "verdict=False" in lines[2]

    rc = cli.main(["mesh", "--omega1", "3pi/2", "--family",
                   "superconvergent", "--levels", "2", "--export",
                   "--output", str(tmp_path)])
    out = capsys.readouterr().out
    assert rc == 0
    assert out.count("verdict=True") == 2
    spec = M.build_sector_domain(1.5 * np.pi)
    family = M.build_family(spec, "superconvergent", 2)
    for k, m in enumerate(family):
        path = tmp_path / ("mesh_superconvergent_level%d.npz" % k)
        assert path.exists()
        back = M.load_mesh(str(path))
        assert np.array_equal(back.vertices, m.vertices)
        assert np.array_equal(back.triangles, m.triangles)
        assert np.array_equal(back.boundary_edges, m.boundary_edges)
        assert back.level == m.level

    assert cli.main(["mesh"]) == 1
    assert "error" in capsys.readouterr().err


def test_check_passes_and_is_fast(capsys):
    import time
    start = time.perf_counter()
    rc = cli.main(["check"])
    elapsed = time.perf_counter() - start
    out = capsys.readouterr().out
    assert rc == 0
    assert out.count("PASS") == 6 and "FAIL" not in out
    assert elapsed < 10.0


def test_check_mutation_fails_gradient(capsys):
    rc = cli.main(["check", "--flip-flux-sign"])
    captured = capsys.readouterr()
    assert rc == 2
    assert "gradient-vs-fd               FAIL" in captured.out
    assert "gradient-vs-fd" in captured.err


def test_check_quad_oracle(capsys):
    rc = cli.main(["check", "--quad-oracle"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "quad-oracle: objective" in out
    assert "quad-oracle: orthogonality defect" in out
