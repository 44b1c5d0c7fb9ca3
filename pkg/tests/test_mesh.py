"""Mesh module tests: domains, refinement, families, diagnostics, IO."""

import numpy as np
import pytest

from sectorlab import mesh as M


def test_lshape_domain_corners():
    spec = M.build_sector_domain(3 * np.pi / 2)
    expected = np.array([(0, 0), (1, 0), (1, 1), (-1, 1), (-1, -1), (0, -1)],
                        dtype=float)
    assert np.array_equal(spec.corners, expected)
    assert np.allclose(spec.angles, [3 * np.pi / 2] + [np.pi / 2] * 5, atol=1e-14)
    assert spec.primary_corner_index == 0
    assert abs(spec.diameter() - 2 * np.sqrt(2)) < 1e-14
    assert abs(spec.area() - 3.0) < 1e-14


def test_triangle_domain_corners():
    spec = M.build_sector_domain(np.pi / 2)
    assert np.array_equal(spec.corners,
                          np.array([(0, 0), (1, 0), (0, 1)], dtype=float))
    assert np.allclose(spec.angles, [np.pi / 2, np.pi / 4, np.pi / 4], atol=1e-14)
    spec = M.build_sector_domain(np.pi / 3)
    assert np.allclose(spec.corners[2], [0.5, np.sqrt(3) / 2], atol=1e-15)


def test_flat_corner_domain():
    spec = M.build_sector_domain(np.pi)
    assert np.array_equal(
        spec.corners,
        np.array([(0, 0), (1, 0), (1, 1), (-1, 1), (-1, 0)], dtype=float))
    assert abs(spec.angles[0] - np.pi) < 1e-14


def test_out_of_range_angles():
    with pytest.raises(M.OutOfRange):
        M.build_sector_domain(2 * np.pi)
    with pytest.raises(M.OutOfRange):
        M.build_sector_domain(np.pi / 4)
    M.build_sector_domain(np.pi / 3)
    M.build_sector_domain(2 * np.pi - 1e-6)


def test_polygon_spec_angle_consistency():
    corners = [(0, 0), (1, 0), (1, 1), (0, 1)]
    M.PolygonSpec(corners, angles=[np.pi / 2] * 4)
    with pytest.raises(ValueError):
        M.PolygonSpec(corners, angles=[np.pi / 2, np.pi / 2, np.pi / 2, np.pi / 3])
    with pytest.raises(ValueError):
        M.PolygonSpec(list(reversed(corners)))  # clockwise


def test_initial_triangulation_counts():
    m = M.initial_triangulation(M.build_sector_domain(3 * np.pi / 2))
    assert (m.num_vertices, m.num_triangles, m.num_boundary_edges) == (8, 6, 8)
    t = M.initial_triangulation(M.build_sector_domain(np.pi / 2))
    assert (t.num_vertices, t.num_triangles, t.num_boundary_edges) == (3, 1, 3)
    for w in (0.51 * np.pi, 5 * np.pi / 6, np.pi, 7 * np.pi / 6, 5 * np.pi / 4,
              4 * np.pi / 3, 3 * np.pi / 2, 7 * np.pi / 4, 1.9 * np.pi):
        mm = M.initial_triangulation(M.build_sector_domain(w))
        assert mm.num_triangles <= 64
        assert mm.vertices[mm.corner_vertex_ids[0]] @ [1, 1] == 0.0


def test_refine_counts_and_h():
    m0 = M.initial_triangulation(M.build_sector_domain(3 * np.pi / 2))
    m1 = M.refine_regular(m0)
    # V' = V + E with E = (3T + B)/2; T' = 4T; B' = 2B
    E = (3 * m0.num_triangles + m0.num_boundary_edges) // 2
    assert m1.num_vertices == m0.num_vertices + E
    assert m1.num_triangles == 4 * m0.num_triangles
    assert m1.num_boundary_edges == 2 * m0.num_boundary_edges
    assert abs(m1.h - 0.5 * m0.h) <= 1e-14 * m0.h
    assert m1.level == m0.level + 1
    # parent vertices keep indices
    assert np.array_equal(m1.vertices[:m0.num_vertices], m0.vertices)
    # segment ids both halves
    for i, (v0, v1, owner, seg) in enumerate(m0.boundary_edges):
        assert m1.boundary_edges[2 * i, 3] == seg
        assert m1.boundary_edges[2 * i + 1, 3] == seg


def test_boundary_cycle_matches_perimeter():
    spec = M.build_sector_domain(3 * np.pi / 2)
    m = M.initial_triangulation(spec)
    for _ in range(3):
        v = m.vertices
        lengths = [np.hypot(*(v[int(e[1])] - v[int(e[0])]))
                   for e in m.boundary_edges]
        assert abs(sum(lengths) - spec.perimeter()) < 1e-12
        m = M.refine_regular(m)


def test_family_determinism_bitwise():
    spec = M.build_sector_domain(3 * np.pi / 2)
    for kind in ("superconvergent", "generic"):
        f1 = M.build_family(spec, kind, 3, kappa=0.2, seed=5)
        f2 = M.build_family(spec, kind, 3, kappa=0.2, seed=5)
        for a, b in zip(f1, f2):
            assert np.array_equal(a.vertices, b.vertices)
            assert np.array_equal(a.triangles, b.triangles)
            assert np.array_equal(a.boundary_edges, b.boundary_edges)
    with pytest.raises(ValueError):
        M.build_family(spec, "generic", 1)
    with pytest.raises(ValueError):
        M.build_family(spec, "adaptive", 3)


def test_superconvergent_family_zero_discrepancy():
    spec = M.build_sector_domain(3 * np.pi / 2)
    for m in M.build_family(spec, "superconvergent", 4):
        rep = M.check_h2_irregular(m)
        assert rep.max_interior_discrepancy <= 1e-12 * m.h
        assert rep.boundary_vertex_violations == 0
        assert rep.verdict


def test_generic_family_fails_with_growing_ratio():
    spec = M.build_sector_domain(3 * np.pi / 2)
    fam = M.build_family(spec, "generic", 5, kappa=0.2, seed=0)
    reports = [M.check_h2_irregular(m) for m in fam]
    for rep in reports[1:]:
        assert not rep.verdict
    ratios = [rep.discrepancy_ratio for rep in reports[1:]]
    for r0, r1 in zip(ratios, ratios[1:]):
        assert r1 >= 1.5 * r0


def test_perturb_interior_contract():
    spec = M.build_sector_domain(3 * np.pi / 2)
    m = M.refine_regular(M.refine_regular(M.initial_triangulation(spec)))
    p1 = M.perturb_interior(m, 0.2, 42)
    p2 = M.perturb_interior(m, 0.2, 42)
    assert np.array_equal(p1.vertices, p2.vertices)
    p3 = M.perturb_interior(m, 0.2, 43)
    assert not np.array_equal(p1.vertices, p3.vertices)
    # boundary vertices unmoved, displacement bound respected
    bd = m.boundary_vertices()
    assert np.array_equal(p1.vertices[bd], m.vertices[bd])
    moved = np.linalg.norm(p1.vertices - m.vertices, axis=1)
    p = m.vertices[m.triangles]
    lens = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)
    lmin = np.full(m.num_vertices, np.inf)
    for t, tri in enumerate(m.triangles):
        for k in range(3):
            for vv in (int(tri[k]), int(tri[(k + 1) % 3])):
                lmin[vv] = min(lmin[vv], lens[t, k])
    assert np.all(moved <= 0.2 * lmin + 1e-15)
    assert np.all(p1.triangle_areas() > 0)
    # identity at kappa = 0
    z = M.perturb_interior(m, 0.0, 9)
    assert np.array_equal(z.vertices, m.vertices)
    with pytest.raises(ValueError):
        M.perturb_interior(m, 0.31, 0)
    with pytest.raises(ValueError):
        M.perturb_interior(m, -0.1, 0)


def test_local_polar():
    m = M.initial_triangulation(M.build_sector_domain(3 * np.pi / 2))
    r, th = M.local_polar(m, 0, np.array([0.0, -1.0]))
    assert abs(r - 1.0) < 1e-15 and abs(th - 3 * np.pi / 2) < 1e-12
    r, th = M.local_polar(m, 0, np.array([0.0, 0.0]))
    assert r == 0.0 and th == 0.0
    r, th = M.local_polar(m, 0, np.array([0.5, 0.0]))
    assert abs(r - 0.5) < 1e-15 and th == 0.0
    # secondary corner with its own frame: corner 2 = (1,1), side to (-1,1)
    r, th = M.local_polar(m, 2, np.array([0.0, 1.0]))
    assert abs(r - 1.0) < 1e-15 and abs(th) < 1e-12
    rr, tt = M.local_polar(m, 0, np.array([[0.0, -1.0], [0.5, 0.0]]))
    assert rr.shape == (2,) and abs(tt[0] - 3 * np.pi / 2) < 1e-12


def test_mesh_validation_rejects_bad_input():
    spec = M.build_sector_domain(3 * np.pi / 2)
    m = M.initial_triangulation(spec)
    bad = m.triangles.copy()
    bad[0] = bad[0][::-1]  # clockwise triangle
    with pytest.raises(M.TriangulationFailure):
        M.Mesh(m.vertices, bad, m.boundary_edges, m.corner_vertex_ids, spec)
    with pytest.raises(M.TriangulationFailure):
        M.Mesh(m.vertices, m.triangles, m.boundary_edges[:-1],
               m.corner_vertex_ids, spec)


def test_save_load_roundtrip(tmp_path):
    spec = M.build_sector_domain(3 * np.pi / 2)
    m = M.perturb_interior(
        M.refine_regular(M.refine_regular(M.initial_triangulation(spec))), 0.2, 3)
    path = tmp_path / "mesh.txt"
    M.save_mesh(m, path)
    mb = M.load_mesh(path)
    assert np.array_equal(m.vertices, mb.vertices)
    assert np.array_equal(m.triangles, mb.triangles)
    assert np.array_equal(m.boundary_edges, mb.boundary_edges)
    assert mb.level == m.level and mb.spec.omega1 == spec.omega1
    with open(path) as fh:
        head = fh.readline().split()
    assert head[:1] + head[2:3] + head[4:5] == ["vertices", "triangles", "bedges"]


def test_initial_triangulation_rejects_degenerate():
    corners = np.array([(0, 0), (1, 0), (1, 1), (0, 1)], dtype=float)
    spec = M.PolygonSpec(corners)
    spec.corners = np.array([(0, 0), (1, 0), (1, 0), (0, 1)], dtype=float)
    with pytest.raises(M.TriangulationFailure):
        M.initial_triangulation(spec)
