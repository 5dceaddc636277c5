import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cornerscat import geometry as geo
from cornerscat.geometry import (
    Face,
    FormatError,
    GeometryError,
    ImpedanceSpec,
    Polyhedron,
    admissibility_report,
    classify_angle,
    extract_edge_corners,
    grating_corners,
)


def test_cube_edges():
    edges = extract_edge_corners(geo.cube())
    assert len(edges) == 12
    for e in edges:
        assert e.dihedral == pytest.approx(math.pi / 2, abs=1e-12)
        assert e.angle_class.rational and (e.angle_class.p, e.angle_class.q) == (2, 1)
        assert e.convex


def test_tetrahedron_edges():
    edges = extract_edge_corners(geo.regular_tetrahedron(2.0))
    assert len(edges) == 6
    # independent oracle: the angle between two face planes through an edge
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], float)
    n1 = np.cross(v[1] - v[0], v[2] - v[0])
    n2 = np.cross(v[1] - v[0], v[3] - v[0])
    ref = math.acos(abs(n1 @ n2) / np.linalg.norm(n1) / np.linalg.norm(n2))
    assert ref == pytest.approx(math.acos(1 / 3))
    for e in edges:
        assert e.dihedral == pytest.approx(ref, abs=1e-12)
        assert not e.angle_class.rational


def test_prism_apex_edge():
    tri = geo.triangle_with_angles(2 * math.pi / 5, math.pi / 4)
    p = geo.prism(tri, height=1.0)
    vert = [e for e in extract_edge_corners(p) if abs(e.segment[0][0]) < 1e-12 and abs(e.segment[0][1]) < 1e-12
            and abs(e.segment[1][0]) < 1e-12 and abs(e.segment[1][1]) < 1e-12]
    assert len(vert) == 1
    assert vert[0].alpha == pytest.approx(0.4, abs=1e-12)
    assert (vert[0].angle_class.p, vert[0].angle_class.q) == (5, 2)


def test_classify_examples():
    assert classify_angle(0.5, 100, 1e-12) == geo.AngleClass(True, 2, 1, 0.0)
    c = classify_angle(2 / 3, 100, 1e-12)
    assert c.rational and (c.p, c.q) == (3, 2)
    c = classify_angle(1 / math.sqrt(2), 1000, 1e-12)
    assert not c.rational and c.p <= 1000 and c.error > 1e-12
    assert classify_angle(Fraction(3, 7)).degree == 7
    with pytest.raises(ValueError):
        classify_angle(1.2)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 1000), st.data())
def test_classify_idempotent(p, data):
    q = data.draw(st.integers(1, p - 1))
    fr = Fraction(q, p)
    c = classify_angle(q / p)
    assert c.rational and (c.p, c.q) == (fr.denominator, fr.numerator)


def test_cube_report():
    rep = admissibility_report(geo.cube())
    assert rep.admissible
    assert rep.verdict == "rational" and rep.degree == 2
    assert not rep.degree_at_least_3
    assert len(rep.vertex_corners) == 8


def test_irrational_prism_report():
    tri = geo.triangle_with_angles(math.pi / math.sqrt(2) / 2.3, math.pi / math.sqrt(3) / 1.7)
    rep = admissibility_report(geo.prism(tri, height=0.9))
    # side edges are irrational; top/bottom edges are right angles but every vertex has an irrational edge
    assert rep.verdict == "irrational" and rep.degree is None
    assert all(not v.rational for v in rep.vertex_corners)


def test_zero_impedance_inadmissible():
    c = geo.cube().with_impedance([1, 1, 0, 1, 1, 1])
    rep = admissibility_report(c)
    assert not rep.admissible
    assert rep.face_issues == [{"face": 2, "reason": "constant impedance part is zero"}]


def test_vertex_and_obstacle_degree_rules():
    # prism over a triangle with angles pi/3, pi/4: vertex degree is the max over its edges
    tri = geo.triangle_with_angles(math.pi / 3, math.pi / 4)
    rep = admissibility_report(geo.prism(tri))
    degs = sorted(v.degree for v in rep.vertex_corners)
    # triangle angles pi/3, pi/4, 5pi/12 combined with right-angle cap edges
    assert degs == [3, 3, 4, 4, 12, 12]
    assert rep.degree == 3 and rep.degree_at_least_3


def test_dihedral_reconstruction():
    for p in (geo.cube(), geo.regular_tetrahedron(), geo.icosphere(1), geo.prism(geo.triangle_with_angles(0.9, 1.2))):
        for e in extract_edge_corners(p):
            na, nb = p.normals[e.plane_a], p.normals[e.plane_b]
            assert 0 < e.alpha < 1
            assert math.pi - math.acos(np.clip(na @ nb, -1, 1)) == pytest.approx(e.dihedral, abs=1e-10)


def test_nonconvex_reflex_edge():
    # L-shaped prism has one reflex vertical edge with exterior wedge pi/2
    L = [[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2]]
    edges = extract_edge_corners(geo.prism(L))
    reflex = [e for e in edges if not e.convex]
    assert len(reflex) == 1 and reflex[0].alpha == pytest.approx(0.5)


def test_validation_errors():
    c = geo.cube()
    faces = list(c.faces)
    with pytest.raises(GeometryError):
        Polyhedron(c.vertices, faces[:-1])
    flipped = [Face(f.vertex_indices[::-1], f.impedance) for f in faces]
    with pytest.raises(GeometryError):
        Polyhedron(c.vertices, flipped)
    v = np.array(c.vertices)
    v[7] += [0, 0, 0.1]
    with pytest.raises(GeometryError):
        Polyhedron(v, faces)
    with pytest.raises(GeometryError):
        ImpedanceSpec(complex("nan"))


def test_volume_contains_distance():
    s = geo.icosphere(3, radius=1.0)
    assert s.volume == pytest.approx(4 / 3 * math.pi, rel=2e-2)
    inside = s.contains([[0, 0, 0], [0.5, 0.2, 0.1], [1.2, 0, 0]])
    assert inside.tolist() == [True, True, False]
    c = geo.cube(2.0)
    assert c.distance_to_boundary([[0, 0, 0], [0.5, 0, 0], [3, 0, 0]]) == pytest.approx([1.0, 0.5, 2.0])
    assert c.inradius() == pytest.approx(1.0, rel=1e-9)


def test_offi_round_trip(tmp_path):
    p = geo.prism(geo.triangle_with_angles(0.7, 1.1), eta=[1, 2 + 1j, 0.1 / 3, 1e-17 + 3j, -4.25])
    path = tmp_path / "p.offi"
    geo.write_offi(p, path)
    q = geo.read_offi(path)
    assert np.array_equal(p.vertices, q.vertices)
    assert np.array_equal(p.impedances, q.impedances)
    assert [f.vertex_indices for f in p.faces] == [f.vertex_indices for f in q.faces]


def test_offi_decimal_inputs(tmp_path):
    text = "OFFI\n4 4\n0.1 0 0\n1 0 0\n0 1.3333333333333333 0\n0 0 0.7\n3 0 2 1 1.5 0\n3 0 1 3 1 0.25\n3 0 3 2 1 0\n3 1 2 3 2 -1\n"
    path = tmp_path / "t.offi"
    path.write_text(text)
    p = geo.read_offi(path)
    assert p.vertices[2, 1] == 1.3333333333333333 and p.impedances[1] == 1 + 0.25j
    geo.write_offi(p, tmp_path / "u.offi")
    assert np.array_equal(geo.read_offi(tmp_path / "u.offi").vertices, p.vertices)


@pytest.mark.parametrize(
    "text,line",
    [
        ("OFF\n", 1),
        ("OFFI\n4\n", 2),
        ("OFFI\n1 1\n0 0\n", 3),
        ("OFFI\n3 1\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7 1 0\n", 6),
        ("OFFI\n3 1\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2 1\n", 6),
    ],
)
def test_offi_errors(tmp_path, text, line):
    path = tmp_path / "bad.offi"
    path.write_text(text)
    with pytest.raises(FormatError) as exc:
        geo.read_offi(path)
    assert exc.value.lineno == line


def test_grati_round_trip(tmp_path):
    g = geo.pyramid_grating(1.0).with_impedance([1, 2, 3, 4, 5, 6, 7 + 1j, 8])
    geo.write_grati(g, tmp_path / "g.grati")
    h = geo.read_grati(tmp_path / "g.grati")
    assert all(np.array_equal(a, b) for a, b in zip(g.facets, h.facets))
    assert np.array_equal(g.impedances, h.impedances)
    (tmp_path / "bad.grati").write_text("GRATI\n1\n3 0 0 0 1 0 0 0 1 0 1\n")
    with pytest.raises(FormatError) as exc:
        geo.read_grati(tmp_path / "bad.grati")
    assert exc.value.lineno == 3


def test_grating_corners_flat():
    gc = grating_corners(geo.flat_grating())
    assert gc.edge_corners == [] and gc.vertex_corners == []


def test_grating_corners_pyramid():
    g = geo.pyramid_grating(height=1.0, base=math.pi)
    gc = grating_corners(g)
    assert len(gc.edge_corners) == 8
    apex = [v for v in gc.vertex_corners if abs(v.apex[2] - 1.0) < 1e-12]
    assert len(apex) == 1 and len(apex[0].edge_corners) == 4
    assert len(gc.vertex_corners) == 5  # apex plus the four base corners on the floor
    # independent oracle: slant facets have slope 1/(pi/2) against the floor
    slope = 1.0 / (math.pi / 2)
    base_alpha = (math.pi - math.atan(slope)) / math.pi
    base = [e for e in gc.edge_corners if abs(e.segment[0][2]) < 1e-12 and abs(e.segment[1][2]) < 1e-12]
    assert len(base) == 4
    for e in base:
        assert e.alpha == pytest.approx(base_alpha, abs=1e-12)
        assert not e.convex


def test_grating_corners_trapezoid():
    gc = grating_corners(geo.trapezoid_grating(height=1.0, floor=1.0))
    assert len(gc.edge_corners) == 4
    for e in gc.edge_corners:
        assert e.alpha == pytest.approx(0.75, abs=1e-12)
        assert e.angle_class.rational and e.angle_class.p == 4
    assert gc.verdict == "rational" and gc.degree == 4


def test_grating_periodicity_and_validation():
    g = geo.pyramid_grating(1.0)
    rng = np.random.default_rng(0)
    xy = rng.uniform(0, 2 * math.pi, (200, 2))
    h = g.height(xy)
    for shift in ([2 * math.pi, 0], [0, 2 * math.pi]):
        assert np.max(np.abs(g.height(xy + shift) - h)) < 1e-12
    with pytest.raises(GeometryError):
        geo.GratingProfile([np.array([[0, 0, 0], [math.pi, 0, 0], [math.pi, math.pi, 0], [0, math.pi, 0]])])
    slanted = np.array([[0, 0, 0], [2 * math.pi, 0, 1], [2 * math.pi, 2 * math.pi, 1], [0, 2 * math.pi, 0]], float)
    with pytest.raises(GeometryError):
        geo.GratingProfile([slanted])


def test_transformations():
    c = geo.cube()
    assert c.scaled(2.0).volume == pytest.approx(8.0)
    assert np.allclose(c.translated([1, 2, 3]).centroid, [1, 2, 3])
    R = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]], float)
    assert c.rotated(R).volume == pytest.approx(1.0)
