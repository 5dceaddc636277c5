import hashlib
import json
import subprocess
import sys

import pytest

from cornerscat import geometry as geo
from cornerscat.helmholtz_grating import flat_reflection
from cornerscat.cli import EXIT_AUDIT, EXIT_INPUT, EXIT_OK, EXIT_SOLVER, main

FLAT = {"builtin": "flat", "height": 0.0, "eta": 1.0}
FAST = {"h": 0.9}


def _config(tmp_path, name="cfg.json", **cfg):
    cfg.setdefault("schema_version", 1)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def _run(tmp_path, out="out", **cfg):
    path = _config(tmp_path, **cfg)
    code = main(["run", "--config", str(path), "--out", str(tmp_path / out)])
    manifest = json.loads((tmp_path / out / "manifest.json").read_text())
    return code, manifest, tmp_path / out


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_formats(capsys):
    assert main(["formats"]) == EXIT_OK
    text = capsys.readouterr().out
    assert "OFFI" in text and "GRATI" in text and "n1,n2,re_u,im_u,re_beta,im_beta" in text


def test_verify_corner_blocks_at_three(tmp_path):
    code, man, out = _run(tmp_path, scenario="verify-corner",
                          params={"alpha": "1/3", "eta1": 1, "eta2": 1, "N_target": 8})
    assert code == EXIT_OK and man["exit_status"] == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["blocking"]["m"] == 3 and summary["exact"]
    assert summary["certified_order"] == 2


def test_manifest_lists_every_output(tmp_path):
    code, man, out = _run(tmp_path, scenario="verify-corner", params={"alpha": "2/5", "N_target": 6})
    listed = {o["path"]: o["sha256"] for o in man["outputs"]}
    on_disk = {p.name for p in out.iterdir()} - {"manifest.json"}
    assert set(listed) == on_disk
    assert all(_sha(out / name) == h for name, h in listed.items())
    assert man["config"]["sha256"] == _sha(tmp_path / "cfg.json")
    assert man["seed"] == 0 and "wall_time_s" in man


def test_invalid_offi_reports_line(tmp_path, capsys):
    (tmp_path / "bad.offi").write_text("OFFI\n4 1\n0 0 0\n1 0 0\n0 x 0\n")
    path = _config(tmp_path, scenario="audit", obstacle="bad.offi")
    assert main(["validate", "--config", str(path)]) == EXIT_INPUT
    assert "line 5" in capsys.readouterr().err
    code, man, _ = _run(tmp_path, scenario="audit", obstacle="bad.offi")
    assert code == EXIT_INPUT and "line 5" in man["message"]


@pytest.mark.parametrize(
    "text",
    ['{"schema_version": 1, "scenario": "audit",', '{"schema_version": 2, "scenario": "audit"}',
     '{"schema_version": 1, "scenario": "nope"}', '{"schema_version": 1, "scenario": "audit", "seed": -1}'],
)
def test_invalid_config(tmp_path, text):
    path = tmp_path / "c.json"
    path.write_text(text)
    assert main(["validate", "--config", str(path)]) == EXIT_INPUT
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == EXIT_INPUT


def test_parameter_out_of_range(tmp_path):
    code, man, _ = _run(tmp_path, scenario="solve-grating", grating=FLAT, params={"k": 1.2, "phi": 3.0})
    assert code == EXIT_INPUT and "phi" in man["message"]


def test_missing_input_file(tmp_path):
    path = _config(tmp_path, scenario="audit", obstacle="nowhere.offi")
    assert main(["validate", "--config", str(path)]) == EXIT_INPUT


def test_audit_exit_codes(tmp_path):
    code, man, out = _run(tmp_path, scenario="audit", obstacle={"builtin": "cube"})
    assert code == EXIT_AUDIT
    rep = json.loads((out / "audit.json").read_text())
    assert rep["degree"] == 2 and rep["hypotheses"]["rational_obstacle"]["status"] == "fail"
    code, _, _ = _run(tmp_path, out="o2", scenario="audit", obstacle={"builtin": "prism", "angles": [1.0, 0.9]})
    assert code == EXIT_OK


def test_audit_reads_offi_file(tmp_path):
    geo.write_offi(geo.cube(), tmp_path / "cube.offi")
    code, man, _ = _run(tmp_path, scenario="audit", obstacle="cube.offi")
    assert code == EXIT_AUDIT
    assert man["inputs"][0]["sha256"] == _sha(tmp_path / "cube.offi")


def test_solver_failure_exit(tmp_path):
    code, man, _ = _run(tmp_path, scenario="solve-grating", grating={"builtin": "pyramid", "height": 1.0},
                        params={"k": 1.2, "spacing": 1.0, "h": 0.8, "grading_levels": 0})
    assert code == EXIT_SOLVER and "solver failure" in man["message"]


def test_solve_grating_outputs_deterministic(tmp_path):
    cfg = dict(scenario="solve-grating", grating=FLAT, params={"k": 1.2, "b": 1.0, "slice_N": 4, **FAST})
    code, m1, out = _run(tmp_path, out="a", **cfg)
    assert code == EXIT_OK
    _, m2, _ = _run(tmp_path, out="b", **cfg)
    h1 = {o["path"]: o["sha256"] for o in m1["outputs"] if o["path"].endswith(".csv")}
    h2 = {o["path"]: o["sha256"] for o in m2["outputs"] if o["path"].endswith(".csv")}
    assert h1 == h2 and set(h1) == {"rayleigh.csv", "field_slice.csv"}
    s = json.loads((out / "summary.json").read_text())
    assert abs(s["flux"] - abs(flat_reflection(1.2, 1.0)) ** 2) < 1e-5
    assert m1["residuals"]["boundary"] < 1e-3


def test_solve_obstacle_oracle_line(tmp_path, capsys):
    code, man, out = _run(tmp_path, scenario="solve-obstacle", obstacle={"builtin": "icosphere", "level": 1},
                          params={"k": 1.0, "max_residual": None, "order": 8, "sphere_oracle": {"radius": 1.0}})
    assert code == EXIT_OK
    assert "oracle error" in capsys.readouterr().out
    s = json.loads((out / "summary.json").read_text())
    assert 0 < s["oracle_relative_l2"] < 0.5
    assert (out / "far_field.csv").read_text().splitlines()[3] == "theta,phi,re,im"


def test_estimate_vanishing_synthetic(tmp_path):
    code, _, out = _run(tmp_path, scenario="estimate-vanishing",
                        field={"kind": "regular_wave", "n": 2, "m": 1, "k": 1.0},
                        params={"point": [0, 0, 0], "rho_values": [0.2, 0.1, 0.05, 0.025], "n_points": 4096})
    assert code == EXIT_OK
    s = json.loads((out / "summary.json").read_text())
    assert s["order_int"] == 2


def test_gap_and_recovery_on_flat_gratings(tmp_path):
    code, _, out = _run(tmp_path, scenario="uniqueness-gap",
                        gratings=[FLAT, {**FLAT, "eta": 2.0}], params={"k": 1.2, "b": 1.0, "N": 8, **FAST})
    assert code == EXIT_OK
    assert json.loads((out / "summary.json").read_text())["verdict"] == "Distinguished"
    code, _, out = _run(tmp_path, out="r", scenario="recover-impedance",
                        grating={**FLAT, "eta": [2.0, 1.0]}, params={"k": 1.2, **FAST})
    assert code == EXIT_OK
    rows = (out / "impedance.csv").read_text().splitlines()
    assert rows[0] == "face,re_eta,im_eta,spread,mask_fraction,n_points"
    f, re, im = rows[1].split(",")[:3]
    assert abs(complex(float(re), float(im)) - (2 + 1j)) < 2e-3


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "cornerscat", "formats"], capture_output=True, text=True)
    assert res.returncode == 0 and "GRATI" in res.stdout
