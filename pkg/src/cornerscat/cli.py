"""Command-line driver: ``cornerscat run | validate | formats``.

A run reads a JSON config, executes one scenario, writes CSV and JSON
outputs to the output directory and finishes with ``manifest.json`` listing
every output with its sha256. Exit codes: 0 success, 2 solver failure,
3 hypothesis-audit failure, 4 invalid input.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from fractions import Fraction
from pathlib import Path

SCHEMA_VERSION = 1
EXIT_OK, EXIT_SOLVER, EXIT_AUDIT, EXIT_INPUT = 0, 2, 3, 4

SCENARIOS = (
    "solve-obstacle",
    "solve-grating",
    "verify-corner",
    "estimate-vanishing",
    "uniqueness-gap",
    "recover-impedance",
    "audit",
)

BUILTIN_OBSTACLES = ("cube", "box", "regular_tetrahedron", "icosphere", "prism")
BUILTIN_GRATINGS = ("flat", "pyramid", "trapezoid")

FORMATS = """\
OFFI  polyhedral obstacle (text, '#' starts a comment)
  line 1      OFFI
  line 2      V F
  V lines     x y z
  F lines     k i1 ... ik  re(eta) im(eta)      outward counter-clockwise loops, 0-based indices

GRATI  bi-periodic polyhedral grating, period 2*pi in x1 and x2
  line 1      GRATI
  line 2      facet count
  per facet   k x1 x2 x3 ... (k vertices in cell coordinates)  re(eta) im(eta)

Config (JSON)
  schema_version   1
  scenario         one of: {scenarios}
  seed             integer >= 0 (default 0)
  output_dir       directory for outputs (overridden by --out)
  obstacle(s)      OFFI path or {{"builtin": name, ...args}}; builtins: {obstacles}
  grating(s)       GRATI path or {{"builtin": name, ...args}}; builtins: {gratings}
  params           scenario parameters (k, theta, phi, d, tolerances, truncations)

Outputs (UTF-8, LF, header row)
  far_field.csv      theta,phi,re,im        ('#' lines carry k, d, residual)
  rayleigh.csv       n1,n2,re_u,im_u,re_beta,im_beta
  field_slice.csv    x1,x2,re,im            (grid on x3 = b)
  impedance.csv      face,re_eta,im_eta,spread,mask_fraction,n_points
  *.json             reports; manifest.json lists every output with sha256
""".format(scenarios=", ".join(SCENARIOS), obstacles=", ".join(BUILTIN_OBSTACLES), gratings=", ".join(BUILTIN_GRATINGS))


class ConfigError(ValueError):
    pass


class AuditFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# config


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _complex(v, name="value"):
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return complex(float(v[0]), float(v[1]))
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return complex(v)
    if isinstance(v, str):
        try:
            return complex(v.replace(" ", ""))
        except ValueError:
            pass
    raise ConfigError(f"{name}: expected a number, [re, im] or a complex string, got {v!r}")


def _number(params, key, default=None, lo=None, hi=None, integer=False):
    v = params.get(key, default)
    if v is None:
        raise ConfigError(f"params.{key} is required")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"params.{key} must be a number")
    if integer and int(v) != v:
        raise ConfigError(f"params.{key} must be an integer")
    if (lo is not None and v < lo) or (hi is not None and v > hi):
        raise ConfigError(f"params.{key}={v} outside [{lo}, {hi}]")
    return int(v) if integer else float(v)


def _resolve(base: Path, p) -> Path:
    q = Path(p)
    return q if q.is_absolute() else base / q


def load_config(path) -> dict:
    path = Path(path)
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}")
    if cfg.get("scenario") not in SCENARIOS:
        raise ConfigError(f"scenario must be one of {', '.join(SCENARIOS)}")
    seed = cfg.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if not isinstance(cfg.get("params", {}), dict):
        raise ConfigError("params must be an object")
    cfg.setdefault("params", {})
    cfg["_base"] = path.resolve().parent
    cfg["_path"] = path
    return cfg


def _input_files(cfg) -> list:
    out = []
    for key in ("obstacle", "grating", "obstacles", "gratings"):
        v = cfg.get(key)
        for item in v if isinstance(v, list) else [v]:
            if isinstance(item, str):
                out.append(_resolve(cfg["_base"], item))
    return out


def _build_obstacle(spec, base):
    from . import geometry as geo

    if isinstance(spec, str):
        p = _resolve(base, spec)
        if not p.exists():
            raise ConfigError(f"obstacle file {p} not found")
        try:
            return geo.read_offi(p)
        except geo.FormatError as exc:
            raise ConfigError(f"{p}: {exc}") from None
    if not isinstance(spec, dict) or spec.get("builtin") not in BUILTIN_OBSTACLES:
        raise ConfigError(f"obstacle must be an OFFI path or a builtin among {BUILTIN_OBSTACLES}")
    args = {k: v for k, v in spec.items() if k != "builtin"}
    if "eta" in args:
        args["eta"] = _complex(args["eta"], "eta")
    name = spec["builtin"]
    try:
        if name == "prism":
            angles = args.pop("angles", [1.0, 0.9])
            scale = float(args.pop("scale", 1.0))
            tri = geo.triangle_with_angles(float(angles[0]), float(angles[1])) * scale
            return geo.prism(tri, **args)
        return getattr(geo, name)(**args)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"builtin obstacle {name}: {exc}") from None


def _build_grating(spec, base):
    from . import geometry as geo

    if isinstance(spec, str):
        p = _resolve(base, spec)
        if not p.exists():
            raise ConfigError(f"grating file {p} not found")
        try:
            return geo.read_grati(p)
        except geo.FormatError as exc:
            raise ConfigError(f"{p}: {exc}") from None
    if not isinstance(spec, dict) or spec.get("builtin") not in BUILTIN_GRATINGS:
        raise ConfigError(f"grating must be a GRATI path or a builtin among {BUILTIN_GRATINGS}")
    args = {k: v for k, v in spec.items() if k != "builtin"}
    if "eta" in args:
        args["eta"] = _complex(args["eta"], "eta")
    try:
        return getattr(geo, spec["builtin"] + "_grating")(**args)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"builtin grating {spec['builtin']}: {exc}") from None


def _scatterer(cfg, plural=False):
    base = cfg["_base"]
    if plural:
        if "obstacles" in cfg:
            items = cfg["obstacles"]
            kind, build = "obstacle", _build_obstacle
        elif "gratings" in cfg:
            items = cfg["gratings"]
            kind, build = "grating", _build_grating
        else:
            raise ConfigError("uniqueness-gap needs 'obstacles' or 'gratings' (a list of two)")
        if not isinstance(items, list) or len(items) != 2:
            raise ConfigError(f"'{kind}s' must list exactly two scatterers")
        return kind, [build(s, base) for s in items]
    if "obstacle" in cfg:
        return "obstacle", _build_obstacle(cfg["obstacle"], base)
    if "grating" in cfg:
        return "grating", _build_grating(cfg["grating"], base)
    raise ConfigError(f"scenario {cfg['scenario']} needs an 'obstacle' or a 'grating'")


_SOLVER_KEYS = ("h", "spacing", "grading_levels", "grading_ratio", "rcond", "max_residual", "raise_on_failure")


def _solver_kw(params):
    kw = {k: params[k] for k in _SOLVER_KEYS if k in params}
    if kw.get("max_residual", 0) is None:
        kw["max_residual"] = float("inf")
        kw.setdefault("raise_on_failure", False)
    return kw


def _incident(params):
    import numpy as np

    from .helmholtz_obstacle import IncidentWave

    k = _number(params, "k", lo=1e-6, hi=50.0)
    d = np.asarray(params.get("d", [0.0, 0.0, 1.0]), dtype=float)
    if d.shape != (3,) or not np.linalg.norm(d) > 0:
        raise ConfigError("params.d must be a nonzero 3-vector")
    return IncidentWave(k, tuple(d / np.linalg.norm(d)))


def _angles(params):
    import math

    return (_number(params, "k", lo=1e-6, hi=50.0), _number(params, "theta", 0.0, -2 * math.pi, 2 * math.pi),
            _number(params, "phi", 0.0, -math.pi / 2, math.pi / 2))


# ---------------------------------------------------------------------------
# scenarios


class _Run:
    def __init__(self, cfg, out: Path):
        self.cfg, self.out, self.params = cfg, out, cfg["params"]
        self.outputs, self.residuals, self.summary = [], {}, {}

    def path(self, name) -> Path:
        self.outputs.append(name)
        return self.out / name

    def write_json(self, name, data):
        from .uniqueness import _jsonable

        with open(self.path(name), "w", encoding="utf-8", newline="\n") as fh:
            json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, name, header, rows):
        lines = [header] + [",".join(repr(v) if isinstance(v, float) else str(v) for v in r) for r in rows]
        with open(self.path(name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")


def _solve(kind, scat, params):
    if kind == "obstacle":
        from .helmholtz_obstacle import solve_scattering

        return solve_scattering(scat, _incident(params), **_solver_kw(params))
    from .helmholtz_grating import solve_grating

    k, theta, phi = _angles(params)
    return solve_grating(scat, k, theta, phi, **_solver_kw(params))


def _run_solve_obstacle(run):
    import numpy as np

    from .helmholtz_obstacle import far_field, sphere_far_field, write_far_field_csv

    kind, obs = _scatterer(run.cfg)
    if kind != "obstacle":
        raise ConfigError("solve-obstacle needs an 'obstacle'")
    sol = _solve(kind, obs, run.params)
    ff = far_field(sol, _number(run.params, "order", 16, 2, 64, integer=True))
    write_far_field_csv(ff, run.path("far_field.csv"))
    run.residuals["boundary"] = sol.residual
    run.summary.update({"residual": sol.residual, "far_field_norm": ff.l2_norm(), "diagnostics": sol.diagnostics})
    oracle = run.params.get("sphere_oracle")
    if oracle:
        radius = float(oracle.get("radius", 1.0)) if isinstance(oracle, dict) else 1.0
        eta = obs.faces[0].impedance.alpha0
        if isinstance(oracle, dict) and "eta" in oracle:
            eta = _complex(oracle["eta"], "sphere_oracle.eta")
        ref = sphere_far_field(sol.incident.k, radius, eta, ff.directions @ np.asarray(sol.incident.d))
        err = ff.relative_distance(ref)
        run.summary["oracle_relative_l2"] = err
        print(f"oracle error (relative L2 against impedance-sphere series): {err:.3e}")


def _run_solve_grating(run):
    from .helmholtz_grating import rayleigh_expand, write_field_slice_csv, write_rayleigh_csv

    kind, g = _scatterer(run.cfg)
    if kind != "grating":
        raise ConfigError("solve-grating needs a 'grating'")
    sol = _solve(kind, g, run.params)
    b = _number(run.params, "b", g.max_height + 1.0, g.max_height + 1e-6)
    spec = rayleigh_expand(sol, b)
    write_rayleigh_csv(spec, run.path("rayleigh.csv"))
    write_field_slice_csv(sol, b, _number(run.params, "slice_N", 32, 2, 512, integer=True), run.path("field_slice.csv"))
    run.residuals["boundary"] = sol.residual
    prop = {f"{n[0]},{n[1]}": v for n, v in spec.efficiency(sol.beta0).items()}
    run.summary.update({"residual": sol.residual, "flux": spec.flux(sol.beta0), "efficiencies": prop,
                        "diagnostics": sol.diagnostics})


def _exact_eta(v):
    if isinstance(v, (list, tuple)) and len(v) == 2 and all(isinstance(t, (int, str)) for t in v):
        return (Fraction(v[0]), Fraction(v[1]))
    if isinstance(v, (int, str)) and not isinstance(v, bool):
        try:
            return Fraction(v)
        except ValueError:
            pass
    return _complex(v, "eta")


def _run_verify_corner(run):
    from .eigencorner import CornerData, certify_vanishing

    p = run.params
    a = p.get("alpha")
    try:
        alpha = Fraction(a) if isinstance(a, str) else float(a)
        c = CornerData(alpha, _exact_eta(p.get("eta1", 1)), _exact_eta(p.get("eta2", 1)), float(p.get("lam", 1.0)))
    except (TypeError, ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"verify-corner: {exc}") from None
    rep = certify_vanishing(c, _number(p, "N_target", 8, 1, 40, integer=True))
    run.write_json("vanishing.json", rep.to_dict())
    blk = rep.blocking
    run.summary.update({"certified_order": rep.certified_order, "exact": rep.exact,
                        "blocking": None if blk is None else {"condition": str(blk), "order": blk.order, "m": blk.m}})


def _field_sampler(spec, seed):
    import math

    import numpy as np

    from .specfun import spherical_bessel_j, spherical_harmonic, to_spherical

    kind = spec.get("kind")
    k = float(spec.get("k", 1.0))
    if kind == "regular_wave":
        n, m = int(spec["n"]), int(spec.get("m", 0))
        if abs(m) > n:
            raise ConfigError("field: need |m| <= n")

        def u(q):
            r, t, p = to_spherical(q)
            return 4 * math.pi * 1j**n * spherical_bessel_j(n, k * r) * spherical_harmonic(n, m, t, p)

        return u, k * k
    if kind == "plane_wave":
        d = np.asarray(spec.get("d", [0, 0, 1]), dtype=float)
        d = d / np.linalg.norm(d)
        return (lambda q: np.exp(1j * k * (q @ d))), k * k
    raise ConfigError("field.kind must be 'regular_wave' or 'plane_wave'")


def _run_estimate_vanishing(run):
    import numpy as np

    from .eigencorner import estimate_vanishing_order
    from .uniqueness import corner_vanishing_probe

    p = run.params
    point = np.asarray(p.get("point", [0.0, 0.0, 0.0]), dtype=float)
    if point.shape != (3,):
        raise ConfigError("params.point must be a 3-vector")
    rho = p.get("rho_values")
    n_points = _number(p, "n_points", 2**15, 2**8, 2**22, integer=True)
    if "field" in run.cfg:
        sampler, _ = _field_sampler(run.cfg["field"], run.cfg.get("seed", 0))
        est = estimate_vanishing_order(sampler, point, rho_values=rho, n_points=n_points, seed=run.cfg.get("seed", 0))
        out = {"estimate": est.to_dict()}
    else:
        kind, scat = _scatterer(run.cfg)
        sol = _solve(kind, scat, p)
        run.residuals["boundary"] = sol.residual
        try:
            out = corner_vanishing_probe(sol, point, rho_values=rho, n_points=n_points)
        except ValueError as exc:
            raise ConfigError(f"estimate-vanishing: {exc}") from None
    run.write_json("vanishing_estimate.json", out)
    e = out["estimate"]
    run.summary.update({"order": e["order"], "order_int": e["order_int"], "degenerate": e["degenerate"]})


def _run_uniqueness_gap(run):
    from .uniqueness import grating_gap, obstacle_gap

    p = run.params
    kind, (s1, s2) = _scatterer(run.cfg, plural=True)
    max_res = p.get("max_residual", 1e-3)
    kw = {k: v for k, v in _solver_kw(p).items() if k not in ("max_residual", "raise_on_failure")}
    if kind == "obstacle":
        rep = obstacle_gap(s1, s2, _incident(p), order=_number(p, "order", 16, 2, 64, integer=True),
                           max_residual=max_res, solver_kw=kw)
    else:
        k, theta, phi = _angles(p)
        rep = grating_gap(s1, s2, k, theta, phi, b=p.get("b"), N=_number(p, "N", 32, 2, 256, integer=True),
                          max_residual=max_res, solver_kw=kw)
    run.write_json("gap_report.json", rep.to_dict())
    run.residuals["solves"] = rep.details.get("residuals")
    run.summary.update({"gap": rep.gap, "baseline": rep.baseline, "verdict": rep.verdict})


def _run_recover_impedance(run):
    from .uniqueness import RecoveryRefused, recover_impedance

    p = run.params
    kind, scat = _scatterer(run.cfg)
    sol = _solve(kind, scat, p)
    run.residuals["boundary"] = sol.residual
    nface = len(scat.faces) if kind == "obstacle" else len(scat.facets)
    faces = p.get("faces", list(range(nface)))
    if any(not isinstance(f, int) or not 0 <= f < nface for f in faces):
        raise ConfigError(f"params.faces must be indices in [0, {nface})")
    rows, refused = [], {}
    for f in faces:
        try:
            e = recover_impedance(sol, f)
        except RecoveryRefused as exc:
            refused[f] = {"message": str(exc), "mask_fraction": exc.mask_fraction}
            continue
        rows.append((f, e.eta_hat.real, e.eta_hat.imag, e.pointwise_spread, e.mask_fraction, e.n_points))
    run.write_csv("impedance.csv", "face,re_eta,im_eta,spread,mask_fraction,n_points", rows)
    run.summary.update({"estimated": len(rows), "refused": refused})


def _run_audit(run):
    from .uniqueness import hypothesis_audit

    p = run.params
    kind, scat = _scatterer(run.cfg)
    sol = None
    if p.get("estimate_l", False):
        sol = _solve(kind, scat, p)
        run.residuals["boundary"] = sol.residual
    rep = hypothesis_audit(scat, sol, estimate_l=sol is not None)
    run.write_json("audit.json", rep.to_dict())
    run.summary.update({"degree": rep.degree, "verdict": rep.verdict,
                        "hypotheses": {k: v["status"] for k, v in rep.hypotheses.items()}})
    if not any(v["status"] == "pass" for v in rep.hypotheses.values()):
        failing = "; ".join(f"{k}: {v['failing']}" for k, v in rep.hypotheses.items())
        raise AuditFailure(f"no uniqueness hypothesis holds ({failing})")


_RUNNERS = {
    "solve-obstacle": _run_solve_obstacle,
    "solve-grating": _run_solve_grating,
    "verify-corner": _run_verify_corner,
    "estimate-vanishing": _run_estimate_vanishing,
    "uniqueness-gap": _run_uniqueness_gap,
    "recover-impedance": _run_recover_impedance,
    "audit": _run_audit,
}


# ---------------------------------------------------------------------------
# commands


def _validate(cfg):
    for f in _input_files(cfg):
        if not f.exists():
            raise ConfigError(f"input file {f} not found")
    sc = cfg["scenario"]
    if sc == "uniqueness-gap":
        _scatterer(cfg, plural=True)
    elif sc == "estimate-vanishing" and "field" in cfg:
        _field_sampler(cfg["field"], cfg.get("seed", 0))
    elif sc != "verify-corner":
        _scatterer(cfg)


def cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config)
        _validate(cfg)
    except ConfigError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(f"{args.config}: valid {cfg['scenario']} config")
    return EXIT_OK


def cmd_run(args) -> int:
    t0 = time.perf_counter()
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.seed is not None:
        cfg["seed"] = args.seed
    out = Path(args.out or cfg.get("output_dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    run = _Run(cfg, out)

    from .helmholtz_grating import AliasingError
    from .helmholtz_obstacle import SolverError
    from .eigencorner import FitError

    status, message = EXIT_OK, "ok"
    try:
        _validate(cfg)
        _RUNNERS[cfg["scenario"]](run)
    except ConfigError as exc:
        status, message = EXIT_INPUT, f"invalid input: {exc}"
    except (SolverError, FitError, AliasingError) as exc:
        status, message = EXIT_SOLVER, f"solver failure: {exc}"
    except AuditFailure as exc:
        status, message = EXIT_AUDIT, f"hypothesis audit failed: {exc}"
    if run.summary or status == EXIT_OK:
        run.write_json("summary.json", run.summary)

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "scenario": cfg["scenario"],
        "config": {"path": str(cfg["_path"]), "sha256": _sha256(cfg["_path"])},
        "inputs": [{"path": str(f), "sha256": _sha256(f)} for f in _input_files(cfg) if f.exists()],
        "parameters": cfg["params"],
        "seed": cfg.get("seed", 0),
        "threads": args.threads,
        "residuals": run.residuals,
        "exit_status": status,
        "message": message,
        "wall_time_s": time.perf_counter() - t0,
        "outputs": [{"path": name, "sha256": _sha256(out / name)} for name in run.outputs],
    }
    from .uniqueness import _jsonable

    with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")
    stream = sys.stdout if status == EXIT_OK else sys.stderr
    print(f"{cfg['scenario']}: {message} (outputs in {out})", file=stream)
    return status


def cmd_formats(args) -> int:
    print(FORMATS, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cornerscat", description="Corner scattering experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="execute a scenario config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", default=None)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--threads", type=int, default=None)
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("validate", help="check a config and its input files")
    v.add_argument("--config", required=True)
    v.set_defaults(func=cmd_validate)
    f = sub.add_parser("formats", help="print input and output file formats")
    f.set_defaults(func=cmd_formats)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = getattr(args, "threads", None)
    if threads:
        # only effective when numerical libraries have not been loaded yet
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
