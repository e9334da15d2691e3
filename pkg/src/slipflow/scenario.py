"""Scenario files: parsing, the solve -> verify pipeline and report writing.

A scenario is a JSON object; the recognized keys are listed in
``DEFAULTS`` and documented in the README.  Reports are deterministic for a
fixed config and seed: wall-clock times go to ``timings.json``, never to
``report.json``.
"""

from __future__ import annotations

import copy
import json
import math
import os
import time
from pathlib import Path

import numpy as np

from . import estimates as est
from .carrier import FluxCarrier, carrier_bounds_report, check_velocity_identity
from .errors import ConfigInvalid, SlipflowError
from .fem.mesh import GRADINGS, build_mesh, curvature_adapted_vertices, width_adapted_vertices
from .geometry import ChannelProfile, TruncatedDomain, build_reparametrization
from .shear import PAPER, WEAK
from .solver import (
    MeshSpec,
    SolveOptions,
    build_problem,
    continuation_in_flux,
    solve_flow,
    uniqueness_probe,
)

SCHEMA_VERSION = 1

CHECKS = ("energy_profile", "fit_growth", "plateau_check", "lower_bound_check",
          "uniform_local_check", "far_field_check", "decay_rate_check", "condition_check",
          "uniqueness_probe", "carrier_bounds_report")
SWEEP_PARAMETERS = ("phi", "T", "mesh")
PASSING = {"Pass", "Unique"}
ALLOWED_SOFT = {"Inconclusive"}

DEFAULTS = {
    "name": "scenario",
    "profile": None,  # {"f1": ..., "f2": ...} or {"half_width": ...}
    "alpha": 1.0,
    "convention": WEAK,
    "theta": None,
    "phi": 0.1,
    "eps": 0.25,
    "domain": None,  # {"T": ...} or {"a": ..., "b": ...}
    "mesh": {"nx": 32, "ny": 8},
    "solver": {},
    "checks": ["energy_profile"],
    "check_options": {},
    "allow_inconclusive": True,
    "seed": 0,
    "sweep": None,  # {"parameter": ..., "values": [...]}
    "inequalities": {},
}


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

def _num(cfg, key, lo=None, strict=False, integer=False):
    val = cfg[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigInvalid(key, f"expected a number, got {val!r}")
    if integer and int(val) != val:
        raise ConfigInvalid(key, f"expected an integer, got {val!r}")
    if not math.isfinite(val):
        raise ConfigInvalid(key, "must be finite")
    if lo is not None and (val < lo or (strict and val == lo)):
        raise ConfigInvalid(key, f"must be {'>' if strict else '>='} {lo}, got {val!r}")
    return int(val) if integer else float(val)


def load_config(source) -> dict:
    """Read a scenario (path or dict), fill defaults and validate every field."""
    if isinstance(source, dict):
        raw = copy.deepcopy(source)
    else:
        try:
            with open(source) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigInvalid("config", f"cannot read {source}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigInvalid("config", f"invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigInvalid("config", "top level must be an object")
    unknown = sorted(set(raw) - set(DEFAULTS))
    if unknown:
        raise ConfigInvalid(unknown[0], "unknown field")
    cfg = copy.deepcopy(DEFAULTS)
    cfg.update(raw)
    validate(cfg)
    return cfg


def validate(cfg):
    prof = cfg["profile"]
    if not isinstance(prof, dict) or not (("f1" in prof and "f2" in prof) or "half_width" in prof):
        raise ConfigInvalid("profile", "needs f1 and f2 (or half_width)")
    _num(cfg, "alpha", 0.0)
    _num(cfg, "phi", 0.0)
    _num(cfg, "eps", 0.0, strict=True)
    if cfg["eps"] >= 1:
        raise ConfigInvalid("eps", "must lie in (0, 1)")
    if cfg["theta"] is not None:
        _num(cfg, "theta", 0.0)
    if cfg["convention"] not in (WEAK, PAPER):
        raise ConfigInvalid("convention", f"must be {WEAK} or {PAPER}")
    _num(cfg, "seed", 0.0, integer=True)
    dom = cfg["domain"]
    if not isinstance(dom, dict):
        raise ConfigInvalid("domain", "needs T or (a, b)")
    if "T" in dom:
        _num(dom, "T", 0.0, strict=True)
    elif "a" in dom and "b" in dom:
        if _num(dom, "b") <= _num(dom, "a"):
            raise ConfigInvalid("domain", "needs a < b")
    else:
        raise ConfigInvalid("domain", "needs T or (a, b)")
    mesh = cfg["mesh"]
    if not isinstance(mesh, dict):
        raise ConfigInvalid("mesh", "must be an object")
    if mesh.get("adapt") not in (None, "curvature", "width"):
        raise ConfigInvalid("mesh.adapt", "must be null, curvature or width")
    if mesh.get("adapt") != "curvature":
        _num(mesh, "nx", 1, integer=True)
    _num(mesh, "ny", 1, integer=True)
    if mesh.get("grading", "CarrierBand") not in GRADINGS:
        raise ConfigInvalid("mesh.grading", f"must be one of {GRADINGS}")
    ladder = cfg["solver"].get("ladder")
    if ladder is not None:
        if not ladder or any(not isinstance(v, (int, float)) or v <= 0 for v in ladder):
            raise ConfigInvalid("solver.ladder", "must be a nonempty list of positive fluxes")
        if any(b <= a for a, b in zip(ladder, ladder[1:])):
            raise ConfigInvalid("solver.ladder", "must increase strictly")
    for c in cfg["checks"]:
        if c not in CHECKS:
            raise ConfigInvalid("checks", f"unknown check {c!r}")
    sweep = cfg["sweep"]
    if sweep is not None:
        if sweep.get("parameter") not in SWEEP_PARAMETERS:
            raise ConfigInvalid("sweep.parameter", f"must be one of {SWEEP_PARAMETERS}")
        vals = sweep.get("values")
        if not isinstance(vals, list) or not vals:
            raise ConfigInvalid("sweep.values", "must be a nonempty list")
        if sweep["parameter"] in ("phi", "T"):
            if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in vals):
                raise ConfigInvalid("sweep.values", "must be numbers")
            if any(b <= a for a, b in zip(vals, vals[1:])):
                raise ConfigInvalid("sweep.values", "must increase strictly")
            if sweep["parameter"] == "phi" and vals[0] < 0:
                raise ConfigInvalid("sweep.values", "fluxes must be nonnegative")
            if sweep["parameter"] == "T" and vals[0] <= 0:
                raise ConfigInvalid("sweep.values", "T values must be positive")
        else:
            for v in vals:
                if not (isinstance(v, list) and len(v) == 2 and all(isinstance(k, int) and k > 0 for k in v)):
                    raise ConfigInvalid("sweep.values", "mesh values are [nx, ny] pairs")


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def build_profile(cfg) -> ChannelProfile:
    p = cfg["profile"]
    kw = {k: p[k] for k in ("d", "beta", "gamma_pp") if k in p}
    try:
        if "half_width" in p:
            return ChannelProfile.symmetric(p["half_width"], **kw)
        return ChannelProfile.from_expressions(p["f1"], p["f2"], **kw)
    except SlipflowError as exc:
        raise ConfigInvalid("profile", str(exc)) from exc


def build_domain(cfg, profile) -> TruncatedDomain:
    d = cfg["domain"]
    if "T" in d:
        return TruncatedDomain(profile, -float(d["T"]), float(d["T"]))
    return TruncatedDomain(profile, float(d["a"]), float(d["b"]))


def build_mesh_spec(cfg, domain) -> MeshSpec:
    m = cfg["mesh"]
    grading = m.get("grading", "CarrierBand")
    order = int(m.get("order", 6))
    adapt = m.get("adapt")
    if adapt == "curvature":
        xv = curvature_adapted_vertices(domain, h_curved=m.get("h_curved", 0.125),
                                        h_flat=m.get("h_flat", 0.5))
        return MeshSpec(len(xv) - 1, int(m["ny"]), grading, tuple(map(float, xv)), order)
    if adapt == "width":
        xv = width_adapted_vertices(domain, int(m["nx"]), power=m.get("width_power", 1.0))
        return MeshSpec(int(m["nx"]), int(m["ny"]), grading, tuple(map(float, xv)), order)
    return MeshSpec(int(m["nx"]), int(m["ny"]), grading, None, order)


def build_options(cfg) -> SolveOptions:
    s = {k: v for k, v in cfg["solver"].items() if k != "ladder"}
    try:
        return SolveOptions(convention=cfg["convention"], **s)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid("solver", str(exc)) from exc


def solve_scenario(cfg):
    """Assemble and solve; returns (state, solver reports)."""
    prof = build_profile(cfg)
    dom = build_domain(cfg, prof)
    spec = build_mesh_spec(cfg, dom)
    problem = build_problem(dom, cfg["alpha"], spec, eps=cfg["eps"], phi=cfg["phi"], theta=cfg["theta"])
    opts = build_options(cfg)
    phi = cfg["phi"]
    ladder = cfg["solver"].get("ladder")
    if phi == 0 or not ladder:
        state, rep = solve_flow(problem.with_phi(phi), opts)
        return state, [rep]
    ladder = [float(v) for v in ladder if v < phi] + [phi]
    return continuation_in_flux(problem, opts, phi, ladder=ladder)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def to_jsonable(obj):
    """numpy -> python; non-finite floats become null (strict JSON)."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, data):
    with open(path, "w") as fh:
        json.dump(to_jsonable(data), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _solve_summary(state, reports):
    last = reports[-1]
    rep = {k: v for k, v in last.as_dict().items() if k != "wall_clock"}
    return {
        "report": rep,
        "ladder": [r.phi for r in reports],
        "energy_v": state.grad_energy_v(),
        "wall_energy": state.wall_energy(),
        "flux_error": state.flux_error(),
        "divergence_residual": state.divergence_residual(),
        "wall_normal_max": state.wall_normal_max(),
        "eps": state.problem.eps,
        "mesh": {"nx": state.problem.mesh.nx, "ny": state.problem.mesh.ny,
                 "grading": state.problem.mesh_spec.grading},
    }


def verdict_exit(verdicts: dict, allow_inconclusive=True):
    for v in verdicts.values():
        if v in PASSING or (allow_inconclusive and v in ALLOWED_SOFT):
            continue
        return 1
    return 0


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------

def _ensure_dirs(out):
    out = Path(out)
    (out / "tables").mkdir(parents=True, exist_ok=True)
    (out / "plots").mkdir(parents=True, exist_ok=True)
    return out


def run_checks(state, cfg, out: Path):
    """Evaluate the requested checks; returns (results, verdicts)."""
    opts = cfg["check_options"]
    meter = est.EnergyMeter(state)
    dom = state.problem.domain
    prof = dom.profile
    results, verdicts = {}, {}
    repar = None
    needs_repar = any(c in cfg["checks"] for c in ("decay_rate_check",))

    if needs_repar and prof.beta > 0:
        repar = build_reparametrization(prof, max(-dom.a, dom.b))
    step = opts.get("t_step", 0.5)
    t_grid = est.default_t_grid(dom, step)
    profile = est.energy_profile(state, t_grid, kinds=tuple(opts.get("window_kinds", ("Unit",))),
                                 repar=repar, meter=meter)
    results["energy_profile"] = {"t": profile.t, "y": profile.y, "y_v": profile.yv,
                                 "monotone": profile.is_monotone(), "notes": profile.notes}
    verdicts["energy_profile"] = "Pass" if profile.is_monotone() else "Fail"
    est.write_csv(out / "tables" / "energy_profile.csv", profile.as_table())
    est.write_svg(out / "plots" / "energy_profile.svg", [("y(t)", profile.t, profile.y)],
                  title=cfg["name"], xlabel="t", ylabel="energy")

    for check in cfg["checks"]:
        o = dict(opts.get(check, {}))
        if check == "energy_profile":
            continue
        if check == "fit_growth":
            forms = o.pop("forms", ["Linear"])
            fits = {}
            for form in forms:
                fits[form] = est.fit_growth(profile, form, **o).as_dict()
            results[check] = fits
            verdicts[check] = "Pass" if any(f["verdict"] == "Pass" for f in fits.values()) else "Fail"
        elif check == "plateau_check":
            results[check] = est.plateau_check(profile, **o)
        elif check == "lower_bound_check":
            r = est.lower_bound_check(state, t_grid, meter, **o)
            results[check] = r
            est.write_csv(out / "tables" / "lower_bound.csv", {"t": r["t"], "ratio": r["ratio"]})
            est.write_svg(out / "plots" / "lower_bound.svg", [("ratio", r["t"], r["ratio"])],
                          title="lower bound ratio", ylabel="ratio")
        elif check == "uniform_local_check":
            r = est.uniform_local_check(state, meter, **o)
            results[check] = r
            est.write_csv(out / "tables" / "unit_slabs.csv", {"slab_hi": r["slab_hi"], "energy": r["energy"]})
        elif check == "far_field_check":
            r = est.far_field_check(state, meter=meter, **o)
            results[check] = r
            est.write_csv(out / "tables" / "far_field.csv",
                          {"slab_hi": r["slab_hi"], "deviation": r["deviation"], "noise_floor": r["noise_floor"]})
            est.write_svg(out / "plots" / "far_field.svg",
                          [("deviation", r["slab_hi"], r["deviation"]), ("floor", r["slab_hi"], r["noise_floor"])],
                          title="far field", xlabel="x1", ylabel="slab H1 deviation")
        elif check == "decay_rate_check":
            r = est.decay_rate_check(state, repar=repar, meter=meter, **o)
            results[check] = r
            est.write_csv(out / "tables" / "decay_rate.csv", {"t": r["t"], "C": r["C"]})
        elif check == "condition_check":
            r = est.condition_check(prof)
            r["verdict"] = "Pass" if r["power_law_consistent"] else "Fail"
            results[check] = r
        elif check == "uniqueness_probe":
            u = uniqueness_probe(state.problem, build_options(cfg), n_seeds=int(o.get("n_seeds", 5)),
                                 seed=cfg["seed"], radius=float(o.get("radius", 1.0)))
            results[check] = u.as_dict()
            verdicts[check] = u.verdict
            continue
        elif check == "carrier_bounds_report":
            results[check] = carrier_check(cfg, dom)
        if check != "fit_growth":
            verdicts[check] = results[check]["verdict"]
    return results, verdicts


def carrier_check(cfg, dom=None):
    prof = build_profile(cfg) if dom is None else dom.profile
    dom = dom or build_domain(cfg, prof)
    car = FluxCarrier(cfg["phi"], cfg["eps"], prof)
    rep = carrier_bounds_report(car, dom, seed=cfg["seed"]).as_dict()
    rng = np.random.default_rng(cfg["seed"])
    x1 = rng.uniform(dom.a, dom.b, 10_000)
    s = rng.uniform(0.0, 1.0, 10_000)
    x2 = prof.f1(x1) + s * prof.width(x1)
    rep["velocity_identity_defect"] = check_velocity_identity(car, x1, x2) if cfg["phi"] > 0 else 0.0
    ok = (rep["max_divergence"] < 1e-10 and rep["support_ok"] and rep["midline_ok"]
          and rep["wall_gap_ok"] and math.isfinite(rep["sup_f_g"]) and math.isfinite(rep["sup_f2_grad"]))
    rep["verdict"] = "Pass" if ok else "Fail"
    return rep


def run(cfg, out, command="verify"):
    """One scenario; returns (exit code, report dict).  Solver errors propagate."""
    out = _ensure_dirs(out)
    t0 = time.perf_counter()
    report = {"schema_version": SCHEMA_VERSION, "command": command, "scenario": cfg["name"],
              "seed": cfg["seed"], "config": cfg}
    verdicts = {}
    if command == "carrier-check":
        r = carrier_check(cfg)
        report["carrier_bounds_report"] = r
        verdicts["carrier_bounds_report"] = r["verdict"]
    elif command == "inequalities":
        report["inequalities"], verdicts["inequalities"] = inequalities(cfg)
    else:
        np.random.seed(cfg["seed"])
        state, reports = solve_scenario(cfg)
        report["solve"] = _solve_summary(state, reports)
        if command == "verify":
            cfg_checks = cfg
        else:
            cfg_checks = dict(cfg, checks=[])
        results, verdicts = run_checks(state, cfg_checks, out)
        report["checks"] = results
    report["verdicts"] = verdicts
    code = verdict_exit(verdicts, cfg["allow_inconclusive"])
    report["exit_code"] = code
    write_json(out / "report.json", report)
    write_json(out / "timings.json", {"wall_clock": time.perf_counter() - t0})
    return code, report


def inequalities(cfg):
    from . import inequalities as iq

    prof = build_profile(cfg)
    dom = build_domain(cfg, prof)
    o = cfg["inequalities"]
    nx, ny = o.get("mesh", [max(8, int(4 * dom.length)), 8])
    mesh = build_mesh(dom, int(nx), int(ny))
    rep = iq.inequality_report(dom, mesh, cfg["alpha"], slab_t=o.get("slab_t"), seed=cfg["seed"],
                               korn_trials=int(o.get("korn_trials", 200)))
    out = rep.as_dict()
    out["violations"] = rep.violations()
    out["calibration"] = iq.calibrated_constants()
    return out, ("Pass" if not out["violations"] else "Fail")


def _member_config(cfg, parameter, value):
    sub = copy.deepcopy(cfg)
    sub["sweep"] = None
    if parameter == "phi":
        sub["phi"] = float(value)
    elif parameter == "T":
        sub["domain"] = {"T": float(value)}
    else:
        sub["mesh"] = dict(sub["mesh"], nx=int(value[0]), ny=int(value[1]))
    sub["name"] = f"{cfg['name']}[{parameter}={value}]"
    return sub


def sweep(cfg, out):
    """Run every sweep member in its own subdirectory and aggregate."""
    if cfg["sweep"] is None:
        raise ConfigInvalid("sweep", "missing sweep block")
    out = _ensure_dirs(out)
    t0 = time.perf_counter()
    par = cfg["sweep"]["parameter"]
    values = cfg["sweep"]["values"]
    members, verdicts, rows = [], {}, {"value": [], "energy_v": [], "flux_error": []}
    prev_fit = None
    fits = {"slope": [], "stability": []}
    for i, val in enumerate(values):
        sub = _member_config(cfg, par, val)
        code, rep = run(sub, out / f"member_{i:02d}", "verify")
        entry = {"value": val, "exit_code": code, "verdicts": rep["verdicts"],
                 "solve": {k: rep["solve"][k] for k in ("energy_v", "flux_error", "ladder")}}
        for k, v in rep["verdicts"].items():
            verdicts[f"{k}[{i}]"] = v
        if par == "T" and "fit_growth" in rep["checks"]:
            # slope stability against the previous T
            prof = rep["checks"]["energy_profile"]
            ep = est.EnergyProfile(np.asarray(prof["t"]), np.asarray(prof["y"]), np.asarray(prof["y_v"]),
                                   profile=build_profile(sub))
            o = dict(cfg["check_options"].get("fit_growth", {}))
            form = o.pop("forms", ["Linear"])[0]
            fit = est.fit_growth(ep, form, reference=prev_fit, **o)
            entry["fit"] = fit.as_dict()
            fits["slope"].append(fit.slope)
            fits["stability"].append(fit.stability if fit.stability is not None else 0.0)
            if prev_fit is not None:
                verdicts[f"fit_stability[{i}]"] = fit.verdict
            prev_fit = fit
        rows["value"].append(str(val))
        rows["energy_v"].append(rep["solve"]["energy_v"])
        rows["flux_error"].append(rep["solve"]["flux_error"])
        members.append(entry)
    if fits["slope"]:
        rows.update(fits)
    est.write_csv(out / "tables" / "sweep.csv", rows)
    if par in ("phi", "T"):
        est.write_svg(out / "plots" / "sweep.svg", [("energy_v", values, rows["energy_v"])],
                      title=f"sweep over {par}", xlabel=par, ylabel="||grad v||^2")
    code = verdict_exit(verdicts, cfg["allow_inconclusive"])
    report = {"schema_version": SCHEMA_VERSION, "command": "sweep", "scenario": cfg["name"],
              "seed": cfg["seed"], "config": cfg, "parameter": par, "members": members,
              "verdicts": verdicts, "exit_code": code}
    write_json(out / "report.json", report)
    write_json(out / "timings.json", {"wall_clock": time.perf_counter() - t0})
    return code, report


def default_out(cfg, root="runs"):
    return os.path.join(root, cfg["name"])
