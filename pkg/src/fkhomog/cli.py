"""Command-line front end: deterministic, scriptable pipeline runs.

Subcommands cover the whole chain: ``check`` (structural assumptions),
``simulate`` (microscopic trajectories), ``effham`` (effective Hamiltonian
tables), ``hull`` (hull extraction), ``homogenize`` (macroscopic solve),
``converge`` (eps study) and ``pipeline`` (all stages with content-hash
caching).  Identical config + seed gives byte-identical outputs regardless
of --threads; exit codes: 0 success, 2 validation, 3 numerical failure,
4 partial success.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from . import model as mdl
from . import chain as chn
from . import rotation as rot
from . import hull as hl
from . import macro as mac

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_PARTIAL = 4

CACHE_VERSION = 1

_RATIONAL = {
    "type": "array", "items": {"type": "integer"},
    "minItems": 2, "maxItems": 2,
    "description": "exact rational as [numerator, denominator]",
}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["model"],
    "additionalProperties": False,
    "properties": {
        "model": {
            "type": "object",
            "required": ["force"],
            "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "m": {"type": "integer", "minimum": 0},
                "m0": {"type": "number", "exclusiveMinimum": 0},
                "alpha0": {"type": "number", "exclusiveMinimum": 0},
                "force": {
                    "type": "object",
                    "required": ["kind"],
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["classical_fk", "constant"]},
                        "theta": {"type": "array", "minItems": 1,
                                  "items": {"type": "number", "exclusiveMinimum": 0}},
                        "amplitude": {"type": "number", "minimum": 0},
                        "drive": {"type": "number"},
                        "value": {"type": "number"},
                    },
                },
            },
        },
        "simulate": {
            "type": "object",
            "required": ["p", "T", "sample_dt"],
            "additionalProperties": False,
            "properties": {
                "p": _RATIONAL,
                "cells": {"type": "integer", "minimum": 1},
                "T": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "sample_dt": {"type": "number", "exclusiveMinimum": 0},
                "delta": {"type": "number", "minimum": 0, "maximum": 1},
                "a0": {"type": "number"},
                "snapshot_stride": {"type": "integer", "minimum": 0},
                "perturbation_scale": {"type": "number", "minimum": 0},
            },
        },
        "effham": {
            "type": "object",
            "required": ["p_grid", "L_grid"],
            "additionalProperties": False,
            "properties": {
                "p_grid": {"type": "array", "minItems": 1, "items": _RATIONAL},
                "L_grid": {"type": "array", "minItems": 1, "items": {"type": "number"}},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "T_cap": {"type": "number", "exclusiveMinimum": 0},
                "cells": {"type": "integer", "minimum": 1},
            },
        },
        "hull": {
            "type": "object",
            "required": ["p"],
            "additionalProperties": False,
            "properties": {
                "p": _RATIONAL,
                "L": {"type": "number"},
                "Z": {"type": "integer", "minimum": 4},
                "snapshots": {"type": "integer", "minimum": 8},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "T_cap": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "homogenize": {
            "type": "object",
            "required": ["u0_file", "T", "dx", "L"],
            "additionalProperties": False,
            "properties": {
                "u0_file": {"type": "string"},
                "T": {"type": "number", "exclusiveMinimum": 0},
                "dx": {"type": "number", "exclusiveMinimum": 0},
                "L": {"type": "number"},
                "table_file": {"type": "string"},
                "record_times": {"type": "array", "items": {"type": "number"}},
            },
        },
        "converge": {
            "type": "object",
            "required": ["u0_file", "eps_list", "T", "window", "L"],
            "additionalProperties": False,
            "properties": {
                "u0_file": {"type": "string"},
                "xi0_file": {"type": "string"},
                "M0": {"type": "number", "minimum": 0},
                "eps_list": {"type": "array", "minItems": 1,
                             "items": {"type": "number", "exclusiveMinimum": 0}},
                "T": {"type": "number", "exclusiveMinimum": 0},
                "window": {"type": "array", "items": {"type": "number"},
                           "minItems": 2, "maxItems": 2},
                "L": {"type": "number"},
                "table_file": {"type": "string"},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "out_dir": {"type": "string"},
    },
}


class ConfigError(ValueError):
    pass


def load_config(path: str) -> dict:
    try:
        with open(path) as f:
            cfg = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}")
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict):
    errors = sorted(Draft202012Validator(CONFIG_SCHEMA).iter_errors(cfg),
                    key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "config." + ".".join(str(p) for p in e.absolute_path) \
            if e.absolute_path else "config"
        raise ConfigError(f"{where}: {e.message}")
    # cross-field checks the schema cannot express
    force = cfg["model"]["force"]
    if force["kind"] == "classical_fk" and "theta" not in force:
        raise ConfigError("config.model.force.theta: required for classical_fk")
    if "m0" not in cfg["model"] and "alpha0" not in cfg["model"]:
        raise ConfigError("config.model: m0 or alpha0 is required")
    for key in ("simulate", "hull", "effham"):
        blk = cfg.get(key)
        if not blk:
            continue
        ps = blk.get("p_grid") or ([blk["p"]] if "p" in blk else [])
        for p in ps:
            if p[1] == 0 or Fraction(p[0], p[1]) <= 0:
                raise ConfigError(f"config.{key}: slope p must be a positive rational")
    conv = cfg.get("converge")
    if conv:
        eps = conv["eps_list"]
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("config.converge.eps_list: must be strictly decreasing")
        if conv["window"][1] <= conv["window"][0]:
            raise ConfigError("config.converge.window: must have positive width")


def _frac(pair) -> Fraction:
    return Fraction(pair[0], pair[1])


# ---------------------------------------------------------------------------
# Content-hash cache
# ---------------------------------------------------------------------------

class Cache:
    def __init__(self, root: Path, log=print):
        self.root = root
        self.log = log
        root.mkdir(parents=True, exist_ok=True)

    def key(self, stage: str, payload: dict) -> str:
        blob = json.dumps({"v": CACHE_VERSION, "stage": stage, "payload": payload},
                          sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def get_text(self, stage: str, payload: dict) -> tuple[str, str | None]:
        k = self.key(stage, payload)
        p = self.root / f"{stage}-{k}.txt"
        if p.exists():
            self.log(f"[cache] hit {stage} {k}")
            return k, p.read_text()
        self.log(f"[cache] miss {stage} {k}")
        return k, None

    def put_text(self, stage: str, key: str, text: str):
        (self.root / f"{stage}-{key}.txt").write_text(text)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _out_dir(cfg: dict, args) -> Path:
    out = Path(args.out or cfg.get("out_dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_check(cfg: dict, args) -> int:
    out = _out_dir(cfg, args)
    model = mdl.model_from_config(cfg["model"])
    report = mdl.check_assumptions(model)
    (out / "assumptions.json").write_text(mdl.report_to_json(report))
    for key in ("a1", "a2", "a3", "a4", "a5", "a6"):
        c = getattr(report, key)
        print(f"{key}: holds={c.holds} margin={c.margin:.6g}")
    print(f"critical_mass: {report.critical_mass:.6g} (model m0 = {model.m0:.6g})")
    if not report.a6.holds:
        print("advisory: a6 (ordering between types) fails; "
              "particle-ordering results are not certified")
    return EXIT_OK if report.core_holds else EXIT_VALIDATION


def cmd_simulate(cfg: dict, args) -> int:
    out = _out_dir(cfg, args)
    blk = cfg.get("simulate")
    if not blk:
        raise ConfigError("config.simulate: block required for this command")
    model = mdl.model_from_config(cfg["model"])
    p = _frac(blk["p"])
    cells = blk.get("cells", 1)
    pert = None
    scale = blk.get("perturbation_scale", 0.0)
    if scale > 0:
        rng = np.random.default_rng(cfg.get("seed", 0))
        n_part = model.n * p.denominator * cells
        spacing = float(p) / model.n
        pert = rng.uniform(-1.0, 1.0, n_part) * min(scale, 0.45 * spacing)
    chain = chn.init_linear(model, p, cells=cells, perturbation=pert)
    log = chn.run(chain, blk["T"], blk["sample_dt"], dt=blk.get("dt"),
                  delta=blk.get("delta", 0.0), a0=blk.get("a0", 0.0),
                  snapshot_stride=blk.get("snapshot_stride", 0))
    ledger = mdl.constants_ledger(model, p=float(p))
    inv = chn.monitor_invariants(log, ledger)
    (out / "trajectory.csv").write_text(chn.trajectory_to_csv(log))
    (out / "final_snapshot.csv").write_text(chn.snapshot_to_csv(log.final_state))
    (out / "invariants.json").write_text(json.dumps(inv.to_json_dict(), indent=2,
                                                    sort_keys=True))
    print(f"simulated to tau = {log.final_state.tau:.6g}; "
          f"ordering violation {inv.ordering_violation:.3g}, "
          f"u-xi gap {inv.u_xi_gap:.3g} (bound {inv.gap_bound:.3g})")
    return EXIT_OK


def _effham_table(cfg: dict, args, cache: Cache | None):
    blk = cfg.get("effham")
    if not blk:
        raise ConfigError("config.effham: block required")
    model = mdl.model_from_config(cfg["model"])
    payload = {"model": cfg["model"], "effham": blk, "seed": cfg.get("seed", 0)}
    if cache is not None:
        key, text = cache.get_text("effham", payload)
        if text is not None:
            return rot.EffectiveTable.from_csv(text), text, True
    table = rot.sweep(model, [_frac(p) for p in blk["p_grid"]], blk["L_grid"],
                      tol=blk.get("tol", 1e-3), T_cap=blk.get("T_cap", 2000.0),
                      threads=args.threads, cells=blk.get("cells", 1))
    text = table.to_csv()
    if cache is not None:
        cache.put_text("effham", key, text)
    return table, text, False


def cmd_effham(cfg: dict, args) -> int:
    out = _out_dir(cfg, args)
    table, text, _ = _effham_table(cfg, args, None)
    (out / "effective_table.csv").write_text(text)
    (out / "effective_table.json").write_text(rot.table_to_json(table))
    worst = rot.monotone_in_L_violation(table)
    print(f"monotonicity in L: worst downward step beyond half-widths = {worst:.3g} "
          f"({'ok' if worst <= 0 else 'VIOLATED'})")
    if table.failures:
        print(f"{len(table.failures)} entries failed numerically")
        return EXIT_NUMERICAL if len(table.failures) == table.lam.size else EXIT_PARTIAL
    if not table.converged.all():
        print(f"{int((~table.converged).sum())} entries hit T_cap before tol")
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_hull(cfg: dict, args) -> int:
    out = _out_dir(cfg, args)
    blk = cfg.get("hull")
    if not blk:
        raise ConfigError("config.hull: block required")
    model = mdl.model_from_config(cfg["model"])
    p = _frac(blk["p"])
    L = blk.get("L", 0.0)
    Z = blk.get("Z", 64)
    est = rot.rotation_number(model, p, L_extra=L, tol=blk.get("tol", 1e-3),
                              T_cap=blk.get("T_cap", 2000.0))
    model2 = mdl.with_extra_drive(model, L)
    chain = chn.init_linear(model2, p, cells=1)
    n_snap = blk.get("snapshots", 256)
    sample_dt = chn.cfl_dt(model2, 0.5)
    warmup = 10.0 / model2.alpha0 + est.T
    log = chn.run(chain, warmup + n_snap * sample_dt, sample_dt, snapshot_stride=1)
    hull = hl.extract_hull(log, est.lambda_hat, p, Z=Z,
                           lambda_halfwidth=est.halfwidth_best)
    res = hl.hull_residual(hull, model2) if model2.is_autonomous else {}
    axioms = hl.verify_hull_axioms(hull, est.ledger)
    (out / "hull.csv").write_text(hl.hull_to_csv(hull))
    (out / "hull.json").write_text(hl.hull_header_json(hull, res))
    (out / "hull_axioms.json").write_text(json.dumps(axioms.to_json_dict(),
                                                     indent=2, sort_keys=True))
    print(f"lambda = {est.lambda_hat:.6g} +- {est.halfwidth_best:.2g}; "
          f"axioms ok = {axioms.all_ok}; residuals = {res}")
    return EXIT_OK if axioms.all_ok else EXIT_PARTIAL


def _load_profile(path: str) -> mac.Profile:
    try:
        return mac.Profile.from_csv(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"u0_file: cannot read {path}: {exc}")


def _interp_for(cfg, args, blk, cache) -> mac.HamiltonianInterp:
    if "table_file" in blk:
        try:
            table = rot.EffectiveTable.from_csv(Path(blk["table_file"]).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"table_file: cannot read {blk['table_file']}: {exc}")
    else:
        table, _, _ = _effham_table(cfg, args, cache)
    return mac.HamiltonianInterp.from_table(table, blk["L"])


def cmd_homogenize(cfg: dict, args, cache: Cache | None = None) -> int:
    out = _out_dir(cfg, args)
    blk = cfg.get("homogenize")
    if not blk:
        raise ConfigError("config.homogenize: block required")
    u0 = _load_profile(blk["u0_file"])
    s = u0.slopes()
    if s.min() <= 0:
        raise ConfigError("config.homogenize.u0_file: profile violates the slope "
                          "frame (nonpositive chord); see check_A0")
    K0 = max(float(s.max()), 1.0 / float(s.min()), 1.0)
    rep = mac.check_A0(u0, K0)
    if not rep.ok:
        raise ConfigError(f"config.homogenize.u0_file: profile fails (A0): {rep}")
    H = _interp_for(cfg, args, blk, cache)
    times = blk.get("record_times", [blk["T"]])
    state = mac.solve_hj(H, u0, blk["T"], blk["dx"], K0=K0, record_times=times)
    (out / "macro.csv").write_text(state.to_csv())
    print(f"solved to t = {state.t:.6g}; slope range seen {state.slope_range_seen}")
    return EXIT_OK


def cmd_converge(cfg: dict, args, cache: Cache | None = None) -> int:
    out = _out_dir(cfg, args)
    blk = cfg.get("converge")
    if not blk:
        raise ConfigError("config.converge: block required")
    model = mdl.model_from_config(cfg["model"])
    u0 = _load_profile(blk["u0_file"])
    H = _interp_for(cfg, args, blk, cache)
    # key on profile contents, not paths, so edited files never stale-hit
    digests = {"u0": hashlib.sha256(u0.to_csv().encode()).hexdigest()}
    if "xi0_file" in blk:
        digests["xi0"] = hashlib.sha256(
            _load_profile(blk["xi0_file"]).to_csv().encode()).hexdigest()
    payload = {"model": cfg["model"], "converge": blk, "seed": cfg.get("seed", 0),
               "profiles": digests}
    if cache is not None:
        key, text = cache.get_text("converge", payload)
        if text is not None:
            (out / "convergence.json").write_text(text)
            print("convergence report served from cache")
            return EXIT_OK
    xi0 = _load_profile(blk["xi0_file"]) if "xi0_file" in blk else None
    report = mac.convergence_study(model, blk["L"], u0, blk["eps_list"], blk["T"],
                                   tuple(blk["window"]), H,
                                   xi0=xi0, M0=blk.get("M0", 0.0))
    text = report.to_json()
    if cache is not None:
        cache.put_text("converge", key, text)
    (out / "convergence.json").write_text(text)
    decreasing = all(a > b for a, b in zip(report.errors, report.errors[1:]))
    print(f"errors: {list(report.errors)}")
    print(f"rates: {list(report.rates)} (decreasing={decreasing})")
    return EXIT_OK


def cmd_pipeline(cfg: dict, args) -> int:
    out = _out_dir(cfg, args)
    cache = Cache(out / "cache")
    stage = "check"
    try:
        model = mdl.model_from_config(cfg["model"])
        report = mdl.check_assumptions(model)
        if not report.core_holds:
            print(f"pipeline halted at stage {stage}")
            return EXIT_VALIDATION
        stage = "effham"
        table, text, _ = _effham_table(cfg, args, cache)
        (out / "effective_table.csv").write_text(text)
        stage = "homogenize"
        rc = cmd_homogenize(cfg, args, cache)
        if rc != EXIT_OK:
            print(f"pipeline halted at stage {stage}")
            return rc
        stage = "converge"
        rc = cmd_converge(cfg, args, cache)
        if rc != EXIT_OK:
            print(f"pipeline halted at stage {stage}")
            return rc
    except (chn.NumericalError, mac.MacroError, hl.HullExtractionError) as exc:
        print(f"pipeline failed at stage {stage}: {exc}", file=sys.stderr)
        print(f"artifacts so far are under {out}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


COMMANDS = {
    "check": cmd_check,
    "simulate": cmd_simulate,
    "effham": cmd_effham,
    "hull": cmd_hull,
    "homogenize": cmd_homogenize,
    "converge": cmd_converge,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fkhomog",
                                 description="FK chain homogenization pipeline")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int, default=None, help="override config seed")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, mdl.ModelError, mac.MacroError, rot.LogTooShort,
            hl.HullExtractionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except chn.NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
