"""Command-line front end: run configs in, JSON/CSV artifacts plus a hashed manifest out.

Exit codes: 0 success, 1 computation error (or failed checks for ``verify``),
2 invalid configuration.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__

TASKS = ("asymptotics", "solve", "critical", "sweep", "verify")
TOLERANCE_KEYS = {"tail": float, "mean_tol": float, "gauss_nodes": int, "nodes_per_diameter": int,
                  "xtol": float}


class ConfigError(ValueError):
    """Invalid run configuration; ``field`` names the offending entry."""

    def __init__(self, field: str, msg: str):
        super().__init__(f"{field}: {msg}")
        self.field = field


# -- config ----------------------------------------------------------------------

def _number(cfg, key, kind=float, positive=True, default=None, where=""):
    if key not in cfg:
        if default is None:
            raise ConfigError(where + key, "missing")
        return default
    val = cfg[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(where + key, f"expected a number, got {val!r}")
    if kind is int and int(val) != val:
        raise ConfigError(where + key, "expected an integer")
    if positive and not val > 0:
        raise ConfigError(where + key, "must be positive")
    return kind(val)


def _number_list(cfg, key, where=""):
    if key not in cfg:
        raise ConfigError(where + key, "missing")
    vals = cfg[key]
    if not isinstance(vals, list) or not vals:
        raise ConfigError(where + key, "expected a non-empty list")
    for i, x in enumerate(vals):
        if isinstance(x, bool) or not isinstance(x, (int, float)) or not x > 0:
            raise ConfigError(f"{where}{key}[{i}]", f"expected a positive number, got {x!r}")
    return [float(x) for x in vals]


def validate_config(cfg: dict, task: str) -> dict:
    """Check a raw config against the schema for ``task``; return a normalized copy."""
    if not isinstance(cfg, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    known = {"task", "geometry", "profile", "lambdas", "sigma_grid", "K", "mesh", "tolerances",
             "output", "criteria", "quick"}
    extra = sorted(set(cfg) - known)
    if extra:
        raise ConfigError(extra[0], "unknown key")
    if cfg.get("task", task) != task:
        raise ConfigError("task", f"config is for {cfg['task']!r}, command is {task!r}")
    out = {"task": task}
    tol = cfg.get("tolerances", {})
    if not isinstance(tol, dict):
        raise ConfigError("tolerances", "expected an object")
    for k, v in tol.items():
        if k not in TOLERANCE_KEYS:
            raise ConfigError(f"tolerances.{k}", "unknown tolerance")
        out.setdefault("tolerances", {})[k] = _number(tol, k, TOLERANCE_KEYS[k], where="tolerances.")
    outcfg = cfg.get("output", {})
    if not isinstance(outcfg, dict):
        raise ConfigError("output", "expected an object")
    extra = sorted(set(outcfg) - {"directory", "formats"})
    if extra:
        raise ConfigError(f"output.{extra[0]}", "unknown key")
    fmt = outcfg.get("formats", ["csv", "json"])
    if not isinstance(fmt, list) or not set(fmt) <= {"csv", "json"} or not fmt:
        raise ConfigError("output.formats", "expected a non-empty subset of ['csv', 'json']")
    out["formats"] = sorted(set(fmt))
    if "directory" in outcfg:
        if not isinstance(outcfg["directory"], str) or not outcfg["directory"]:
            raise ConfigError("output.directory", "expected a non-empty string")
        out["directory"] = outcfg["directory"]
    if task == "verify":
        crit = cfg.get("criteria", list(range(1, 10)))
        if not isinstance(crit, list) or not crit or any(c not in range(1, 10) for c in crit):
            raise ConfigError("criteria", "expected a non-empty list drawn from 1..9")
        out["criteria"] = sorted(set(crit))
        out["quick"] = bool(cfg.get("quick", False))
        return out
    geo = cfg.get("geometry")
    if not isinstance(geo, dict):
        raise ConfigError("geometry", "missing or not an object")
    n = geo.get("n")
    if n not in (2, 3):
        raise ConfigError("geometry.n", "must be 2 or 3")
    out["geometry"] = {"n": n, "d": _number(geo, "d", default=math.pi, where="geometry.")}
    if not isinstance(cfg.get("profile"), dict):
        raise ConfigError("profile", "missing or not an object")
    out["profile"] = dict(cfg["profile"])
    out["K"] = _number(cfg, "K", int, default=200)
    if task in ("asymptotics", "solve", "sweep"):
        out["lambdas"] = _number_list(cfg, "lambdas")
        if task == "sweep" and len(out["lambdas"]) < 1:
            raise ConfigError("lambdas", "empty")
    if task == "critical":
        grid = _number_list(cfg, "sigma_grid")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("sigma_grid", "must be strictly increasing")
        out["sigma_grid"] = grid
    if task in ("solve", "sweep"):
        mesh = cfg.get("mesh", {})
        if not isinstance(mesh, dict):
            raise ConfigError("mesh", "expected an object")
        d = out["geometry"]["d"]
        h = _number_list(mesh, "h", where="mesh.") if "h" in mesh else [d / 8, d / 16, d / 32]
        closure = mesh.get("closure", "transparent")
        if closure not in ("transparent", "dirichlet"):
            raise ConfigError("mesh.closure", "must be 'transparent' or 'dirichlet'")
        coords = mesh.get("coords", "axisymmetric" if n == 3 else "planar")
        if coords not in ("planar", "axisymmetric"):
            raise ConfigError("mesh.coords", "must be 'planar' or 'axisymmetric'")
        entry = {"h": h, "closure": closure, "coords": coords,
                 "allow_virtual": bool(mesh.get("allow_virtual", False))}
        if "L" in mesh:
            entry["L"] = _number(mesh, "L", where="mesh.")
        if "min_margin" in mesh:
            entry["min_margin"] = _number(mesh, "min_margin", where="mesh.")
        if task == "sweep" and len(h) < 3:
            raise ConfigError("mesh.h", "a sweep needs at least 3 mesh levels")
        out["mesh"] = entry
    return out


def load_config(path: str | None, task: str) -> dict:
    if path is None:
        raw = {}
    else:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError("--config", f"file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"line {e.lineno}", f"invalid JSON: {e.msg}")
    return validate_config(raw, task)


# -- artifacts ------------------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def atomic_write(path: Path, data: str | bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in columns})
    return buf.getvalue()


class ArtifactWriter:
    def __init__(self, out: Path, task: str, config: dict, formats):
        self.out, self.task, self.config, self.formats = out, task, config, formats
        self.files: dict[str, str] = {}

    def write(self, name: str, text: str) -> None:
        atomic_write(self.out / name, text)
        self.files[name] = hashlib.sha256(text.encode()).hexdigest()

    def json(self, name: str, obj) -> None:
        if "json" in self.formats:
            self.write(name, dumps(obj))

    def csv(self, name: str, rows, columns) -> None:
        if "csv" in self.formats:
            self.write(name, csv_text(rows, columns))

    def add_file(self, path: Path) -> None:
        self.files[path.name] = hashlib.sha256(path.read_bytes()).hexdigest()

    def manifest(self, status: str) -> None:
        man = {"tool": "weakbound", "version": __version__, "task": self.task, "status": status,
               "config": self.config,
               "created": dt.datetime.now(dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
               "artifacts": [{"file": k, "sha256": v} for k, v in sorted(self.files.items())]}
        atomic_write(self.out / "manifest.json", dumps(man))


# -- tasks ---------------------------------------------------------------------------

def _setup(cfg):
    from .geometry import WaveguideGeometry
    from .profile import QuadratureSpec, from_config

    g = WaveguideGeometry(cfg["geometry"]["n"], cfg["geometry"]["d"])
    tol = cfg.get("tolerances", {})
    quad = QuadratureSpec(**{k: tol[k] for k in ("gauss_nodes", "nodes_per_diameter", "mean_tol")
                             if k in tol})
    try:
        v = from_config(cfg["profile"], g.base_dim)
    except ValueError as e:
        raise ConfigError("profile", str(e))
    return g, v, quad


def task_asymptotics(cfg, w: ArtifactWriter, args) -> int:
    from .asymptotics import m2, to_json

    g, v, quad = _setup(cfg)
    c = m2(v, g, cfg["K"], quad, cfg.get("tolerances", {}).get("tail", 0.05))
    data = to_json(v, g, cfg["lambdas"], coeffs=c)
    w.json("asymptotics.json", {**data, "n": g.n, "d": g.d, "profile": v.to_config()})
    w.csv("predictions.csv", data["predictions"], ["lambda", "E", "exists", "m_lambda", "w"])
    return 0


def _mesh_for(g, v, mcfg, h):
    from .direct_solver import build_mesh, default_truncation

    margin = mcfg.get("min_margin", g.d if mcfg["closure"] == "transparent" else None)
    if "L" in mcfg:
        L = mcfg["L"]
    elif mcfg["closure"] == "transparent":
        L = v.support_radius + (margin if margin is not None else g.d)
    else:
        L = default_truncation(g, v, None)
    return build_mesh(g, v, L, h, mcfg["closure"], mcfg["coords"], min_margin=margin), L, margin


def task_solve(cfg, w: ArtifactWriter, args) -> int:
    from .direct_solver import CSV_COLUMNS, assemble_forms, dump_matrices, restrict, solve, _lat_dim

    g0, v, _ = _setup(cfg)
    mcfg = cfg["mesh"]
    h = min(mcfg["h"])
    rows, results = [], []
    for lam in sorted(cfg["lambdas"]):
        g = g0.with_lambda(lam)
        mesh, _, _ = _mesh_for(g, v, mcfg, h)
        r = solve(g, v, mesh, allow_virtual=mcfg["allow_virtual"])
        if args.dump_matrices:
            w.out.mkdir(parents=True, exist_ok=True)
            A, B = assemble_forms(g, v, mesh)
            A, B, _ = restrict(A, B, mesh, _lat_dim(g, mesh))
            for p in dump_matrices(A, B, str(w.out / f"pencil_lambda{lam:g}")):
                w.add_file(Path(p))
        row = ({"n": g.n, "d": g.d, "lambda": lam, "L": mesh.L, "h_x": mesh.h_x, "h_u": mesh.h_u,
                "converged": True} if r is None else r.row())
        row["kind"] = "none" if r is None else r.kind
        row["w"] = None if r is None else r.w
        rows.append(row)
    w.json("solve.json", {"profile": v.to_config(), "mesh": mcfg, "results": rows})
    w.csv("solve.csv", rows, list(CSV_COLUMNS) + ["kind", "w"])
    return 0


def task_sweep(cfg, w: ArtifactWriter, args) -> int:
    from .asymptotics import m2, predict_from
    from .oracle import ConvergenceResult, SweepSpec, fit_expansion, sweep

    g, v, quad = _setup(cfg)
    mcfg = cfg["mesh"]
    _, L, margin = _mesh_for(g.with_lambda(min(cfg["lambdas"])), v, mcfg, max(mcfg["h"]))
    spec = SweepSpec(tuple(mcfg["h"]), L, mcfg["closure"], mcfg["coords"], margin,
                     mcfg["allow_virtual"])
    runs = sweep(g, v, cfg["lambdas"], spec, args.jobs)
    c = m2(v, g, cfg["K"], quad)
    rows, good, failed = [], [], []
    for lam, r in runs:
        p = predict_from(g, lam, c.m1, c.m2)
        if not isinstance(r, ConvergenceResult):
            failed.append(lam)
            rows.append({"lambda": lam, "E_pred": p.E_pred, "E_num": None, "error": str(r)})
            continue
        good.append((lam, r))
        E = r.result.E
        rel = abs(E - p.E_pred) / abs(g.threshold - E) if p.E_pred is not None and E != g.threshold else None
        rows.append({"lambda": lam, "E_pred": p.E_pred, "E_num": E, "gap": r.result.gap,
                     "m_lambda": r.result.m_lambda, "w": r.result.w, "kind": r.result.kind,
                     "error_estimate": r.error_estimate, "order": r.order, "rel_gap_diff": rel})
    fit = None
    if len(good) >= 4:
        try:
            fit = fit_expansion(good, g.n).to_dict()
        except ValueError as e:
            fit = {"error": str(e)}
    w.json("sweep.json", {"profile": v.to_config(), "mesh": mcfg, "coefficients": c.to_dict(),
                          "rows": rows, "fit": fit, "failed_lambdas": failed})
    w.csv("sweep.csv", rows, ["lambda", "E_pred", "E_num", "gap", "m_lambda", "w", "kind",
                              "error_estimate", "order", "rel_gap_diff"])
    return 0


def task_critical(cfg, w: ArtifactWriter, args) -> int:
    from .critical import sigma_scan

    g, v, quad = _setup(cfg)
    scan = sigma_scan(v, g, cfg["sigma_grid"], args.paper_literal, quad, cfg["K"])
    w.json("critical.json", {"profile": v.to_config(), "paper_literal": args.paper_literal,
                             "sigma_star": scan.sigma_star, "crossings": scan.crossings,
                             "bound_zeros": scan.bracket, "message": scan.message,
                             "reports": [r.to_dict() for r in scan.reports]})
    w.csv("critical.csv", scan.rows(), ["sigma", "m2", "lower", "upper", "verdict"])
    return 0


def task_verify(cfg, w: ArtifactWriter, args) -> int:
    from .verification import run_checks

    results = run_checks(cfg["criteria"], cfg["quick"], args.jobs)
    for r in results:
        print(r.line())
    w.json("verify.json", {"quick": cfg["quick"],
                           "checks": [{"id": r.id, "name": r.name, "expected": r.expected,
                                       "observed": r.observed, "tolerance": r.tolerance,
                                       "passed": r.passed} for r in results],
                           "details": {str(r.id): r.details for r in results}})
    return 0 if all(r.passed for r in results) else 1


RUNNERS = {"asymptotics": task_asymptotics, "solve": task_solve, "sweep": task_sweep,
           "critical": task_critical, "verify": task_verify}


def apply_tolerances(cfg: dict, pairs) -> dict:
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError("--tolerance", f"expected KEY=VALUE, got {item!r}")
        k, val = item.split("=", 1)
        if k not in TOLERANCE_KEYS:
            raise ConfigError(f"--tolerance {k}", "unknown tolerance")
        try:
            num = TOLERANCE_KEYS[k](val)
        except ValueError:
            raise ConfigError(f"--tolerance {k}", f"not a number: {val!r}")
        if not num > 0:
            raise ConfigError(f"--tolerance {k}", "must be positive")
        cfg.setdefault("tolerances", {})[k] = num
    return cfg


def run(task: str, args) -> int:
    try:
        cfg = apply_tolerances(load_config(args.config, task), args.tolerance)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    out = Path(args.out or cfg.get("directory") or f"runs/{task}")
    w = ArtifactWriter(out, task, cfg, cfg["formats"])
    try:
        status = RUNNERS[task](cfg, w, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        mod = type(e).__module__.replace("weakbound.", "")
        print(f"error [{mod}.{type(e).__name__}]: {e}", file=sys.stderr)
        w.manifest("error")
        return 1
    w.manifest("ok" if status == 0 else "checks_failed")
    return status


# -- report --------------------------------------------------------------------------

def _fmt(x, spec=".6g"):
    if x is None:
        return "-"
    if isinstance(x, float):
        return format(x, spec)
    return str(x)


def _table(headers, rows) -> str:
    cells = [[_fmt(c) for c in r] for r in rows]
    widths = [max(len(h), *(len(r[i]) for r in cells)) if cells else len(h)
              for i, h in enumerate(headers)]
    line = "  ".join(h.rjust(wd) for h, wd in zip(headers, widths))
    body = ["  ".join(c.rjust(wd) for c, wd in zip(r, widths)) for r in cells]
    return "\n".join([line, "-" * len(line)] + body)


def report(directory: str) -> int:
    d = Path(directory)
    try:
        man = json.loads((d / "manifest.json").read_text())
        task = man["task"]
        for a in man["artifacts"]:
            if hashlib.sha256((d / a["file"]).read_bytes()).hexdigest() != a["sha256"]:
                raise ValueError(f"hash mismatch for {a['file']}")
    except (OSError, ValueError, KeyError, TypeError) as e:
        print(f"error [report]: missing or corrupt manifest: {e}", file=sys.stderr)
        return 1
    print(f"task: {task}   status: {man.get('status')}   version: {man.get('version')}")
    try:
        data = json.loads((d / f"{task}.json").read_text())
    except (OSError, ValueError):
        print("(no JSON result artifact)")
        return 0
    if task == "sweep":
        print(_table(["lambda", "E_pred", "E_num", "rel_diff"],
                     [[r["lambda"], r.get("E_pred"), r.get("E_num"), r.get("rel_gap_diff")]
                      for r in data["rows"]]))
    elif task == "critical":
        star = data.get("sigma_star")
        rows = [[r["sigma"], r["m2"], r["lower_bound"], r["upper_bound"], r["verdict"]]
                for r in data["reports"]]
        print(_table(["sigma", "m2", "lower", "upper", "verdict"], rows))
        print(f">>> sigma* = {star:.6g}" if isinstance(star, float) else f">>> {data.get('message')}")
    elif task == "verify":
        for c in data["checks"]:
            print(f"[{'PASS' if c['passed'] else 'FAIL'}] {c['id']}. {c['name']}: {c['observed']}")
    elif task == "asymptotics":
        print(f"m1 = {data['m1']:.10g}   m2 = {data['m2']:.10g}   tail <= {data['tail_bound']:.3g}")
        print(_table(["lambda", "m_lambda", "E_pred", "exists"],
                     [[r["lambda"], r["m_lambda"], r["E"], r["exists"]]
                      for r in data["predictions"]]))
    elif task == "solve":
        print(_table(["lambda", "E", "gap", "m_lambda", "kind"],
                     [[r["lambda"], r.get("E"), r.get("gap"), r.get("m_lambda"), r["kind"]]
                      for r in data["results"]]))
    return 0


# -- entry point ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="weakbound", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--kernel-report", action="store_true",
                   help="print operator norms against Schur-Holmgren bounds and exit")
    sub = p.add_subparsers(dest="command")
    for t in TASKS:
        s = sub.add_parser(t, help=f"run the {t} task")
        s.add_argument("--config", help="run config (JSON)")
        s.add_argument("--out", help=f"artifact directory (default: output.directory, else runs/{t})")
        s.add_argument("--jobs", type=int, default=1, help="worker processes")
        s.add_argument("--tolerance", action="append", metavar="KEY=VALUE",
                       help=f"override a tolerance ({', '.join(TOLERANCE_KEYS)})")
        s.add_argument("--paper-literal", action="store_true",
                       help="critical: use 8/2 instead of 9/2 as the lower-bound constant")
        s.add_argument("--dump-matrices", action="store_true",
                       help="solve: write the stiffness and mass pencil (Matrix Market)")
    r = sub.add_parser("report", help="summarize an artifact directory")
    r.add_argument("directory")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.kernel_report:
        from .kernels import kernel_report

        rows = kernel_report()
        print(_table(["kernel", "operator_norm", "sh_bound", "ok"],
                     [[r["kernel"], r["operator_norm"], r["sh_bound"], r["ok"]] for r in rows]))
        return 0 if all(r["ok"] for r in rows) else 1
    if args.command is None:
        parser.print_help()
        return 2
    if args.command == "report":
        return report(args.directory)
    if args.jobs < 1:
        print("config error: --jobs must be >= 1", file=sys.stderr)
        return 2
    if args.config is None and args.command != "verify":
        print("config error: --config is required", file=sys.stderr)
        return 2
    return run(args.command, args)


if __name__ == "__main__":
    sys.exit(main())
