"""Command-line entry point: solve, verify, sweep, probe, norms.

Configuration is a flat JSON object with dotted keys for nesting (nested
objects are flattened on load); ``--set key=value`` overrides are applied on
top.  Every command writes ``report.json`` and ``report.csv`` into the output
directory; ``solve`` also writes ``fields/*.hsf1``.

Exit status: 0 when every hard invariant held, 1 when one failed (the
failure list is in report.json and on stderr), 2 for configuration errors,
3 for inputs the experiment cannot use (zero data, unresolved shells).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time as _time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import norms
from .errors import ConfigError, HalfStokesError, InadmissibleExponents, InvalidSpec
from .fields import (
    ScalarField,
    TimeSeriesField,
    TimeSpec,
    VectorField,
    make_grid,
    read_hsf1,
    write_hsf1,
)
from .stokes import SolverConstants, solve_forced, solve_initial
from .verify import (
    CSV_HEADER,
    THEOREMS,
    ExperimentConfig,
    ForcingParams,
    alpha_sweep,
    check_exponents,
    estimate_ratio,
    order_name,
    pde_residual,
    random_divfree_field,
    random_divfree_forcing,
)

log = logging.getLogger("halfstokes")

COMMANDS = ("solve", "verify", "sweep", "probe", "norms")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_INPUT = 0, 1, 2, 3

# key -> (type, default); None default means "unset"
SCHEMA: dict[str, tuple[str, Any]] = {
    "theorem": ("str", "T11-v"),
    "alpha": ("float", None),
    "beta": ("float", None),
    "p": ("float", 2.0),
    "q": ("float", 2.0),
    "n": ("int", 3),
    "N": ("int", 64),
    "N_t": ("int", 64),
    "L_tan": ("float", 4.0),
    "L_nrm": ("float", 4.0),
    "T": ("float", 1.0),
    "ensemble": ("int", 20),
    "seed": ("int", 1),
    "initial": ("bool", False),
    "out": ("str", "out"),
    "workers": ("int", 1),
    "forcing.family": ("str", "bandlimited"),
    "forcing.bandwidth": ("float", None),
    "forcing.modes": ("int", 12),
    "forcing.temporal_cycles": ("float", 1.0),
    "forcing.layer_cells": ("float", 4.0),
    "forcing.tangential_width": ("float", None),
    "forcing.amplitude": ("float", 1.0),
    "solver.w": ("float", 4.0),
    "solver.pressure": ("float", 2.0),
    "sweep.alphas": ("floats", None),
    "sweep.levels": ("ints", None),
    "probe.kinds": ("strs", ["heat", "frac_heat"]),
    "probe.shells": ("ints", None),
    "probe.sigma": ("float", 0.5),
    "probe.count": ("int", 8),
    "norm.field": ("str", None),
    "norm.kind": ("str", "sobolev"),
    "norm.alpha": ("float", 0.0),
    "norm.p": ("float", 2.0),
    "norm.q": ("float", 2.0),
    "norm.homogeneous": ("bool", True),
    "norm.extension": ("str", None),
}

NORM_KINDS = ("lp", "sobolev", "besov", "besov_diff", "mixed", "proxy")


@dataclass(frozen=True)
class CommandOptions:
    """Keys used by a single command (sweep, probe, norms) or by the CLI itself."""

    alphas: Optional[tuple] = None
    levels: Optional[tuple] = None
    probe_kinds: tuple = ("heat", "frac_heat")
    probe_shells: Optional[tuple] = None
    probe_sigma: float = 0.5
    probe_count: int = 8
    norm_field: Optional[str] = None
    norm_kind: str = "sobolev"
    norm_alpha: float = 0.0
    norm_p: float = 2.0
    norm_q: float = 2.0
    norm_homogeneous: bool = True
    norm_extension: Optional[str] = None
    workers: int = 1
    explicit: frozenset = field(default_factory=frozenset)


# configuration ----------------------------------------------------------------------------

def flatten(obj: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in obj.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key: str, kind: str, value: Any) -> Any:
    def num(v, cast):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(key, f"expected a number, got {v!r}")
        if cast is int:
            if float(v) != int(v):
                raise ConfigError(key, f"expected an integer, got {v!r}")
            return int(v)
        if not math.isfinite(float(v)):
            raise ConfigError(key, "must be finite")
        return float(v)

    if value is None:
        return None
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true or false, got {value!r}")
        return value
    if kind in ("int", "float"):
        return num(value, int if kind == "int" else float)
    if kind in ("ints", "floats", "strs"):
        if not isinstance(value, (list, tuple)):
            value = [value]
        if kind == "strs":
            if not all(isinstance(v, str) for v in value):
                raise ConfigError(key, "expected a list of strings")
            return tuple(value)
        return tuple(num(v, int if kind == "ints" else float) for v in value)
    raise AssertionError(kind)


def parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ConfigError(text, "override must look like key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def resolve(raw: dict, overrides: Sequence[str] = (), command: Optional[str] = None) -> tuple[ExperimentConfig, CommandOptions]:
    """Validate a raw (possibly nested) config dict plus overrides."""
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    flat = flatten(raw)
    for text in overrides:
        k, v = parse_override(text)
        flat[k] = v
    for k in flat:
        if k not in SCHEMA:
            raise ConfigError(k, "unknown key")
    vals = {k: _coerce(k, SCHEMA[k][0], flat[k]) if k in flat else SCHEMA[k][1] for k in SCHEMA}
    explicit = frozenset(flat)

    if vals["theorem"] not in THEOREMS:
        raise ConfigError("theorem", f"must be one of {', '.join(THEOREMS)}")
    if command == "sweep":
        vals["theorem"] = "T11-p"
        if "forcing.family" not in explicit:
            vals["forcing.family"] = "boundary"
    for k in ("N", "N_t", "ensemble", "n"):
        if vals[k] < 1:
            raise ConfigError(k, "must be positive")
    if vals["workers"] < 1:
        raise ConfigError("workers", "must be positive")
    try:
        make_grid(vals["n"], vals["L_tan"], vals["L_nrm"], vals["N"], vals["T"], vals["N_t"])
    except InvalidSpec as exc:
        bad = "N" if "N" in str(exc) and "N_t" not in str(exc) else "N_t" if "N_t" in str(exc) else "T"
        raise ConfigError(bad, str(exc)) from exc
    try:
        forcing = ForcingParams(
            family=vals["forcing.family"], bandwidth=vals["forcing.bandwidth"], modes=vals["forcing.modes"],
            temporal_cycles=vals["forcing.temporal_cycles"], layer_cells=vals["forcing.layer_cells"],
            tangential_width=vals["forcing.tangential_width"], amplitude=vals["forcing.amplitude"],
        )
    except InvalidSpec as exc:
        raise ConfigError("forcing", str(exc)) from exc

    cfg = ExperimentConfig(
        theorem=vals["theorem"], alpha=vals["alpha"], beta=vals["beta"], p=vals["p"], q=vals["q"], n=vals["n"],
        N=vals["N"], N_t=vals["N_t"], L_tan=vals["L_tan"], L_nrm=vals["L_nrm"], T=vals["T"],
        ensemble=vals["ensemble"], seed=vals["seed"], forcing=forcing, initial=vals["initial"],
        solver=SolverConstants(vals["solver.w"], vals["solver.pressure"]), out=vals["out"],
    )
    order_key = order_name(cfg.theorem)
    order = vals[order_key]
    if command in ("verify",) and order is None:
        raise ConfigError(order_key, f"{cfg.theorem} needs {order_key}")
    if order is not None:
        try:
            check_exponents(cfg.theorem, order, cfg.p, cfg.q, cfg.n, allow_boundary=command == "sweep")
        except InadmissibleExponents as exc:
            raise ConfigError(order_key, str(exc)) from exc

    if vals["norm.kind"] not in NORM_KINDS:
        raise ConfigError("norm.kind", f"must be one of {', '.join(NORM_KINDS)}")
    if vals["norm.extension"] not in (None, "odd", "even", "zero"):
        raise ConfigError("norm.extension", "must be odd, even or zero")
    for k in vals["probe.kinds"]:
        if k not in ("heat", "frac_heat"):
            raise ConfigError("probe.kinds", f"unknown probe {k!r}")
    if vals["sweep.alphas"] is not None:
        if not vals["sweep.alphas"]:
            raise ConfigError("sweep.alphas", "empty alpha list")
        for a in vals["sweep.alphas"]:
            try:
                check_exponents("T11-p", a, cfg.p, cfg.q, cfg.n, allow_boundary=True)
            except InadmissibleExponents as exc:
                raise ConfigError("sweep.alphas", str(exc)) from exc
    opts = CommandOptions(
        alphas=vals["sweep.alphas"], levels=vals["sweep.levels"], probe_kinds=vals["probe.kinds"],
        probe_shells=vals["probe.shells"], probe_sigma=vals["probe.sigma"], probe_count=vals["probe.count"],
        norm_field=vals["norm.field"], norm_kind=vals["norm.kind"], norm_alpha=vals["norm.alpha"],
        norm_p=vals["norm.p"], norm_q=vals["norm.q"], norm_homogeneous=vals["norm.homogeneous"],
        norm_extension=vals["norm.extension"], workers=vals["workers"], explicit=explicit,
    )
    return cfg, opts


def load_config(path: Optional[str], overrides: Sequence[str] = (), command: Optional[str] = None
                ) -> tuple[ExperimentConfig, CommandOptions]:
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError("--config", f"no such file {path}")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("--config", f"invalid JSON: {exc}") from exc
    return resolve(raw, overrides, command)


def parse_config(path: Optional[str], overrides: Sequence[str] = (), command: Optional[str] = None) -> ExperimentConfig:
    """Fully resolved ExperimentConfig from a JSON file plus ``key=value`` overrides."""
    return load_config(path, overrides, command)[0]


def config_dict(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    return d


# results --------------------------------------------------------------------------------------

@dataclass
class RunResult:
    command: str
    exit_code: int
    failures: list
    summary: dict
    artifacts: dict  # relative path -> bytes

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        for rel, data in self.artifacts.items():
            target = out / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(data)


def _json_bytes(obj: dict) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n").encode()


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, (frozenset, set, tuple)):
        return sorted(o) if isinstance(o, (frozenset, set)) else list(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _csv_bytes(header: Sequence[str], rows: Sequence[Sequence[str]]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode()


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".12e")


def _finish(command: str, cfg: ExperimentConfig, failures: list, summary: dict, body: dict,
            header: Sequence[str], rows: Sequence[Sequence[str]], extra: Optional[dict] = None) -> RunResult:
    report = {
        "command": command,
        "created": _time.strftime("%Y-%m-%dT%H:%M:%SZ", _time.gmtime()),
        "config": config_dict(cfg),
        "status": "pass" if not failures else "fail",
        "failures": failures,
        "summary": summary,
        **body,
    }
    artifacts = {"report.json": _json_bytes(report), "report.csv": _csv_bytes(header, rows)}
    artifacts.update(extra or {})
    return RunResult(command, EXIT_OK if not failures else EXIT_FAIL, failures, summary, artifacts)


def _hsf1_bytes(f) -> bytes:
    import os
    import tempfile

    fd, tmp = tempfile.mkstemp(suffix=".hsf1")
    os.close(fd)
    try:
        write_hsf1(tmp, f)
        return Path(tmp).read_bytes()
    finally:
        os.unlink(tmp)


# commands -------------------------------------------------------------------------------------

def cmd_solve(cfg: ExperimentConfig, opts: CommandOptions) -> RunResult:
    grid, time = cfg.grids()
    forcing = random_divfree_forcing(cfg.seed, grid, time, cfg.forcing)
    v0 = random_divfree_field(cfg.seed + 100003, grid, cfg.forcing) if cfg.initial else None
    sol = solve_forced(forcing, cfg.solver)
    if v0 is not None:
        sol = sol + solve_initial(v0, time)
    res = pde_residual(sol, forcing.f, v0)
    failures = res.failures()
    summary = {"residual": res.to_dict(), "threshold": res.threshold}
    fields = {"fields/v.hsf1": _hsf1_bytes(sol.v), "fields/p.hsf1": _hsf1_bytes(sol.p), "fields/f.hsf1": _hsf1_bytes(forcing.f)}
    if v0 is not None:
        fields["fields/v0.hsf1"] = _hsf1_bytes(v0)
    keys = list(res.to_dict())
    rows = [[_fmt(res.to_dict()[k]) for k in keys] + [_fmt(res.threshold)]]
    return _finish("solve", cfg, failures, summary, {"residual": res.to_dict()}, keys + ["threshold"], rows, fields)


def cmd_verify(cfg: ExperimentConfig, opts: CommandOptions) -> RunResult:
    result = estimate_ratio(cfg, workers=opts.workers)
    rows = [r.csv_row() for r in result.reports]
    body = {"reports": [r.to_dict() for r in result.reports]}
    summary = dict(result.summary)
    if result.refinement is not None:
        body["refinement"] = result.refinement
        summary["refinement_drops"] = result.refinement["drops"]
    return _finish("verify", cfg, result.failures, summary, body, CSV_HEADER, rows)


def default_alphas(p: float) -> tuple:
    base = 1 + 1 / p
    return tuple(a for a in (base, base + 0.25, base + 0.5) if a <= 2 + 1e-12) or (base,)


def cmd_sweep(cfg: ExperimentConfig, opts: CommandOptions) -> RunResult:
    alphas = opts.alphas or default_alphas(cfg.p)
    base = cfg if cfg.alpha is not None else replace(cfg, alpha=max(alphas))
    result = alpha_sweep(base, alphas, opts.levels)
    rows = [r.csv_row() for r in result.reports]
    table_header = ["N", "N_t", "alpha", "flagged", "max_ratio", "median_ratio"]
    table = [[_fmt(row[k]) for k in table_header] for row in result.rows]
    summary = {"rows": result.rows}
    body = {"reports": [r.to_dict() for r in result.reports], "table": result.rows}
    return _finish("sweep", base, result.failures, summary, body, CSV_HEADER, rows,
                   {"sweep.csv": _csv_bytes(table_header, table)})


def default_shells(grid) -> tuple:
    kabs = norms.kabs_grid(grid.full_shape, grid.spacings)
    kmin, kmax = float(kabs[kabs > 0].min()), float(kabs.max())
    js = [j for j in range(-8, 12) if 2.0 ** (j - 1) >= kmin and 2.0 ** (j + 1) <= kmax]
    return tuple(js[:3])


def cmd_probe(cfg: ExperimentConfig, opts: CommandOptions) -> RunResult:
    grid, _ = cfg.grids()
    shells = opts.probe_shells or default_shells(grid)
    failures, rows, tables = [], [], {}
    for kind in opts.probe_kinds:
        tab = norms.decay_table(grid, shells, kind, sigma=opts.probe_sigma, count=opts.probe_count, seed=cfg.seed, p=cfg.p)
        tables[kind] = tab
        for r in tab["rows"]:
            rows.append([kind, str(r["j"]), _fmt(r["s"]), _fmt(r["ratio"])])
        for j, slope in tab["slopes"].items():
            if not slope <= -1 / 8:
                failures.append(f"{kind} shell {j}: fitted slope {slope:.4f} > -1/8")
    summary = {k: {str(j): s for j, s in t["slopes"].items()} for k, t in tables.items()}
    return _finish("probe", cfg, failures, {"slopes": summary, "shells": list(shells)},
                   {"tables": tables}, ["kind", "j", "s", "ratio"], rows)


def _component_arrays(f):
    if isinstance(f, ScalarField):
        return [f]
    if isinstance(f, VectorField):
        return list(f.components)
    raise InvalidSpec(f"unsupported field type {type(f).__name__}")


def evaluate_norm(f, opts: CommandOptions) -> float:
    kind, a, p, q = opts.norm_kind, opts.norm_alpha, opts.norm_p, opts.norm_q
    ext = opts.norm_extension
    if isinstance(f, TimeSeriesField):
        if kind == "mixed":
            return norms.mixed_aniso_norm(f, a, p, q, opts.norm_homogeneous, ext or "odd")
        if kind == "proxy":
            return norms.negative_norm_proxy(f, a, p, q)
        vals = []
        for k in range(f.time.N_t + 1):
            snap = f.snapshot(k)
            vals.append(evaluate_norm(snap, replace(opts, norm_kind=kind)))
        return norms.time_lq(np.array(vals), q, f.time.dt)
    if kind in ("mixed", "proxy"):
        raise InvalidSpec(f"norm {kind!r} needs a time series")
    acc = 0.0
    for c in _component_arrays(f):
        if kind == "lp":
            val = norms.sobolev_norm(c, 0.0, p, True, ext)
        elif kind == "sobolev":
            val = norms.sobolev_norm(c, a, p, opts.norm_homogeneous, ext)
        elif kind == "besov":
            spec = norms.NormSpec(a, p, q, opts.norm_homogeneous, "halfspace" if ext == "zero" else "full")
            val = norms.besov_norm(c, spec)
        else:
            val = norms.besov_norm_differences(c, a, p, q, ext or "zero")
        acc += val**p
    return float(acc ** (1 / p))


def cmd_norms(cfg: ExperimentConfig, opts: CommandOptions) -> RunResult:
    if not opts.norm_field:
        raise ConfigError("norm.field", "norms needs a stored field (norm.field=<path>)")
    if not Path(opts.norm_field).is_file():
        raise ConfigError("norm.field", f"no such file {opts.norm_field}")
    probe = read_hsf1(opts.norm_field)
    grid, _ = make_grid(probe.grid.n, cfg.L_tan, cfg.L_nrm, probe.grid.N, cfg.T, 4)
    time = probe.time if isinstance(probe, TimeSeriesField) else None
    f = read_hsf1(opts.norm_field, grid, TimeSpec(cfg.T, time.N_t) if time else None)
    value = evaluate_norm(f, opts)
    spec = {"kind": opts.norm_kind, "alpha": opts.norm_alpha, "p": opts.norm_p, "q": opts.norm_q,
            "homogeneous": opts.norm_homogeneous, "extension": opts.norm_extension}
    failures = [] if math.isfinite(value) else ["norm is not finite"]
    header = ["field", "kind", "alpha", "p", "q", "homogeneous", "value"]
    rows = [[Path(opts.norm_field).name, opts.norm_kind, _fmt(opts.norm_alpha), _fmt(opts.norm_p), _fmt(opts.norm_q),
             _fmt(opts.norm_homogeneous), _fmt(value)]]
    return _finish("norms", cfg, failures, {"value": value, "norm": spec}, {"field": str(opts.norm_field)}, header, rows)


HANDLERS = {"solve": cmd_solve, "verify": cmd_verify, "sweep": cmd_sweep, "probe": cmd_probe, "norms": cmd_norms}


def run(command: str, cfg: ExperimentConfig, opts: Optional[CommandOptions] = None) -> RunResult:
    """Execute one command in-process; artifacts are returned, not written."""
    if command not in HANDLERS:
        raise ConfigError("command", f"unknown command {command!r}")
    return HANDLERS[command](cfg, opts or CommandOptions())


def error_result(command: str, code: int, kind: str, message: str, path: Optional[str] = None) -> RunResult:
    failure = {"error": kind, "message": message}
    if path:
        failure["path"] = path
    body = _json_bytes({"command": command, "status": "error", "failures": [failure]})
    return RunResult(command, code, [failure], {}, {"report.json": body})


def execute(command: str, raw: dict, overrides: Sequence[str] = ()) -> RunResult:
    """Resolve the config and run, mapping errors to exit codes (shared by the CLI and the service)."""
    try:
        cfg, opts = resolve(raw, overrides, command)
        return run(command, cfg, opts)
    except ConfigError as exc:
        return error_result(command, EXIT_CONFIG, "ConfigError", str(exc), exc.path)
    except HalfStokesError as exc:
        return error_result(command, EXIT_INPUT, type(exc).__name__, str(exc))


# entry point ----------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="halfstokes", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", help="JSON config file")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config key (repeatable)")
    ap.add_argument("--out", help="output directory (overrides the config's out)")
    ap.add_argument("--seed", type=int, help="base seed (overrides the config's seed)")
    ap.add_argument("--server", help="run on a halfstokes service at this URL instead of in-process")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _read_raw(path: Optional[str]) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError("--config", f"no such file {path}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"invalid JSON: {exc}") from exc


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"out={json.dumps(args.out)}")
    try:
        raw = _read_raw(args.config)
    except ConfigError as exc:
        result = error_result(args.command, EXIT_CONFIG, "ConfigError", str(exc), exc.path)
        print(json.dumps({"status": "error", "failures": result.failures}), file=sys.stderr)
        return result.exit_code

    if args.server:
        from .client import remote_execute

        result = remote_execute(args.server, args.command, raw, overrides)
    else:
        result = execute(args.command, raw, overrides)

    out_dir = args.out or flatten(raw).get("out") or SCHEMA["out"][1]
    for text in args.overrides:
        k, v = parse_override(text)
        if k == "out" and args.out is None:
            out_dir = v
    result.write(out_dir)
    if result.failures:
        print(json.dumps({"status": "fail" if result.exit_code == EXIT_FAIL else "error",
                          "failures": result.failures}, default=str), file=sys.stderr)
    else:
        log.info("%s finished; artifacts in %s", args.command, out_dir)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
