"""Batch front-end: ``parisilab <command> --config run.toml``.

Every command reads one TOML file, resolves defaults, runs with a seed derived
from (seed, command), and writes into the output directory

    <name>.json           result with the resolved config, no timestamps
    <name>*.csv           tables
    <name>.manifest.json  config hash, version, timestamps, timings, digests

Result files depend only on (config, seed, version), never on ``--threads``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import re
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from ._mc import mean_se, set_threads, task_seed
from .cascades import OverlapSampleSet, parisi_via_cascade, sample_cascade_replicas
from .diagnostics import N_BOOT, constant_one, gg_delta, overlap_power, positivity_check, ultrametricity_violation
from .errors import CapacityError, ConfigError, NumericError, ParisiLabError
from .finite_gibbs import (
    DisorderModel,
    SystemParams,
    ass_increment,
    ass_telescoping,
    gibbs_replicas_over_disorder,
    log_partition_draws,
)
from .guerra import default_t_grid, phi_grid
from .mixture import MixtureSpec, absorb_beta
from .order_parameter import FunctionalOrderParameter
from .parisi_recursion import QuadratureSpec, evaluate
from .parisi_search import SearchOptions, refine_r

COMMANDS = (
    "parisi-eval",
    "parisi-min",
    "rpc-sample",
    "rpc-parisi",
    "sk-free-energy",
    "ass",
    "gibbs-sample",
    "guerra",
    "diagnose",
    "report",
)

# section -> key -> (type, default); None defaults are optional keys
SCHEMA = {
    "mixture": {"pairs": ("pairs", [[2, 1.0]]), "beta": ("float", 1.0)},
    "fop": {"zeta": ("list[float]", [0.5]), "q": ("list[float]", [0.0, 1.0]), "r": ("int", None)},
    "quadrature": {"grid_halfwidth": ("float", 8.0), "grid_points": ("int", 801), "gh_nodes": ("int", 40)},
    "cascade": {
        "K": ("int", 200),
        "n_mc": ("int", 2000),
        "field_copies": ("int", 8),
        "n_replicas": ("int", 3),
        "n_trees": ("int", 1000),
        "draws_per_tree": ("int", 10),
    },
    "system": {
        "N": ("int", 8),
        "disorder": ("str", "gaussian"),
        "n_disorder": ("int", 500),
        "s": ("float", 0.0),
        "x": ("list[float]", []),
        "n_replicas": ("int", 3),
        "draws_per_disorder": ("int", 10),
    },
    "search": {
        "r_max": ("int", 2),
        "tol": ("float", 1e-6),
        "starts": ("int", 4),
        "fatol": ("float", 1e-6),
        "xatol": ("float", 1e-3),
        "max_iter": ("int", 2000),
    },
    "ass": {"mode": ("str", "direct"), "j": ("int", None)},
    "guerra": {"t": ("list[float]", None), "n_points": ("int", 5), "K": ("int", 50), "n_mc": ("int", 200)},
    "diagnose": {"samples": ("str", None), "tests": ("list[str]", ["ultrametricity", "positivity"]), "n_boot": ("int", N_BOOT)},
    "report": {"results_dir": ("str", None)},
}
TOP_LEVEL = {"command": ("str", None), "name": ("str", None), "seed": ("int", 0), "out_dir": ("str", "results")}


# ---------------------------------------------------------------- config


def _type_ok(value, kind: str) -> bool:
    def num(v):
        return isinstance(v, (int, float)) and not isinstance(v, bool)

    if kind == "int":
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == "float":
        return num(value)
    if kind == "str":
        return isinstance(value, str)
    if kind == "list[float]":
        return isinstance(value, list) and all(num(v) for v in value)
    if kind == "list[str]":
        return isinstance(value, list) and all(isinstance(v, str) for v in value)
    if kind == "pairs":
        return isinstance(value, list) and all(
            isinstance(v, list) and len(v) == 2 and isinstance(v[0], int) and num(v[1]) for v in value
        )
    raise AssertionError(kind)


_TYPE_NAMES = {"pairs": "list of [int p, float beta_p] pairs"}


def _describe(value) -> str:
    return f"{type(value).__name__} {value!r}"


def resolve_config(raw: dict) -> dict:
    """Check ``raw`` against the schema and fill defaults.

    Raises ConfigError naming the offending path and the expected type.
    """
    out = {}
    for key, value in raw.items():
        if key in TOP_LEVEL:
            kind = TOP_LEVEL[key][0]
            if not _type_ok(value, kind):
                raise ConfigError(f"config error at {key}: expected {kind}, got {_describe(value)}")
            out[key] = value
        elif key in SCHEMA:
            if not isinstance(value, dict):
                raise ConfigError(f"config error at {key}: expected table, got {_describe(value)}")
        else:
            raise ConfigError(f"config error at {key}: unknown key; expected one of {sorted(TOP_LEVEL) + sorted(SCHEMA)}")
    for key, (_, default) in TOP_LEVEL.items():
        if key not in out and default is not None:
            out[key] = default
    for section, fields in SCHEMA.items():
        given = raw.get(section, {})
        resolved = {}
        for key, value in given.items():
            if key not in fields:
                raise ConfigError(f"config error at {section}.{key}: unknown key; expected one of {sorted(fields)}")
            kind = fields[key][0]
            if not _type_ok(value, kind):
                name = _TYPE_NAMES.get(kind, kind)
                raise ConfigError(f"config error at {section}.{key}: expected {name}, got {_describe(value)}")
            resolved[key] = float(value) if kind == "float" else value
        for key, (_, default) in fields.items():
            if key not in resolved and default is not None:
                resolved[key] = default
        out[section] = resolved
    if "command" in out and out["command"] not in COMMANDS:
        raise ConfigError(f"config error at command: expected one of {list(COMMANDS)}, got {out['command']!r}")
    return out


def load_config(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(_canonical(cfg).encode()).hexdigest()


def _mixture(cfg):
    base = MixtureSpec.from_pairs(cfg["mixture"]["pairs"])
    return base, absorb_beta(base, cfg["mixture"]["beta"])


def _fop(cfg) -> FunctionalOrderParameter:
    return FunctionalOrderParameter.from_config(cfg["fop"])


def _quad(cfg) -> QuadratureSpec:
    return QuadratureSpec(**cfg["quadrature"])


def _params(cfg) -> SystemParams:
    base, _ = _mixture(cfg)
    s = cfg["system"]
    return SystemParams(s["N"], base, cfg["mixture"]["beta"], DisorderModel(s["disorder"]), s["s"], tuple(s["x"]))


# ---------------------------------------------------------------- outputs


class Outputs:
    """Collects files in memory so digests and writes see the same bytes."""

    def __init__(self, name: str):
        self.name = name
        self.files: dict[str, bytes] = {}

    def json(self, payload: dict, suffix: str = "") -> None:
        text = json.dumps(_plain(payload), indent=2, sort_keys=True) + "\n"
        self.files[f"{self.name}{suffix}.json"] = text.encode()

    def csv(self, header, rows, suffix: str) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        self.files[f"{self.name}{suffix}.csv"] = buf.getvalue().encode()

    def raw(self, filename: str, data: bytes) -> None:
        self.files[filename] = data


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def _row(quantity: str, value: float, se: float) -> dict:
    return {"quantity": quantity, "value": float(value), "se": float(se)}


# ---------------------------------------------------------------- commands


def cmd_parisi_eval(cfg, rng, out):
    _, m = _mixture(cfg)
    res = evaluate(m, _fop(cfg), _quad(cfg))
    out.json(
        {
            "value": res.value,
            "error_estimate": res.error_estimate,
            "settings": {"mixture": cfg["mixture"], "fop": cfg["fop"], "quadrature": cfg["quadrature"]},
            "summary": [_row("P", res.value, res.error_estimate)],
        }
    )


def cmd_parisi_min(cfg, rng, out):
    _, m = _mixture(cfg)
    s = cfg["search"]
    opts = SearchOptions(s["starts"], s["fatol"], s["xatol"], s["max_iter"], _quad(cfg))
    res = refine_r(m, s["r_max"], s["tol"], opts, rng)
    out.json(
        {
            "best_value": res.best_value,
            "best_fop": res.best_fop.to_config(),
            "r_used": res.r_used,
            "values_by_r": {str(k): v for k, v in res.values_by_r.items()},
            "summary": [_row("min P", res.best_value, 0.0)],
        }
    )
    out.csv(["iteration", "best_value"], res.trace, "_trace")


def cmd_rpc_sample(cfg, rng, out):
    c = cfg["cascade"]
    ss = sample_cascade_replicas(_fop(cfg), c["K"], c["n_replicas"], c["n_trees"], c["draws_per_tree"], rng)
    names, vals = ss.upper_triangle()
    out.raw(f"{out.name}_samples.csv", ss.csv_text().encode())
    per_tree = np.bincount(ss.groups, weights=vals[:, 0]) / np.bincount(ss.groups)
    mu, se = mean_se(per_tree)
    out.json({"n_draws": ss.n_draws, "n_replicas": ss.n_replicas, "summary": [_row("E R_1_2", mu, se)]})


def cmd_rpc_parisi(cfg, rng, out):
    _, m = _mixture(cfg)
    c = cfg["cascade"]
    est = parisi_via_cascade(m, _fop(cfg), c["K"], c["n_mc"], rng, c["field_copies"])
    out.json({"value": est.value, "se": est.se, "K": c["K"], "n_mc": c["n_mc"], "summary": [_row("P cascade", *est)]})


def cmd_sk_free_energy(cfg, rng, out):
    params = _params(cfg)
    n = cfg["system"]["n_disorder"]
    if n < 2:
        raise ConfigError("config error at system.n_disorder: need at least 2 draws")
    log_z = log_partition_draws(params, n, rng)
    mu, se = mean_se(log_z / params.N)
    out.json({"value": mu, "se": se, "N": params.N, "n_disorder": n, "summary": [_row("F_N", mu, se)]})
    out.csv(["draw", "log_z"], enumerate(log_z), "_draws")


def cmd_ass(cfg, rng, out):
    params = _params(cfg)
    a = cfg["ass"]
    n = cfg["system"]["n_disorder"]
    if "j" in a:
        est = ass_increment(a["j"], params, n, rng, a["mode"])
        out.json({"j": a["j"], "mode": a["mode"], "value": est.value, "se": est.se, "summary": [_row(f"A_{a['j']}", *est)]})
        return
    res = ass_telescoping(params, n, rng)
    inc_se = np.hypot(res["L_se"][1:], res["L_se"][:-1])
    rows = [(j, res["L"][j + 1], res["L_se"][j + 1], res["increments"][j], inc_se[j]) for j in range(params.N)]
    out.csv(["j", "mean_log_z_j_plus_1", "se_log_z", "increment", "increment_se"], rows, "_increments")
    f_se = res["L_se"][-1] / params.N
    out.json(
        {
            "free_energy": res["free_energy"],
            "free_energy_se": f_se,
            "mean_increment": res["mean_increment"],
            "summary": [_row("F_N", res["free_energy"], f_se)]
            + [_row(f"A_{j}", res["increments"][j], inc_se[j]) for j in range(params.N)],
        }
    )


def cmd_gibbs_sample(cfg, rng, out):
    params = _params(cfg)
    s = cfg["system"]
    ss = gibbs_replicas_over_disorder(params, s["n_replicas"], s["n_disorder"], s["draws_per_disorder"], rng)
    names, vals = ss.upper_triangle()
    out.raw(f"{out.name}_samples.csv", ss.csv_text().encode())
    per = np.bincount(ss.groups, weights=vals[:, 0]) / np.bincount(ss.groups)
    mu, se = mean_se(per)
    out.json({"n_draws": ss.n_draws, "n_replicas": ss.n_replicas, "summary": [_row("E R_1_2", mu, se)]})


def cmd_guerra(cfg, rng, out):
    g = cfg["guerra"]
    ts = g["t"] if "t" in g else default_t_grid(g["n_points"])
    run = phi_grid(ts, _params(cfg), _fop(cfg), g["K"], g["n_mc"], rng)
    out.csv(["t", "phi", "se"], ((p.t, p.phi, p.se) for p in run.points), "_grid")
    out.json(
        {
            "points": [{"t": p.t, "phi": p.phi, "se": p.se} for p in run.points],
            "step_diffs": run.step_diffs,
            "step_se": run.step_se,
            "monotone_within_3se": run.monotone_within(3.0),
            "summary": [_row(f"phi({p.t:g})", p.phi, p.se) for p in run.points],
        }
    )


_F_SPEC = re.compile(r"^R_(\d+)_(\d+)(?:\^(\d+))?$")


def parse_function(spec: str):
    """``1`` or ``R_i_j`` / ``R_i_j^k`` with 1-based replica labels."""
    if spec == "1":
        return constant_one
    mt = _F_SPEC.match(spec)
    if not mt:
        raise ConfigError(f"config error at diagnose.tests: cannot parse function {spec!r}; expected '1' or 'R_i_j^k'")
    return overlap_power(int(mt[1]), int(mt[2]), int(mt[3] or 1))


def parse_test(spec: str) -> tuple[str, dict]:
    """``name`` or ``name:key=value:...``."""
    name, *opts = spec.split(":")
    kw = {}
    for opt in opts:
        if "=" not in opt:
            raise ConfigError(f"config error at diagnose.tests: option {opt!r} in {spec!r} is not key=value")
        k, v = opt.split("=", 1)
        kw[k] = v
    return name, kw


def run_test(samples: OverlapSampleSet, spec: str, n_boot: int, rng):
    name, kw = parse_test(spec)
    try:
        if name == "ultrametricity":
            return ultrametricity_violation(samples, float(kw.get("tolerance", 0.0)))
        if name == "positivity":
            return positivity_check(samples, float(kw.get("tolerance", 0.0)))
        if name == "gg_delta":
            f = parse_function(kw.get("f", "1"))
            return gg_delta(samples, f, int(kw.get("n", 2)), int(kw.get("p", 1)), n_boot, rng, float(kw.get("k", 3.0)))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"config error at diagnose.tests: bad option in {spec!r}: {exc}") from exc
    raise ConfigError(f"config error at diagnose.tests: unknown test {name!r}; expected ultrametricity, positivity or gg_delta")


def cmd_diagnose(cfg, rng, out):
    d = cfg["diagnose"]
    if "samples" not in d:
        raise ConfigError("config error at diagnose.samples: expected str path to a sample CSV")
    try:
        samples = OverlapSampleSet.from_csv(d["samples"])
    except OSError as exc:
        raise ConfigError(f"config error at diagnose.samples: cannot read {d['samples']}: {exc}") from exc
    gens = rng.spawn(len(d["tests"]))
    lines, summary = [], []
    for spec, g in zip(d["tests"], gens):
        rep = run_test(samples, spec, d["n_boot"], g)
        lines.append(_canonical({"test": spec, **_plain(rep.to_dict())}))
        name, kw = parse_test(spec)
        # gg tolerances are k bootstrap standard errors; the other tests are exact
        se = rep.tolerance / float(kw.get("k", 3.0)) if name == "gg_delta" else 0.0
        summary.append(_row(spec, rep.statistic, se))
    out.raw(f"{out.name}.jsonl", ("\n".join(lines) + "\n").encode())
    out.json({"samples": d["samples"], "tests": d["tests"], "summary": summary})


def cmd_report(cfg, rng, out):
    if "results_dir" not in cfg["report"]:
        raise ConfigError("config error at report.results_dir: expected str path to a results directory")
    root = Path(cfg["report"]["results_dir"])
    if not root.is_dir():
        raise ConfigError(f"config error at report.results_dir: {root} is not a directory")
    rows = []
    for path in sorted(root.glob("*.json")):
        if path.name.endswith(".manifest.json") or path.stem == out.name:
            continue
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError:
            continue
        for item in data.get("summary", []):
            rows.append((data.get("experiment", path.stem), item["quantity"], item["value"], item["se"]))
    out.csv(["experiment", "quantity", "value", "se"], rows, "")
    out.json({"results_dir": str(root), "n_rows": len(rows), "summary": []})


HANDLERS = {
    "parisi-eval": cmd_parisi_eval,
    "parisi-min": cmd_parisi_min,
    "rpc-sample": cmd_rpc_sample,
    "rpc-parisi": cmd_rpc_parisi,
    "sk-free-energy": cmd_sk_free_energy,
    "ass": cmd_ass,
    "gibbs-sample": cmd_gibbs_sample,
    "guerra": cmd_guerra,
    "diagnose": cmd_diagnose,
    "report": cmd_report,
}


# ---------------------------------------------------------------- driver


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run(command: str, cfg: dict, out_dir) -> dict:
    """Execute ``command`` on a resolved config; returns the manifest."""
    name = cfg.get("name", command)
    out = Outputs(name)
    rng = np.random.default_rng(task_seed(cfg["seed"], command, 0))
    started = _now()
    t0 = time.perf_counter()
    HANDLERS[command](cfg, rng, out)
    elapsed = time.perf_counter() - t0
    # the main result embeds the resolved config and seed
    main = f"{name}.json"
    payload = json.loads(out.files[main])
    payload.update({"experiment": name, "command": command, "seed": cfg["seed"], "config": cfg, "version": __version__})
    out.files[main] = (json.dumps(_plain(payload), indent=2, sort_keys=True) + "\n").encode()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for fn, data in out.files.items():
        (out_dir / fn).write_bytes(data)
    manifest = {
        "experiment": name,
        "command": command,
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "tool_version": __version__,
        "started": started,
        "finished": _now(),
        "timing_seconds": {command: round(elapsed, 6)},
        "outputs": {fn: hashlib.sha256(data).hexdigest() for fn, data in sorted(out.files.items())},
    }
    (out_dir / f"{name}.manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="parisilab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        p = sub.add_parser(command)
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out-dir", help="output directory (overrides the config)")
        p.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")
        if command == "parisi-min":
            p.add_argument("--r-max", type=int)
            p.add_argument("--tol", type=float)
            p.add_argument("--starts", type=int)
        if command == "diagnose":
            p.add_argument("--samples", help="overlap sample CSV")
            p.add_argument("--tests", help="comma-separated test list, e.g. ultrametricity,gg_delta:n=2:p=1:f=1")
        if command == "report":
            p.add_argument("--results-dir")
    return parser


def _apply_flags(raw: dict, args) -> dict:
    raw = dict(raw)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out_dir is not None:
        raw["out_dir"] = args.out_dir
    overrides = {
        "search": {"r_max": getattr(args, "r_max", None), "tol": getattr(args, "tol", None), "starts": getattr(args, "starts", None)},
        "diagnose": {
            "samples": getattr(args, "samples", None),
            "tests": args.tests.split(",") if getattr(args, "tests", None) else None,
        },
        "report": {"results_dir": getattr(args, "results_dir", None)},
    }
    for section, vals in overrides.items():
        vals = {k: v for k, v in vals.items() if v is not None}
        if vals:
            merged = dict(raw.get(section, {}))
            merged.update(vals)
            raw[section] = merged
    return raw


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = load_config(args.config) if args.config else {}
        if "command" in raw and raw["command"] != args.command:
            raise ConfigError(f"config error at command: config is for {raw['command']!r}, invoked as {args.command!r}")
        cfg = resolve_config(_apply_flags(raw, args))
        cfg.pop("command", None)
        # where results go is not part of what they depend on
        out_dir = cfg.pop("out_dir")
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        set_threads(args.threads)
        manifest = run(args.command, cfg, out_dir)
    except (ConfigError, NumericError, CapacityError) as exc:
        print(f"parisilab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except ParisiLabError as exc:
        print(f"parisilab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    finally:
        set_threads(1)
    for fn in manifest["outputs"]:
        print(Path(out_dir) / fn)
    return 0


if __name__ == "__main__":
    sys.exit(main())
