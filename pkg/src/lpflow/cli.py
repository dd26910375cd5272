"""Single entry point: decompose, norm, simulate, solve-critical, verify, sweep.

A run is fully described by a JSON config (strict schema: unknown keys are
errors) plus a seed; identical config + seed reproduce identical CSV/JSON
bytes.  Exit codes: 0 ok, 1 inequality violation or instability, 2 config
error, 3 phase-space abort.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import jsonschema

from lpflow import __version__
from lpflow.data import gaussian_bump, single_mode_field, smooth_system_data
from lpflow.grid import (
    Field,
    GridSpec,
    build_filter_bank,
    block_l2_norms,
    load_field,
    save_field,
)
from lpflow.norms import BesovIndex, besov_norm
from lpflow.propagators import CFLViolation
from lpflow.solver import (
    CriticalMonitorViolation,
    IterationConfig,
    continuation_monitor,
    iterate_subcritical,
    solve_critical,
)
from lpflow.systems import PhaseSpaceViolation, SystemSpec, assemble_nsf, gamma_law_barotropic
from lpflow.verifier import (
    Corpus,
    SmoothMap,
    vector_corpus,
    verify_commutator,
    verify_composition,
    verify_garding,
    verify_product_law,
)
from lpflow import reports


class ConfigError(ValueError):
    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path


_NUM = {"type": "number"}
_STR = {"type": "string"}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema", "command", "grid"],
    "properties": {
        "schema": {"const": 1},
        "command": {"enum": ["decompose", "norm", "simulate", "solve-critical",
                             "verify", "sweep"]},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["d", "N"],
            "properties": {"d": {"type": "integer"}, "N": {"type": "integer"},
                           "L": _NUM, "n": {"type": "integer"}},
        },
        "system": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": ["barotropic", "nsf"]},
                "params": {"type": "object"},
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["zero", "mode", "bump", "smooth", "file"]},
                "amplitude": _NUM,
                "seed": {"type": "integer"},
                "k": {"type": "array", "items": _NUM},
                "component": {"type": "integer"},
                "width": _NUM,
                "path": _STR,
            },
        },
        "iteration": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "s": _NUM, "R": _NUM, "eta": _NUM, "T": {"type": ["number", "null"]},
                "m": {"type": "integer"}, "dt": _NUM, "p_max": {"type": "integer"},
                "contraction_tol": _NUM, "eps_weight": _NUM,
                "c_rate": {"type": ["number", "null"]}, "C_const": _NUM,
                "max_samples": {"type": "integer"}, "cfl_safety": _NUM,
            },
        },
        "norm": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "s_values": {"type": "array", "items": _NUM},
                "flavor": {"enum": ["homogeneous", "nonhomogeneous"]},
                "r": _NUM,
            },
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "inequality": {"enum": ["product", "commutator", "composition",
                                        "garding", "all"]},
                "s": _NUM, "sigma": _NUM, "epsilon": _NUM,
                "map": {"enum": ["square", "expm1"]},
                "members_per_family": {"type": "integer"},
                "pair_count": {"type": "integer"},
                "refine": {"type": "boolean"},
            },
        },
        "monitors": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"hypotheses": {"type": "boolean"},
                           "continuation": {"type": "boolean"}},
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "required": ["parameter", "values"],
            "properties": {
                "parameter": _STR,
                "values": {"type": "array", "items": _NUM},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": _STR,
                "formats": {"type": "array",
                            "items": {"enum": ["csv", "json", "figures"]}},
                "snapshots": {"type": "boolean"},
            },
        },
        "seed": {"type": "integer"},
    },
}


def validate_config(cfg: dict) -> None:
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: e.json_path)
    if errors:
        e = errors[0]
        raise ConfigError(e.message, e.json_path)


def load_config(path: str | Path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    validate_config(cfg)
    return cfg


def build_grid(cfg: dict) -> GridSpec:
    g = cfg["grid"]
    return GridSpec(d=g["d"], N=g["N"], L=g.get("L", 2.0 * math.pi), n=g.get("n", 1))


def build_system(cfg: dict) -> SystemSpec:
    sy = cfg.get("system")
    if sy is None:
        raise ConfigError("command needs a system section", "$.system")
    params = dict(sy.get("params", {}))
    if sy["name"] == "barotropic":
        params.setdefault("d", cfg["grid"]["d"])
        if "rho_bounds" in params:
            params["rho_bounds"] = tuple(params["rho_bounds"])
        return gamma_law_barotropic(**params)
    params.setdefault("d", cfg["grid"]["d"])
    gas = params.pop("gas", {"R": 1.0, "c_v": 1.0})
    transport = params.pop("transport", {"mu": 1.0, "lam": 0.0, "k": 1.0})
    return assemble_nsf(gas, transport, **params)


def build_data(cfg: dict, grid: GridSpec, seed: int) -> Field:
    spec = cfg.get("data", {})
    kind = spec.get("kind", "smooth")
    amplitude = spec.get("amplitude", 0.01)
    if kind == "zero":
        return Field.zeros(grid)
    if kind == "mode":
        k = spec.get("k", [3] + [0] * (grid.d - 1))
        return single_mode_field(grid, k, amplitude, component=spec.get("component", 0))
    if kind == "bump":
        return gaussian_bump(grid, amplitude, width=spec.get("width"),
                             component=spec.get("component", 0))
    if kind == "smooth":
        return smooth_system_data(grid, grid.n, amplitude, seed=spec.get("seed", seed))
    if kind == "file":
        from lpflow.grid import warn_if_outside_guard_band

        u = load_field(spec["path"])
        warn_if_outside_guard_band(u, "loaded data")
        return u
    raise ConfigError(f"unknown data kind {kind!r}", "$.data.kind")


def build_iteration_config(cfg: dict) -> IterationConfig:
    it = dict(cfg.get("iteration", {}))
    it.setdefault("s", max(1.0, cfg["grid"]["d"] / 2.0))
    return IterationConfig(**it)


def _formats(cfg: dict) -> set[str]:
    return set(cfg.get("output", {}).get("formats", ["csv", "json", "figures"]))


def emit_plot_data(entries: list[tuple[str, float, str, float]], path: Path) -> None:
    """Tidy long-format table (run_id, t, metric, value) for external plotting."""
    reports.write_csv(path, ["run_id", "t", "metric", "value"], entries)


def _plot_entries_from_run(run_id: str, run, norm_series: dict) -> list:
    entries = []
    times = run.traj.times
    for metric, vals in norm_series.items():
        entries.extend((run_id, float(t), metric, float(v)) for t, v in zip(times, vals))
    for rec in run.diagnostics.records:
        entries.append((run_id, float(rec.p), "X_p", float(rec.X_p)))
        entries.append((run_id, float(rec.p), "residual", float(rec.residual)))
        for name, h in rec.hypotheses.items():
            entries.append((run_id, float(rec.p), f"margin_{name}", float(h.margin)))
    return entries


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_decompose(cfg: dict, out: Path, seed: int, quiet: bool) -> int:
    grid = build_grid(cfg)
    u = build_data(cfg, grid, seed)
    fmts = _formats(cfg)
    recs = {}
    for flavor in ("nonhomogeneous", "homogeneous"):
        js, norms = block_l2_norms(u, flavor)
        if "csv" in fmts:
            reports.write_csv(out / f"blocks_{flavor}.csv", ["j", "l2_norm"],
                              zip(js.tolist(), norms.tolist()))
        recs[flavor] = besov_norm(u, BesovIndex(0.0, flavor=flavor))
    if "figures" in fmts:
        reports.fig_block_spectrum(recs, out / "blocks.png", title="dyadic block energies")
    save_field(u, out / "field.bin")
    return 0


def cmd_norm(cfg: dict, out: Path, seed: int, quiet: bool) -> int:
    grid = build_grid(cfg)
    u = build_data(cfg, grid, seed)
    opts = cfg.get("norm", {})
    s_values = opts.get("s_values", [0.0, 1.0])
    flavor = opts.get("flavor", "nonhomogeneous")
    r = opts.get("r", 1.0)
    fmts = _formats(cfg)
    recs = {}
    rows = []
    for s in s_values:
        rec = besov_norm(u, BesovIndex(s, r=r, flavor=flavor))
        recs[f"s={s}"] = rec
        rows.append((s, rec.total))
        if "csv" in fmts:
            rec.to_csv(out / f"norm_s{s}.csv")
        if "json" in fmts:
            rec.to_json(out / f"norm_s{s}.json")
    if "csv" in fmts:
        reports.write_csv(out / "totals.csv", ["s", "total"], rows)
    if "figures" in fmts:
        reports.fig_block_spectrum(recs, out / "norms.png")
    return 0


def _norm_series_for(run) -> dict[str, np.ndarray]:
    from lpflow.verifier import _besov_series

    s = run.config.s
    spec = run.system
    out = {
        f"v1_B{s + 1}": _besov_series(run.v1, BesovIndex(s + 1.0)) if spec.n1 else None,
        f"v2_B{s}": _besov_series(run.v2, BesovIndex(s)),
        f"v2_B{s + 2}": _besov_series(run.v2, BesovIndex(s + 2.0)),
        f"dtv_B{s}": _besov_series(run.dt_v, BesovIndex(s)),
    }
    return {k: v for k, v in out.items() if v is not None}


def _run_simulation(cfg: dict, out: Path, seed: int, quiet: bool, critical: bool,
                    run_id: str = "run") -> int:
    grid = build_grid(cfg)
    system = build_system(cfg)
    if grid.n != system.n:
        grid = grid.with_components(system.n)
    V0 = build_data(cfg, grid, seed)
    itcfg = build_iteration_config(cfg)
    fmts = _formats(cfg)
    run = (solve_critical if critical else iterate_subcritical)(system, V0, itcfg)
    diag = run.diagnostics
    if "json" in fmts:
        reports.write_json(out / "diagnostics.json", diag.as_dict())
    series = _norm_series_for(run)
    if "csv" in fmts:
        reports.write_csv(out / "norms.csv", ["t"] + list(series.keys()),
                          [(t, *[series[k][i] for k in series])
                           for i, t in enumerate(run.traj.times)])
        emit_plot_data(_plot_entries_from_run(run_id, run, series),
                       out / "plot_data.csv")
    if cfg.get("monitors", {}).get("continuation", True):
        cont = continuation_monitor(run.traj, system)
        if "csv" in fmts:
            reports.write_csv(
                out / "continuation.csv",
                ["t", "integrand", "cumulative", "sup_grad_v1"],
                zip(cont.times, cont.integrand, cont.cumulative, cont.sup_grad_v1),
            )
        if "figures" in fmts:
            reports.fig_continuation(cont, out / "continuation.png")
    if "figures" in fmts:
        reports.fig_xp_series(diag, out / "contraction.png")
        reports.fig_norm_series(run.traj.times, series, out / "norms.png")
        reports.fig_hypothesis_margins(diag, out / "margins.png")
    if cfg.get("output", {}).get("snapshots", False):
        run.traj.save(out / "snapshots")
    if not quiet:
        print(f"status={diag.final_status} T={run.T:.6g} "
              f"iterations={len(diag.records)}")
    return 0


def cmd_simulate(cfg: dict, out: Path, seed: int, quiet: bool) -> int:
    return _run_simulation(cfg, out, seed, quiet, critical=False)


def cmd_solve_critical(cfg: dict, out: Path, seed: int, quiet: bool) -> int:
    return _run_simulation(cfg, out, seed, quiet, critical=True)


_COMPOSITION_MAPS = {
    "square": SmoothMap(lambda x: x**2, lambda a: 2.0 * a, "square"),
    "expm1": SmoothMap(np.expm1, lambda a: float(np.exp(a)), "expm1"),
}


def cmd_verify(cfg: dict, out: Path, seed: int, quiet: bool) -> int:
    grid = build_grid(cfg)
    opts = cfg.get("verify", {})
    which = opts.get("inequality", "all")
    members = opts.get("members_per_family", 8)
    pair_count = opts.get("pair_count", 40)
    do_refine = opts.get("refine", True)
    fmts = _formats(cfg)
    corpus = Corpus.generate(grid.with_components(1), seed=seed or 20240817,
                             members_per_family=members)
    refined = corpus.refine() if do_refine else None
    d = grid.d
    results = []
    if which in ("product", "all"):
        s = opts.get("s", min(d / 2.0, 0.5))
        results.append(verify_product_law(corpus, s, pair_count, refined=refined))
    if which in ("commutator", "all"):
        sigma = opts.get("sigma", 1.0)
        results.append(verify_commutator(corpus, sigma, pair_count, refined=refined))
    if which in ("composition", "all"):
        s = opts.get("s", min(d / 2.0, 0.5))
        fmap = _COMPOSITION_MAPS[opts.get("map", "square")]
        results.append(verify_composition(corpus, fmap, max(s, 0.25), pair_count,
                                          refined=refined))
    if which in ("garding", "all"):
        system = build_system(cfg) if "system" in cfg else \
            gamma_law_barotropic(gamma=2.0, d=d)
        g_sys = grid.with_components(system.n)
        U = Field(g_sys, system.U_bar[(...,) + (None,) * d]
                  + smooth_system_data(g_sys, system.n, 0.2, seed=seed or 1).values)
        fs = vector_corpus(corpus, system.n2, count=max(10, members))
        eps = opts.get("epsilon", 0.5)
        if do_refine:
            from lpflow.grid import refine_field

            refined_pair = (refine_field(U), [refine_field(f) for f in fs])
        else:
            refined_pair = None
        results.append(verify_garding(system, U, fs, eps, refined=refined_pair))
    ok = True
    for rep in results:
        payload = rep.to_json(out / f"verify_{rep.name}.json" if "json" in fmts else None)
        passed = payload["passed"] if rep.name != "garding" else (
            rep.passed and rep.params.get("C_stable", True))
        ok = ok and passed
        if "figures" in fmts:
            reports.fig_inequality(rep, out / f"verify_{rep.name}.png")
        if not quiet:
            print(f"{rep.name}: passed={passed} fitted_C={rep.fitted_C:.4g}")
    return 0 if ok else 1


def _set_by_path(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def cmd_sweep(cfg: dict, out: Path, seed: int, quiet: bool, threads: int = 1) -> int:
    sw = cfg.get("sweep")
    if sw is None:
        raise ConfigError("sweep command needs a sweep section", "$.sweep")
    values = sw["values"]
    members = []
    for i, v in enumerate(values):
        member = copy.deepcopy(cfg)
        member["command"] = "simulate"
        member.pop("sweep", None)
        _set_by_path(member, sw["parameter"], v)
        members.append((i, v, member))

    def run_member(item):
        i, v, member = item
        mdir = out / f"member_{i:02d}"
        mdir.mkdir(parents=True, exist_ok=True)
        code = _run_simulation(member, mdir, seed, True,
                               critical=(cfg["command"] == "solve-critical"),
                               run_id=f"member_{i:02d}")
        diag = json.loads((mdir / "diagnostics.json").read_text())
        return (f"member_{i:02d}", v, diag["fitted"]["T"],
                diag["iterations"][-1]["X_p"], diag["final_status"], code)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run_member, members))
    else:
        rows = [run_member(m) for m in members]
    reports.write_csv(out / "sweep_summary.csv",
                      ["run_id", sw["parameter"], "T", "final_X", "status", "exit"],
                      [r[:5] + (r[5],) for r in rows])
    return max((r[5] for r in rows), default=0)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def run(cfg: dict, out_dir: str | Path | None = None, seed: int | None = None,
        threads: int = 1, quiet: bool = True) -> int:
    """Execute a validated config; returns the process exit code."""
    t_start = time.time()
    try:
        validate_config(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = Path(out_dir if out_dir is not None
               else cfg.get("output", {}).get("directory", "out"))
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.get("seed", 0) if seed is None else seed
    command = cfg["command"]
    handlers = {
        "decompose": cmd_decompose,
        "norm": cmd_norm,
        "simulate": cmd_simulate,
        "solve-critical": cmd_solve_critical,
        "verify": cmd_verify,
    }
    try:
        if command == "sweep":
            code = cmd_sweep(cfg, out, seed, quiet, threads)
        else:
            code = handlers[command](cfg, out, seed, quiet)
    except (PhaseSpaceViolation, CriticalMonitorViolation) as exc:
        dump = {"error": str(exc)}
        if isinstance(exc, PhaseSpaceViolation):
            dump["worst_state"] = [float(x) for x in exc.worst_state]
            dump["flat_index"] = exc.where
        reports.write_json(out / "abort.json", dump)
        print(f"phase-space abort: {exc}", file=sys.stderr)
        code = 3
    except (ConfigError,) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CFLViolation as exc:
        print(f"CFL violation: {exc}", file=sys.stderr)
        return 2
    grid = build_grid(cfg)
    try:
        profile_hash = build_filter_bank(grid).profile_hash
    except Exception:
        profile_hash = None
    manifest = {
        "config": cfg,
        "version": __version__,
        "profile_hash": profile_hash,
        "seed": seed,
        "elapsed_seconds": time.time() - t_start,
        "exit_code": code,
    }
    reports.write_json(out / "manifest.json", manifest)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="lpflow",
        description="Spectral toolkit for partially diffusive hyperbolic systems",
    )
    parser.add_argument("--config", required=True, help="path to JSON run config")
    parser.add_argument("--out", default=os.environ.get("LPFLOW_OUT"),
                        help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--threads", type=int,
                        default=int(os.environ.get("LPFLOW_THREADS", "1")))
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return run(cfg, out_dir=args.out, seed=args.seed, threads=args.threads,
               quiet=args.quiet)


if __name__ == "__main__":
    sys.exit(main())
