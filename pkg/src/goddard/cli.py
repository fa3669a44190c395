"""Command line front end: configuration, pipelines, solution documents and figure data."""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from types import SimpleNamespace

import numpy as np

from .direct import DirectOptions, compare, solve_direct, solve_onoff
from .errors import ConfigError, GoddardError, SchemaMismatch
from .extremal import CostConvention
from .model import BoundaryConditions, ModelParams
from .shooting import (
    ArcKind,
    ArcStructure,
    IntegratorOptions,
    NewtonOptions,
    build_solution,
    newton_solve,
    refine_regularized,
    solve_indirect,
    solve_singular_from_regularized,
)
from .simplicial import Triangulation, atmosphere_homotopy, follow_path, main_homotopy, relative_mesh

log = logging.getLogger("goddard")

SCHEMA_VERSION = 1
PIPELINES = ("IndirectFull", "IndirectShootOnly", "Direct", "OnOff", "Compare")
PLOT_KINDS = ("state", "control", "switching", "path", "compare")

DEFAULT_CONFIG = {
    "pipeline": "IndirectFull",
    "model": {"C": 3.5, "b": 7.0, "g0": 1.0, "K_D": 310.0, "k": 500.0},
    "boundary": {
        "r0": [0.999949994, 0.0001, 0.01],
        "v0": [0.0, 0.0, 0.0],
        "m0": 1.0,
        "r_f": [1.01, 0.0, 0.0],
    },
    "structure": {"arcs": ["max", "singular", "null"], "variant": "start"},
    "homotopy": {
        "label_steps": 25,
        "trivial_start": [0.1, 0.1, 0.1, 0.1, 0.1, 0.1, -0.1, 0.2],
        "atmosphere": {"delta": 1e-2, "budget": 1000000, "target": 1.0, "record_every": 100},
        "main": {"delta": 1e-4, "floor": 0.1, "delta_level": 1e-4, "budget": 2000000, "target": 0.8,
                 "record_every": 1000},
        "refine_ladder": [25, 100, 200, 400, 800, 1600],
    },
    "integrator": {"rtol": 1e-10, "atol": 1e-10, "dense": 400},
    "newton": {"tol": 1e-9, "max_iter": 25, "fd_step": 1e-7},
    "direct": {"N": 100, "seed": 0, "n_starts": 3, "t_f0": 0.25, "sigma0": 0.5},
    "onoff": {"n_on": 60, "n_coast": 100},
    "shoot_start": None,
    "inputs": {"indirect": None, "direct": None, "onoff": None},
    "output_dir": "out",
}


# ------------------------------------------------------------ configuration


@dataclass
class RunConfig:
    model: ModelParams
    boundary: BoundaryConditions
    pipeline: str
    structure: ArcStructure
    homotopy: dict
    integrator: IntegratorOptions
    dense: int
    newton: NewtonOptions
    direct: dict
    onoff: dict
    shoot_start: dict | None
    inputs: dict
    output_dir: str
    base_dir: Path
    echo: dict


def _merge(default, user, path="config"):
    if not isinstance(user, dict):
        raise ConfigError(f"{path} must be an object")
    out = copy.deepcopy(default)
    for key, val in user.items():
        if key not in default:
            raise ConfigError(f"unknown key {path}.{key}")
        if isinstance(default[key], dict) and val is not None:
            out[key] = _merge(default[key], val, f"{path}.{key}")
        else:
            out[key] = val
    return out


def _vec(x, n, name):
    a = np.asarray(x, dtype=float)
    if a.shape != (n,) or not np.all(np.isfinite(a)):
        raise ConfigError(f"{name} must be a list of {n} finite numbers")
    return a


def config_from_dict(d: dict, base_dir: Path = Path(".")) -> RunConfig:
    c = _merge(DEFAULT_CONFIG, d)
    if c["pipeline"] not in PIPELINES:
        raise ConfigError(f"pipeline must be one of {', '.join(PIPELINES)}")
    try:
        m = c["model"]
        model = ModelParams(float(m["C"]), float(m["b"]), float(m["g0"]), float(m["K_D"]), float(m["k"]))
        b = c["boundary"]
        bc = BoundaryConditions(_vec(b["r0"], 3, "boundary.r0"), _vec(b["v0"], 3, "boundary.v0"),
                                float(b["m0"]), _vec(b["r_f"], 3, "boundary.r_f"))
        st = c["structure"]
        structure = ArcStructure(tuple(ArcKind(a) for a in st["arcs"]), st["variant"])
        it = c["integrator"]
        integ = IntegratorOptions(rtol=float(it["rtol"]), atol=float(it["atol"]))
        nw = c["newton"]
        newton = NewtonOptions(max_iter=int(nw["max_iter"]), tol=float(nw["tol"]), fd_step=float(nw["fd_step"]))
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    return RunConfig(model, bc, c["pipeline"], structure, c["homotopy"], integ, int(c["integrator"]["dense"]),
                     newton, c["direct"], c["onoff"], c["shoot_start"], c["inputs"], c["output_dir"],
                     base_dir, c)


def bundled_config_path() -> Path:
    return Path(str(resources.files("goddard") / "configs" / "reference.json"))


def load_config(path) -> RunConfig:
    p = bundled_config_path() if str(path) == "reference" else Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return config_from_dict(d, p.parent)


# ------------------------------------------------------- canonical documents


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x)
    return x


def _scalar(x) -> str:
    if x is None:
        return "null"
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        return format(x, ".12e") if np.isfinite(x) else "null"
    if isinstance(x, str):
        return json.dumps(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _canon(x, level: int = 0) -> str:
    pad = "  " * (level + 1)
    if isinstance(x, dict):
        if not x:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_canon(x[k], level + 1)}" for k in sorted(x)]
        return "{\n" + ",\n".join(items) + "\n" + "  " * level + "}"
    if isinstance(x, list):
        if any(isinstance(v, (list, dict)) for v in x):
            return "[\n" + ",\n".join(pad + _canon(v, level + 1) for v in x) + "\n" + "  " * level + "]"
        return "[" + ", ".join(_scalar(v) for v in x) + "]"
    return _scalar(x)


def dumps(doc: dict) -> str:
    """Canonical text: sorted keys, floats as %.12e, non-finite floats as null."""
    return _canon(_plain(doc)) + "\n"


def atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{v:.12e}" if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _doc_base(kind: str, cfg: RunConfig) -> dict:
    return {"schema_version": SCHEMA_VERSION, "kind": kind, "config": cfg.echo}


def indirect_document(sol, cfg: RunConfig, diagnostics: dict) -> dict:
    y = sol.y
    doc = _doc_base("indirect", cfg)
    H = np.asarray(sol.H)
    doc.update({
        "structure": [a.value for a in sol.structure.arcs],
        "unknowns": sol.z,
        "objective": sol.objective,
        "t_f": sol.t_f,
        "final_mass": sol.final_mass,
        "switching_times": sol.switching_times,
        "residual_norm": sol.residual_norm,
        "arcs": [{"kind": a.kind.value, "t_start": a.s_start * sol.t_f, "t_end": a.s_end * sol.t_f,
                  "psi_min": a.psi_min, "psi_max": a.psi_max, "alpha_min": a.alpha_min, "alpha_max": a.alpha_max}
                 for a in sol.arcs],
        "traces": {"t": sol.t, "r": y[:, 0:3], "v": y[:, 3:6], "m": y[:, 6], "p_r": y[:, 7:10],
                   "p_v": y[:, 10:13], "p_m": y[:, 13], "u": sol.u, "control_norm": sol.alpha,
                   "alpha_raw": sol.alpha_raw, "psi": sol.psi, "H": H},
        "diagnostics": dict(diagnostics, max_abs_H=float(np.abs(H).max())),
    })
    if sol.newton is not None:
        doc["diagnostics"].update(newton_iterations=sol.newton.iterations, jacobian_condition=sol.newton.condition)
    return doc


def direct_document(ds, cfg: RunConfig, diagnostics: dict) -> dict:
    doc = _doc_base(ds.kind, cfg)
    # control of the interval starting at each node; the last node repeats the last interval
    U = np.vstack([ds.U, ds.U[-1:]])
    unknowns = [ds.t_f] if ds.t_off is None else [ds.t_off, ds.t_f - ds.t_off]
    doc.update({
        "structure": [] if ds.t_off is None else ["max", "null"],
        "unknowns": unknowns,
        "objective": ds.objective,
        "t_f": ds.t_f,
        "final_mass": ds.final_mass,
        "switching_times": [] if ds.t_off is None else [ds.t_off],
        "residual_norm": ds.constraint_norm,
        "traces": {"t": ds.t_nodes, "r": ds.X[:, 0:3], "v": ds.X[:, 3:6], "m": ds.X[:, 6], "u": U,
                   "control_norm": np.linalg.norm(U, axis=1)},
        "diagnostics": dict(diagnostics, outer_iterations=ds.outer_iterations,
                            constraint_history=ds.constraint_history),
    })
    return doc


def validate_document(doc: dict) -> dict:
    if not isinstance(doc, dict) or doc.get("schema_version") != SCHEMA_VERSION:
        raise SchemaMismatch(f"expected schema_version {SCHEMA_VERSION}")
    for key in ("kind", "traces"):
        if key not in doc:
            raise SchemaMismatch(f"missing field {key}")
    lengths = {k: len(v) for k, v in doc["traces"].items()}
    if len(set(lengths.values())) > 1:
        raise SchemaMismatch(f"trace arrays differ in length: {lengths}")
    return doc


def load_document(path) -> dict:
    try:
        d = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}") from exc
    return validate_document(d)


# ----------------------------------------------------------------- pipelines


@dataclass
class FullResult:
    solution: object
    atmosphere: object  # PathTrace
    main: object  # PathTrace
    z_theta0: np.ndarray
    z_lambda0: np.ndarray
    z_regularized: np.ndarray
    diagnostics: dict


def indirect_full(cfg: RunConfig, out: Path | None = None) -> FullResult:
    """Drag-free solve, atmosphere homotopy, regularization homotopy, refinement, final shooting."""
    H = cfg.homotopy
    params, bc = cfg.model, cfg.boundary
    n_steps = int(H["label_steps"])
    t0 = time.perf_counter()
    diag = {"homotopy": {}}

    atm = atmosphere_homotopy(params, bc, n_steps, float(H["atmosphere"]["target"]))
    z_theta0, d0 = newton_solve(lambda q: atm.h(q, 0.0), _vec(H["trivial_start"], 8, "homotopy.trivial_start"),
                                NewtonOptions(tol=1e-12, max_iter=50))
    log.info("drag-free start: %d Newton iterations", d0.iterations)
    A = H["atmosphere"]
    tri = Triangulation.for_homotopy(z_theta0, float(A["delta"]), 0.0, float(A["target"]), float(A["delta"]))
    tr_a = follow_path(atm, z_theta0, tri, budget=int(A["budget"]), record_every=int(A["record_every"]))
    log.info("atmosphere homotopy: %d simplices, %.1f s", tr_a.n_simplices, tr_a.elapsed)
    diag["homotopy"]["atmosphere"] = {"simplices": tr_a.n_simplices, "elapsed": tr_a.elapsed,
                                      "path_csv": "path_atmosphere.csv", "level": "theta"}

    M = H["main"]
    main = main_homotopy(params, bc, n_steps, float(M["target"]))
    z_lam0, d1 = newton_solve(lambda q: main.h(q, 0.0), tr_a.z_end, NewtonOptions(tol=1e-12, max_iter=50))
    log.info("full-atmosphere start: %d Newton iterations", d1.iterations)
    tri = Triangulation.for_homotopy(z_lam0, relative_mesh(z_lam0, float(M["delta"]), float(M["floor"])), 0.0,
                                     float(M["target"]), float(M["delta_level"]))
    tr_m = follow_path(main, z_lam0, tri, budget=int(M["budget"]), record_every=int(M["record_every"]))
    log.info("main homotopy: %d simplices, %.1f s", tr_m.n_simplices, tr_m.elapsed)
    diag["homotopy"]["main"] = {"simplices": tr_m.n_simplices, "elapsed": tr_m.elapsed,
                                "path_csv": "path_main.csv", "level": "lambda"}
    if out is not None:
        tr_a.to_csv(out / "path_atmosphere.csv")
        tr_m.to_csv(out / "path_main.csv")

    p_lam = params.with_(lam=float(M["target"]))
    z_reg, ladder = refine_regularized(tr_m.z_end, p_lam, bc, tuple(H["refine_ladder"]))
    diag["refine"] = [[n, r] for n, r in ladder]
    sol = solve_singular_from_regularized(z_reg, p_lam, bc, cfg.structure, cfg.newton, cfg.integrator)
    if cfg.dense:
        sol = build_solution(sol.z, sol.structure, sol.params, bc, cfg.integrator, sol.newton, dense=cfg.dense)
    diag["elapsed"] = time.perf_counter() - t0
    return FullResult(sol, tr_a, tr_m, z_theta0, z_lam0, z_reg, diag)


def run_indirect_full(cfg: RunConfig, out: Path) -> dict:
    res = indirect_full(cfg, out)
    return indirect_document(res.solution, cfg, res.diagnostics)


def run_shoot_only(cfg: RunConfig, out: Path) -> dict:
    s = cfg.shoot_start
    if not isinstance(s, dict) or not ("z" in s or "regularized" in s):
        raise ConfigError("IndirectShootOnly needs shoot_start.z or shoot_start.regularized")
    t0 = time.perf_counter()
    p1 = cfg.model.with_(lam=1.0)
    if "z" in s:
        z0 = _vec(s["z"], cfg.structure.n_unknowns, "shoot_start.z")
        sol = solve_indirect(cfg.structure, CostConvention.MinFuel, p1, cfg.boundary, z0, cfg.newton, cfg.integrator)
    else:
        lam = float(s.get("lam", 0.8))
        p_lam = cfg.model.with_(lam=lam)
        z_reg, _ = refine_regularized(_vec(s["regularized"], 8, "shoot_start.regularized"), p_lam, cfg.boundary,
                                      tuple(cfg.homotopy["refine_ladder"]))
        sol = solve_singular_from_regularized(z_reg, p_lam, cfg.boundary, cfg.structure, cfg.newton,
                                              cfg.integrator)
    if cfg.dense:
        sol = build_solution(sol.z, sol.structure, sol.params, cfg.boundary, cfg.integrator, sol.newton,
                             dense=cfg.dense)
    return indirect_document(sol, cfg, {"elapsed": time.perf_counter() - t0})


def _direct_options(cfg: RunConfig) -> DirectOptions:
    d, o = cfg.direct, cfg.onoff
    return DirectOptions(N=int(d["N"]), seed=int(d["seed"]), n_starts=int(d["n_starts"]), t_f0=float(d["t_f0"]),
                         sigma0=float(d["sigma0"]), n_coast=int(o["n_coast"]))


def run_direct(cfg: RunConfig, out: Path) -> dict:
    t0 = time.perf_counter()
    opts = _direct_options(cfg)
    ds = solve_direct(opts.N, cfg.model, cfg.boundary, opts)
    return direct_document(ds, cfg, {"elapsed": time.perf_counter() - t0})


def run_onoff(cfg: RunConfig, out: Path) -> dict:
    t0 = time.perf_counter()
    ds = solve_onoff(cfg.model, cfg.boundary, _direct_options(cfg), int(cfg.onoff["n_on"]))
    return direct_document(ds, cfg, {"elapsed": time.perf_counter() - t0})


def _as_solution(doc: dict):
    """Light view of a document with the attributes compare() reads."""
    tr = doc["traces"]
    t = np.asarray(tr["t"], dtype=float)
    nu = np.asarray(tr["control_norm"], dtype=float)
    if doc["kind"] == "indirect":
        return SimpleNamespace(objective=doc["objective"], t_f=doc["t_f"], t=t, alpha=nu)
    return SimpleNamespace(objective=doc["objective"], t_f=doc["t_f"], t_nodes=t, control_norm=nu[:-1])


def run_compare(cfg: RunConfig, out: Path) -> dict:
    inputs = cfg.inputs or {}
    paths = {}
    missing = []
    for name in ("indirect", "direct", "onoff"):
        p = inputs.get(name)
        if p is None:
            missing.append(name)
            continue
        p = Path(p) if Path(p).is_absolute() else cfg.base_dir / p
        if not p.exists():
            missing.append(f"{name} ({p})")
        paths[name] = p
    if missing:
        raise ConfigError("Compare needs prior solution files; missing: " + ", ".join(missing))
    docs = {k: load_document(p) for k, p in paths.items()}
    sols = {k: _as_solution(d) for k, d in docs.items()}
    rep = compare(sols["indirect"], sols["direct"], sols["onoff"])
    grid = np.linspace(0.0, max(s.t_f for s in sols.values()), 2001)
    from .direct import _profile

    doc = _doc_base("compare", cfg)
    doc.update({
        "inputs": {k: str(p) for k, p in paths.items()},
        "objectives": rep.objectives,
        "t_f": rep.t_f,
        "objective_deltas": rep.objective_deltas,
        "t_f_deltas": rep.t_f_deltas,
        "control_sup_distance": rep.control_sup_distance,
        "relative_loss_onoff": rep.relative_loss_onoff,
        "traces": {"t": grid, **{k: _profile(s, grid) for k, s in sols.items()}},
    })
    return doc


RUNNERS = {"IndirectFull": run_indirect_full, "IndirectShootOnly": run_shoot_only, "Direct": run_direct,
           "OnOff": run_onoff, "Compare": run_compare}


def run(config_path, out_dir=None, pipeline=None, emit=False) -> int:
    """Execute one pipeline; returns the process exit code."""
    try:
        cfg = load_config(config_path)
        if pipeline is not None:
            if pipeline not in PIPELINES:
                raise ConfigError(f"pipeline must be one of {', '.join(PIPELINES)}")
            cfg.pipeline = pipeline
            cfg.echo["pipeline"] = pipeline
        out = Path(out_dir if out_dir is not None else cfg.output_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"output directory {out} is not writable: {exc.strerror}") from exc
        doc = RUNNERS[cfg.pipeline](cfg, out)
        name = {"IndirectFull": "solution.json", "IndirectShootOnly": "solution.json", "Direct": "direct.json",
                "OnOff": "onoff.json", "Compare": "compare.json"}[cfg.pipeline]
        atomic_write(out / name, dumps(doc))
        log.info("wrote %s", out / name)
        if emit:
            kinds = ["compare"] if doc["kind"] == "compare" else ["state", "control"]
            if doc["kind"] == "indirect":
                kinds.append("switching")
            if "homotopy" in doc.get("diagnostics", {}):
                kinds.append("path")
            for k in kinds:
                emit_plots(out / name, k, out)
        _summary(doc)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except GoddardError as exc:
        print(f"solve error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def _summary(doc):
    if doc["kind"] == "compare":
        print(f"objectives {doc['objectives']}  on-off loss {100 * doc['relative_loss_onoff']:.2f}%")
    else:
        print(f"{doc['kind']}: objective {doc['objective']:.6f}  t_f {doc['t_f']:.6f}  "
              f"switching times {[round(float(x), 6) for x in doc['switching_times']]}")


# ---------------------------------------------------------------- figures


def svg_plot(series, title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    """Line plot with a fixed 800x600 viewBox; series is a list of (label, x, y)."""
    W, H, L, R, T, B = 800, 600, 80, 30, 40, 60
    xs = np.concatenate([np.asarray(x, dtype=float) for _, x, _ in series])
    ys = np.concatenate([np.asarray(y, dtype=float) for _, _, y in series])
    ok = np.isfinite(xs) & np.isfinite(ys)
    x0, x1 = (xs[ok].min(), xs[ok].max()) if ok.any() else (0.0, 1.0)
    y0, y1 = (ys[ok].min(), ys[ok].max()) if ok.any() else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(x):
        return L + (x - x0) / (x1 - x0) * (W - L - R)

    def py(y):
        return H - B - (y - y0) / (y1 - y0) * (H - T - B)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {H}" width="{W}" height="{H}">',
           f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
           f'<line x1="{L}" y1="{H - B}" x2="{W - R}" y2="{H - B}" stroke="black"/>',
           f'<line x1="{L}" y1="{T}" x2="{L}" y2="{H - B}" stroke="black"/>']
    for v in np.linspace(x0, x1, 6):
        X = px(v)
        out.append(f'<line x1="{X:.1f}" y1="{H - B}" x2="{X:.1f}" y2="{H - B + 6}" stroke="black"/>')
        out.append(f'<text x="{X:.1f}" y="{H - B + 22}" font-size="12" text-anchor="middle">{v:.4g}</text>')
    for v in np.linspace(y0, y1, 6):
        Y = py(v)
        out.append(f'<line x1="{L - 6}" y1="{Y:.1f}" x2="{L}" y2="{Y:.1f}" stroke="black"/>')
        out.append(f'<text x="{L - 9}" y="{Y + 4:.1f}" font-size="12" text-anchor="end">{v:.4g}</text>')
    out.append(f'<text x="{W / 2}" y="{H - 15}" font-size="14" text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="18" y="{H / 2}" font-size="14" text-anchor="middle" '
               f'transform="rotate(-90 18 {H / 2})">{ylabel}</text>')
    out.append(f'<text x="{W / 2}" y="24" font-size="16" text-anchor="middle">{title}</text>')
    for i, (label, x, y) in enumerate(series):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        keep = np.isfinite(x) & np.isfinite(y)
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[keep], y[keep]))
        c = colors[i % len(colors)]
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{W - R - 5}" y="{T + 16 * (i + 1)}" font-size="12" text-anchor="end" '
                   f'fill="{c}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _col(a):
    return np.asarray([np.nan if v is None else v for v in a], dtype=float)


def _mat(a):
    return np.asarray([[np.nan if v is None else v for v in row] for row in a], dtype=float)


def emit_plots(solution_path, kind: str, out_dir=None) -> list:
    """Write CSV and SVG figure data for one plot kind; returns the written paths."""
    if kind not in PLOT_KINDS:
        raise ConfigError(f"plot kind must be one of {', '.join(PLOT_KINDS)}")
    solution_path = Path(solution_path)
    doc = load_document(solution_path)
    out = Path(out_dir) if out_dir is not None else solution_path.parent
    tr = doc["traces"]
    written = []

    def put(name, text):
        atomic_write(out / name, text)
        written.append(out / name)

    if kind == "compare":
        if doc["kind"] != "compare":
            raise SchemaMismatch("compare plots need a compare document")
        t = _col(tr["t"])
        names = [k for k in ("indirect", "direct", "onoff") if k in tr]
        put("compare.csv", _csv_text(["t"] + names, zip(t, *[_col(tr[k]) for k in names])))
        put("compare.svg", svg_plot([(k, t, _col(tr[k])) for k in names], "control norm", "t", "|u|"))
        return written
    if doc["kind"] == "compare":
        raise SchemaMismatch(f"{kind} plots need a solution document")
    t = _col(tr["t"])
    if kind == "state":
        r, v, m = _mat(tr["r"]), _mat(tr["v"]), _col(tr["m"])
        alt = np.linalg.norm(r, axis=1) - 1.0
        spd = np.linalg.norm(v, axis=1)
        put("state.csv", _csv_text(["t", "altitude", "speed", "mass"], zip(t, alt, spd, m)))
        put("state_altitude.svg", svg_plot([("altitude", t, alt)], "altitude", "t", "|r| - 1"))
        put("state_speed.svg", svg_plot([("speed", t, spd)], "speed", "t", "|v|"))
        put("state_mass.svg", svg_plot([("mass", t, m)], "mass", "t", "m"))
    elif kind == "control":
        u, nu = _mat(tr["u"]), _col(tr["control_norm"])
        put("control.csv", _csv_text(["t", "u1", "u2", "u3", "norm"], zip(t, u[:, 0], u[:, 1], u[:, 2], nu)))
        put("control.svg", svg_plot([("u1", t, u[:, 0]), ("u2", t, u[:, 1]), ("u3", t, u[:, 2]), ("|u|", t, nu)],
                                    "control", "t", "u"))
    elif kind == "switching":
        if "psi" not in tr:
            raise SchemaMismatch("document has no switching function trace")
        psi = _col(tr["psi"])
        put("switching.csv", _csv_text(["t", "psi"], zip(t, psi)))
        put("switching.svg", svg_plot([("psi", t, psi)], "switching function", "t", "psi"))
    elif kind == "path":
        hom = doc.get("diagnostics", {}).get("homotopy")
        if not hom:
            raise SchemaMismatch("document has no homotopy paths")
        for name in sorted(hom):
            src = solution_path.parent / hom[name]["path_csv"]
            try:
                A = np.genfromtxt(src, delimiter=",", names=True)
            except OSError as exc:
                raise SchemaMismatch(f"missing path file {src}") from exc
            cols = A.dtype.names
            lev = A[cols[1]]
            zs = [c for c in cols if c.startswith("z")]
            put(f"path_{name}.csv", src.read_text())
            for c in zs:
                put(f"path_{name}_{c}.svg", svg_plot([(c, lev, A[c])], f"{name} homotopy", cols[1], c))
    return written


# --------------------------------------------------------------------- main


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="goddard", description="Minimum-fuel Goddard problem solver")
    sub = ap.add_subparsers(dest="cmd", required=True)
    s = sub.add_parser("solve", help="run a pipeline from a JSON config ('reference' for the bundled one)")
    s.add_argument("config")
    s.add_argument("--out", default=None)
    s.add_argument("--pipeline", default=None, choices=PIPELINES)
    s.add_argument("--emit-plots", action="store_true")
    s.add_argument("-q", "--quiet", action="store_true")
    p = sub.add_parser("plots", help="write CSV/SVG figure data from a solution document")
    p.add_argument("solution")
    p.add_argument("--kind", required=True, choices=PLOT_KINDS)
    p.add_argument("--out", default=None)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if getattr(args, "quiet", False) else logging.INFO,
                        format="%(asctime)s %(message)s", stream=sys.stderr)
    if args.cmd == "solve":
        return run(args.config, args.out, args.pipeline, args.emit_plots)
    try:
        for f in emit_plots(args.solution, args.kind, args.out):
            print(f)
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except GoddardError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
