"""Command-line front end: reproducible train / solve / analyze / bench runs.

Every run resolves to a flat key=value config (file values overridden by
flags, seed overridden by MGSMOOTH_SEED), and every output CSV carries the
hash of that resolved config plus the seed, so a row can always be traced
back to the run that produced it.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import os
import re
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import analysis, dense
from .errors import ConfigError, ContractError, NonConvergedError, \
    NumericError, SingularMatrixError, TrainingError, \
    UnsupportedOperationError
from .grid import GridFunction, StencilField, apply_stencil, from_active, \
    materialize_stencil, to_active, zeros
from .hierarchy import MultigridHierarchy, build_hierarchy, equip_classical, \
    equip_inferred, equip_trained, solve
from .krylov import FgmresConfig, cycle_preconditioner, fgmres, gmres, \
    grid_action
from .problems import ProblemSpec
from .smoothers import ConvSmoother, effective_kernel, model_from_dict, \
    model_to_dict
from .training import TrainConfig, retrain_with_injection, train_adaptive, \
    train_independent, train_inference_net, train_mixture

MAX_ANALYZE_N = 64

_PI_ALIAS = re.compile(r"^(-?)(\d*\.?\d*)\s*pi\s*(?:/\s*(\d+\.?\d*))?$")


def parse_angle(text: str) -> float:
    """Radians, either as a literal float or as a multiple of pi such as
    ``pi/12``, ``5pi/12``, ``0.5pi``."""
    s = str(text).strip().lower().replace(" ", "")
    m = _PI_ALIAS.match(s)
    if m:
        sign = -1.0 if m.group(1) else 1.0
        coef = float(m.group(2)) if m.group(2) else 1.0
        den = float(m.group(3)) if m.group(3) else 1.0
        if den == 0.0:
            raise ConfigError(f"bad angle {text!r}")
        return sign * coef * math.pi / den
    try:
        return float(s)
    except ValueError:
        raise ConfigError(f"bad angle {text!r}") from None


def _parse_bool(text: str) -> bool:
    s = str(text).strip().lower()
    if s in ("true", "1", "yes"):
        return True
    if s in ("false", "0", "no"):
        return False
    raise ConfigError(f"bad boolean {text!r}")


def _split(text: str) -> list:
    return [p for p in str(text).split(",") if p.strip()]


_KINDS = {
    "str": str,
    "int": int,
    "float": float,
    "angle": parse_angle,
    "bool": _parse_bool,
    "strs": lambda s: [p.strip() for p in _split(s)],
    "ints": lambda s: [int(p) for p in _split(s)],
    "floats": lambda s: [float(p) for p in _split(s)],
    "angles": lambda s: [parse_angle(p) for p in _split(s)],
}


def _to_str(kind: str, value) -> str:
    if kind in ("strs",):
        return ",".join(value)
    if kind in ("ints",):
        return ",".join(str(v) for v in value)
    if kind in ("floats", "angles"):
        return ",".join(repr(float(v)) for v in value)
    if kind == "bool":
        return "true" if value else "false"
    if kind in ("float", "angle"):
        return repr(float(value))
    return str(value)


@dataclass(frozen=True)
class Opt:
    name: str
    kind: str
    default: object
    help: str
    choices: Optional[tuple] = None
    # output locations do not change what a run computes, so they stay out
    # of the config hash
    hashed: bool = True


_PROBLEM = [
    Opt("family", "str", "rotated", "problem family", ("rotated", "variable")),
    Opt("n", "int", 16, "interior grid points per side"),
    Opt("geometry", "str", "square", "domain shape",
        ("square", "lshape", "cylinder")),
    Opt("theta", "angle", 0.0, "rotation angle (radians or pi aliases)"),
    Opt("xi", "float", 100.0, "anisotropy strength"),
    Opt("kappa", "float", 1.0, "diffusion contrast"),
    Opt("levels", "int", 2, "hierarchy depth"),
    Opt("scheme", "str", "full", "coarsening scheme", ("full", "redblack")),
]

_SMOOTHER = [
    Opt("smoother", "str", "jacobi", "classical smoother when no model",
        ("jacobi", "gauss-seidel", "exact")),
    Opt("omega", "float", 2.0 / 3.0, "Jacobi damping"),
    Opt("model", "str", None, "trained model file"),
]

_STOPPING = [
    Opt("tol", "float", 1e-6, "relative-residual stopping tolerance"),
    Opt("max_iter", "int", 1000, "iteration cap"),
]

OPTIONS = {
    "train": _PROBLEM + [
        Opt("strategy", "str", "adaptive", "training strategy",
            ("adaptive", "independent")),
        Opt("variant", "str", None, "kernel-inference net instead of "
            "per-level kernels", ("fc", "conv")),
        Opt("net_k", "int", 1, "inferred kernels per point"),
        Opt("form", "str", "full", "smoother form for independent training",
            ("full", "rb")),
        Opt("omega", "float", 2.0 / 3.0, "initialization damping"),
        Opt("activation", "str", "linear", "smoother activation",
            ("linear", "leaky")),
        Opt("epochs", "int", 500, "training epochs"),
        Opt("samples", "int", 50, "training samples per level"),
        Opt("batch_size", "int", 10, "samples per gradient step"),
        Opt("learning_rate", "float", 1e-3, "Adam learning rate"),
        Opt("max_steps", "int", 4, "iteration-count cap b in the loss"),
        Opt("inject_k", "int", 0, "retrain on residual probes after this "
            "many cycles (0 = off)"),
        Opt("thetas", "angles", None, "train one model on a mixture of "
            "rotation angles"),
        Opt("seed", "int", 0, "global seed"),
        Opt("out", "str", ".", "output directory", hashed=False),
    ],
    "solve": _PROBLEM + _SMOOTHER + _STOPPING + [
        Opt("krylov", "str", "none", "wrap multigrid in a Krylov method",
            ("none", "fgmres", "gmres")),
        Opt("precond", "str", "mg", "fgmres preconditioner", ("mg", "none")),
        Opt("rhs", "str", "random", "right-hand side",
            ("random", "zero", "ones")),
        Opt("trials", "int", 1, "number of random right-hand sides"),
        Opt("seed", "int", 0, "global seed"),
        Opt("out", "str", ".", "output directory", hashed=False),
        Opt("csv", "str", None, "results CSV path (default <out>/solve.csv)",
            hashed=False),
    ],
    "analyze": _PROBLEM + _SMOOTHER + [
        Opt("metrics", "strs",
            ["rho_smoother", "rho_cycle", "beta_star", "energy"],
            "metric columns to emit"),
        Opt("profile_out", "str", None, "write smoothing-profile CSV here", hashed=False),
        Opt("kernel_out", "str", None, "write effective-kernel JSON here", hashed=False),
        Opt("seed", "int", 0, "global seed"),
        Opt("out", "str", ".", "output directory", hashed=False),
        Opt("csv", "str", None, "metrics CSV path (default <out>/analyze.csv)",
            hashed=False),
    ],
    "bench": [
        Opt("family", "str", "rotated", "problem family",
            ("rotated", "variable")),
        Opt("geometry", "str", "square", "domain shape",
            ("square", "lshape", "cylinder")),
        Opt("xi", "float", 100.0, "anisotropy strength"),
        Opt("thetas", "angles", [0.0], "rotation angles to sweep"),
        Opt("kappas", "floats", [1.0], "diffusion contrasts to sweep"),
        Opt("ns", "ints", [16], "grid sizes to sweep"),
        Opt("schemes", "strs", ["full"], "coarsening schemes to sweep"),
        Opt("levels", "int", 2, "hierarchy depth"),
        Opt("smoothers", "strs", ["jacobi"], "classical smoothers and/or "
            "model files to sweep"),
        Opt("omega", "float", 2.0 / 3.0, "Jacobi damping"),
        Opt("krylov", "str", "none", "wrap multigrid in a Krylov method",
            ("none", "fgmres", "gmres")),
        Opt("precond", "str", "mg", "fgmres preconditioner", ("mg", "none")),
        Opt("matched_cost", "bool", False, "classical smoothers repeat "
            "sweeps to match network cost (6 full / 2 red-black)"),
    ] + _STOPPING + [
        Opt("rhs", "str", "random", "right-hand side",
            ("random", "zero", "ones")),
        Opt("trials", "int", 1, "number of random right-hand sides"),
        Opt("workers", "int", 4, "sweep worker threads"),
        Opt("seed", "int", 0, "global seed"),
        Opt("out", "str", ".", "output directory", hashed=False),
        Opt("csv", "str", None, "results CSV path (default <out>/bench.csv)",
            hashed=False),
    ],
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="mgsmooth",
                  description="Multigrid with trained smoothers.")
    subs = top.add_subparsers(dest="subcommand")
    for sub, opts in OPTIONS.items():
        p = subs.add_parser(sub, add_help=True)
        p.add_argument("--config", default=None,
                       help="flat key=value config file; flags win")
        for opt in opts:
            flag = "--" + opt.name.replace("_", "-")
            p.add_argument(flag, dest=opt.name, default=None,
                           type=_KINDS[opt.kind], metavar=opt.kind.upper(),
                           help=opt.help)
    return top


def read_config_file(path: str, opts: list) -> dict:
    """key = value lines, # comments; every key must name an option."""
    known = {o.name: o for o in opts}
    out = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for ln, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{path}:{ln}: unknown config key {key!r}")
        try:
            out[key] = _KINDS[known[key].kind](value)
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"{path}:{ln}: bad value for {key}: {exc}") \
                from None
    return out


def write_config_file(sub: str, cfg: dict, path: str):
    opts = {o.name: o for o in OPTIONS[sub]}
    with open(path, "w") as fh:
        for name in sorted(cfg):
            if cfg[name] is None:
                continue
            fh.write(f"{name} = {_to_str(opts[name].kind, cfg[name])}\n")


def resolve_config(sub: str, ns: argparse.Namespace) -> dict:
    opts = OPTIONS[sub]
    from_file = {}
    if getattr(ns, "config", None):
        from_file = read_config_file(ns.config, opts)
    cfg = {}
    for opt in opts:
        value = getattr(ns, opt.name, None)
        if value is None:
            value = from_file.get(opt.name, opt.default)
        if value is not None and opt.choices and value not in opt.choices:
            raise ConfigError(
                f"{opt.name} must be one of {', '.join(opt.choices)}, "
                f"got {value!r}")
        cfg[opt.name] = value
    env = os.environ.get("MGSMOOTH_SEED")
    if env is not None and "seed" in cfg:
        try:
            cfg["seed"] = int(env)
        except ValueError:
            raise ConfigError(f"bad MGSMOOTH_SEED {env!r}") from None
    return cfg


def config_hash(sub: str, cfg: dict) -> str:
    opts = {o.name: o for o in OPTIONS[sub]}
    lines = [f"subcommand={sub}"]
    for name in sorted(cfg):
        if cfg[name] is None or not opts[name].hashed:
            continue
        lines.append(f"{name}={_to_str(opts[name].kind, cfg[name])}")
    digest = hashlib.sha256("\n".join(lines).encode()).hexdigest()
    return digest[:12]


def _problem_from(cfg: dict) -> ProblemSpec:
    return ProblemSpec(cfg["family"], cfg["n"], cfg["geometry"],
                       cfg["theta"], cfg["xi"], cfg["kappa"])


# ---------------------------------------------------------------------------
# model files

def stack_to_dict(problem: ProblemSpec, hier: MultigridHierarchy,
                  metadata: dict) -> dict:
    return {
        "format_version": 1,
        "kind": "smoother_stack",
        "problem": dataclasses.asdict(problem),
        "scheme": hier.scheme,
        "levels": hier.depth,
        "metadata": metadata,
        "smoothers": [model_to_dict(lev.smoother)
                      for lev in hier.levels[:-1]],
    }


def load_model_file(path: str):
    """Returns ('stack', source hierarchy) or ('net', inference net)."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read model {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"model {path} is not valid JSON: {exc}") from None
    if doc.get("format_version") != 1:
        raise ConfigError(
            f"unsupported model format {doc.get('format_version')!r}")
    kind = doc.get("kind")
    if kind == "smoother_stack":
        problem = ProblemSpec(**doc["problem"])
        hier = build_hierarchy(problem.assemble(), doc["levels"],
                               scheme=doc["scheme"])
        if len(doc["smoothers"]) != hier.depth - 1:
            raise ConfigError(f"model {path} smoother count does not match "
                              "its hierarchy depth")
        for lev, sm_doc in zip(hier.levels[:-1], doc["smoothers"]):
            lev.smoother = model_from_dict(sm_doc, spec=lev.spec)
        return "stack", hier
    if kind == "inference_net":
        return "net", model_from_dict(doc)
    raise ConfigError(f"model {path} has unknown kind {kind!r}")


# ---------------------------------------------------------------------------
# matched-cost wrapper

@dataclass
class RepeatedSmoother:
    """Several sweeps of a cheap smoother per smoothing application, so a
    classical baseline spends about as much work per cycle as a network."""
    inner: object
    operator: StencilField
    steps: int

    def apply(self, r: GridFunction) -> GridFunction:
        u = self.inner.apply(r)
        for _ in range(self.steps - 1):
            u = u + self.inner.apply(r - apply_stencil(self.operator, u))
        return u


def _repeat_sweeps(hier: MultigridHierarchy):
    for lev in hier.levels[:-1]:
        steps = 6 if lev.scheme == "full" else 2
        lev.smoother = RepeatedSmoother(lev.smoother, lev.operator, steps)


# ---------------------------------------------------------------------------
# shared solve core

def _equip(hier: MultigridHierarchy, cfg: dict) -> str:
    if cfg.get("model"):
        kind, loaded = load_model_file(cfg["model"])
        if kind == "stack":
            equip_trained(hier, loaded)
        else:
            equip_inferred(hier, loaded)
        base = os.path.basename(cfg["model"])
        return os.path.splitext(base)[0]
    if cfg["smoother"] == "exact":
        raise ConfigError("the exact smoother is analysis-only")
    equip_classical(hier, cfg["smoother"], cfg["omega"])
    return cfg["smoother"]


def _make_rhs(spec, kind: str, seed_parts) -> GridFunction:
    if kind == "zero":
        return zeros(spec)
    if kind == "ones":
        return GridFunction(spec, np.where(spec.mask, 1.0, 0.0))
    rng = np.random.default_rng(seed_parts)
    vec = rng.standard_normal(spec.n_active)
    vec /= np.linalg.norm(vec)
    return from_active(spec, vec)


def _solve_once(hier: MultigridHierarchy, A: StencilField, cfg: dict,
                trial: int):
    """One solve; returns (iterations, relative residual, wall seconds,
    converged)."""
    f = _make_rhs(A.spec, cfg["rhs"], [cfg["seed"], trial])
    if cfg["krylov"] == "none":
        _, rep = solve(hier, f, tol=cfg["tol"], max_iter=cfg["max_iter"])
        return (rep.iterations, rep.residual_history[-1], rep.wall_time,
                rep.converged)
    kcfg = FgmresConfig(tol=cfg["tol"], max_iter=cfg["max_iter"])
    action = grid_action(A)
    fv = f.values.ravel()
    if cfg["krylov"] == "gmres":
        t0 = time.perf_counter()
        _, rep = gmres(action, fv, cfg=kcfg)
    else:
        pc = cycle_preconditioner(hier) if cfg["precond"] == "mg" else None
        tag = "mg" if pc is not None else "none"
        t0 = time.perf_counter()
        _, rep = fgmres(action, fv, precond=pc, cfg=kcfg, tag=tag)
    dt = time.perf_counter() - t0
    rel = rep.history[-1] / rep.history[0] if rep.history[0] > 0 else 0.0
    if cfg["krylov"] == "fgmres" and any(
            b > a * (1.0 + 1e-12)
            for a, b in zip(rep.history, rep.history[1:])):
        raise NumericError("FGMRES residual history is not monotone")
    return rep.iterations, rel, dt, rep.converged


_SOLVE_COLUMNS = ["config_hash", "seed", "family", "geometry", "n", "theta",
                  "xi", "kappa", "levels", "scheme", "smoother", "krylov",
                  "trial", "iterations", "rel_residual", "wall_time",
                  "converged"]


def _solve_rows(cfg: dict, chash: str):
    problem = _problem_from(cfg)
    A = problem.assemble()
    hier = build_hierarchy(A, cfg["levels"], scheme=cfg["scheme"])
    tag = _equip(hier, cfg)
    if cfg.get("matched_cost") and cfg.get("model") is None:
        _repeat_sweeps(hier)
    fixed = {"config_hash": chash, "seed": cfg["seed"],
             "family": cfg["family"], "geometry": cfg["geometry"],
             "n": cfg["n"], "theta": repr(cfg["theta"]), "xi": cfg["xi"],
             "kappa": cfg["kappa"], "levels": cfg["levels"],
             "scheme": cfg["scheme"], "smoother": tag,
             "krylov": cfg["krylov"]}
    rows = []
    all_ok = True
    for trial in range(cfg["trials"]):
        iters, rel, dt, ok = _solve_once(hier, A, cfg, trial)
        all_ok = all_ok and ok
        rows.append({**fixed, "trial": trial, "iterations": iters,
                     "rel_residual": f"{rel:.6e}",
                     "wall_time": f"{dt:.6f}", "converged": ok})
    if cfg["trials"] > 1:
        mean_it = sum(r["iterations"] for r in rows) / len(rows)
        mean_dt = sum(float(r["wall_time"]) for r in rows) / len(rows)
        rows.append({**fixed, "trial": "mean", "iterations": f"{mean_it:.2f}",
                     "rel_residual": "", "wall_time": f"{mean_dt:.6f}",
                     "converged": all_ok})
    return rows, all_ok


def _write_csv(path: str, columns: list, rows: list):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        w.writerows(rows)


# ---------------------------------------------------------------------------
# subcommands

def cmd_train(cfg: dict) -> int:
    chash = config_hash("train", cfg)
    problem = _problem_from(cfg)
    tc = TrainConfig(samples=cfg["samples"], max_steps=cfg["max_steps"],
                     batch_size=cfg["batch_size"],
                     learning_rate=cfg["learning_rate"],
                     epochs=cfg["epochs"], seed=cfg["seed"])
    A = problem.assemble()
    meta = {"config_hash": chash, "seed": cfg["seed"],
            "epochs": cfg["epochs"]}
    notes = []
    t0 = time.perf_counter()
    if cfg["variant"] is not None:
        net, hier, records = train_inference_net(
            A, cfg["variant"], cfg["levels"], tc, k=cfg["net_k"])
        params = net.parameter_count
        doc = model_to_dict(net, {**meta, "parameters": params,
                                  "problem": dataclasses.asdict(problem)})
    elif cfg["thetas"] is not None:
        if cfg["family"] != "rotated":
            raise ConfigError("angle mixtures need the rotated family")
        ops = [dataclasses.replace(problem, angle=t).assemble()
               for t in cfg["thetas"]]
        hiers, records = train_mixture(ops, cfg["levels"], tc,
                                       scheme=cfg["scheme"],
                                       omega=cfg["omega"],
                                       activation=cfg["activation"])
        hier = hiers[0]
        params = _stack_params(hier)
        notes.append("mixture model; kernels shared across angles, saved "
                     "against the first angle's operator")
        doc = stack_to_dict(problem, hier, {**meta, "parameters": params})
    elif cfg["strategy"] == "independent":
        sm, record = train_independent(A, tc, form=cfg["form"],
                                       omega=cfg["omega"],
                                       activation=cfg["activation"])
        # saved as a depth-2 stack; deployment reuses the one smoother on
        # every level
        hier = build_hierarchy(A, 2, scheme=cfg["scheme"])
        hier.levels[0].smoother = sm
        records = [record]
        params = _stack_params(hier)
        doc = stack_to_dict(problem, hier, {**meta, "parameters": params})
    else:
        hier, records = train_adaptive(A, cfg["levels"], tc,
                                       scheme=cfg["scheme"],
                                       omega=cfg["omega"],
                                       activation=cfg["activation"])
        if cfg["inject_k"] > 0:
            hier, more = retrain_with_injection(hier, tc, cfg["inject_k"])
            records = records + more
            notes.append(f"retrained on residual probes after "
                         f"{cfg['inject_k']} cycles")
        params = _stack_params(hier)
        doc = stack_to_dict(problem, hier, {**meta, "parameters": params})
    wall = time.perf_counter() - t0
    if cfg["epochs"] < 500:
        notes.append("epochs below the 500 default")

    os.makedirs(cfg["out"], exist_ok=True)
    model_path = os.path.join(cfg["out"], "model.json")
    with open(model_path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
    loss_path = os.path.join(cfg["out"], "loss.csv")
    rows = []
    for rec in records:
        for epoch, value in enumerate(rec.epochs):
            rows.append({"config_hash": chash, "seed": cfg["seed"],
                         "level": rec.level, "epoch": epoch,
                         "loss": f"{value:.10e}"})
    _write_csv(loss_path, ["config_hash", "seed", "level", "epoch", "loss"],
               rows)
    manifest = {
        "subcommand": "train",
        "config": {k: _to_str(next(o.kind for o in OPTIONS["train"]
                                   if o.name == k), v)
                   for k, v in cfg.items() if v is not None},
        "config_hash": chash,
        "seed": cfg["seed"],
        "problem": dataclasses.asdict(problem),
        "parameters": params,
        "records": [{"level": r.level, "epochs": len(r.epochs),
                     "initial": r.initial if r.epochs else None,
                     "final": r.final if r.epochs else None}
                    for r in records],
        "wall_time": wall,
        "notes": notes,
        "outputs": {"model": model_path, "loss": loss_path},
    }
    manifest_path = os.path.join(cfg["out"], "manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    print(f"model: {model_path}")
    print(f"parameters: {params}")
    for r in records:
        if r.epochs:
            print(f"level {r.level}: loss {r.initial:.6f} -> {r.final:.6f} "
                  f"({len(r.epochs)} epochs)")
        else:
            print(f"level {r.level}: initialization kept (0 epochs)")
    return 0


def _stack_params(hier: MultigridHierarchy) -> int:
    total = 0
    for lev in hier.levels[:-1]:
        sm = lev.smoother
        if isinstance(sm, ConvSmoother):
            total += sum(k.weights.size for k in sm.layers)
            if sm.skip is not None:
                total += sm.skip.weights.size
    return total


def cmd_solve(cfg: dict) -> int:
    chash = config_hash("solve", cfg)
    rows, all_ok = _solve_rows(cfg, chash)
    path = cfg["csv"] or os.path.join(cfg["out"], "solve.csv")
    _write_csv(path, _SOLVE_COLUMNS, rows)
    for r in rows:
        print(f"trial {r['trial']}: {r['iterations']} iterations, "
              f"residual {r['rel_residual']}, converged {r['converged']}")
    if not all_ok:
        raise NonConvergedError(f"solve failed to reach tol {cfg['tol']} "
                                f"within {cfg['max_iter']} iterations")
    return 0


def _analysis_smoother(cfg: dict, hier: MultigridHierarchy,
                       A: StencilField):
    """(tag, finest correction action) for the analyze subcommand."""
    if cfg.get("model"):
        tag = _equip(hier, cfg)
        sm = hier.levels[0].smoother
        if getattr(sm, "is_linear", lambda: True)() is False:
            raise UnsupportedOperationError(
                "matrix analysis needs a linear smoother; this model uses "
                "a nonlinear activation")
        return tag, sm.apply
    if cfg["smoother"] == "exact":
        Ad = materialize_stencil(A)
        inv = dense.inverse(Ad)

        def exact_action(r: GridFunction) -> GridFunction:
            return from_active(A.spec, inv @ to_active(r))

        return "exact", exact_action
    equip_classical(hier, cfg["smoother"], cfg["omega"])
    return cfg["smoother"], hier.levels[0].smoother.apply


def cmd_analyze(cfg: dict) -> int:
    if cfg["n"] > MAX_ANALYZE_N:
        raise ConfigError(
            f"dense analysis is limited to n <= {MAX_ANALYZE_N}; "
            f"got n = {cfg['n']}")
    chash = config_hash("analyze", cfg)
    problem = _problem_from(cfg)
    A = problem.assemble()
    hier = build_hierarchy(A, cfg["levels"], scheme=cfg["scheme"])
    tag, action = _analysis_smoother(cfg, hier, A)
    metrics = list(cfg["metrics"])
    if tag == "exact" and "rho_cycle" in metrics:
        # no level smoothers to cycle with; the exact action answers the
        # bound metrics only
        metrics.remove("rho_cycle")

    row = {"config_hash": chash, "seed": cfg["seed"], "family": cfg["family"],
           "geometry": cfg["geometry"], "n": cfg["n"],
           "theta": repr(cfg["theta"]), "xi": cfg["xi"],
           "kappa": cfg["kappa"], "levels": cfg["levels"],
           "scheme": cfg["scheme"], "smoother": tag}
    Ad = materialize_stencil(A)
    if "rho_smoother" in metrics:
        G = analysis.iteration_matrix(action, A)
        row["rho_smoother"] = f"{analysis.spectral_radius(G):.6f}"
    if "rho_cycle" in metrics:
        E = analysis.cycle_matrix(hier, pre=True, post=False)
        row["rho_cycle"] = f"{analysis.spectral_radius(E):.6f}"
        E2 = analysis.cycle_matrix(hier, pre=True, post=True)
        row["rho_cycle_prepost"] = f"{analysis.spectral_radius(E2):.6f}"
    if "beta_star" in metrics or "energy" in metrics:
        M = (Ad if tag == "exact"
             else analysis.smoother_matrix(action, A))
        if "beta_star" in metrics:
            split = analysis.empty_splitting(A.spec)
            row["beta_star"] = \
                f"{analysis.ideal_bound(Ad, M, split):.6f}"
        if "energy" in metrics:
            G = analysis.iteration_matrix(action, A)
            row["energy"] = f"{analysis.energy_norm(G, Ad):.6f}"
    columns = list(row.keys())
    path = cfg["csv"] or os.path.join(cfg["out"], "analyze.csv")
    _write_csv(path, columns, [row])
    print(", ".join(f"{k}={row[k]}" for k in columns
                    if k.startswith(("rho", "beta", "energy"))))

    if cfg["profile_out"]:
        prof = analysis.smoothing_profile(A, action)
        rows = [{"config_hash": chash, "seed": cfg["seed"], "index": i,
                 "eigenvalue": f"{prof.eigenvalues[i]:.10e}",
                 "factor": f"{prof.factors[i]:.10e}"}
                for i in range(prof.eigenvalues.size)]
        _write_csv(cfg["profile_out"],
                   ["config_hash", "seed", "index", "eigenvalue", "factor"],
                   rows)
    if cfg["kernel_out"]:
        sm = hier.levels[0].smoother
        if not isinstance(sm, ConvSmoother):
            raise ConfigError("effective-kernel dump needs a trained "
                              "convolutional model")
        kern = effective_kernel(sm)
        with open(cfg["kernel_out"], "w") as fh:
            json.dump({"config_hash": chash, "size": kern.size,
                       "weights": kern.weights.tolist()}, fh)
    return 0


def cmd_bench(cfg: dict) -> int:
    chash = config_hash("bench", cfg)
    sweep_kappa = cfg["family"] == "variable"
    var_values = cfg["kappas"] if sweep_kappa else cfg["thetas"]
    cells = []
    for value in var_values:
        for n in cfg["ns"]:
            for scheme in cfg["schemes"]:
                for sm in cfg["smoothers"]:
                    cells.append((value, n, scheme, sm))

    def run_cell(idx_cell):
        idx, (value, n, scheme, sm_tag) = idx_cell
        sub = dict(cfg)
        sub.update({"n": n, "scheme": scheme, "trials": cfg["trials"],
                    "theta": 0.0 if sweep_kappa else value,
                    "kappa": value if sweep_kappa else 1.0})
        if sm_tag.endswith(".json") or os.path.sep in sm_tag:
            sub["model"] = sm_tag
            sub["smoother"] = "jacobi"
            sub["matched_cost"] = False
        else:
            sub["model"] = None
            sub["smoother"] = sm_tag
            sub["matched_cost"] = cfg["matched_cost"]
        rows, ok = _solve_rows(sub, chash)
        summary = rows[-1]  # mean row when trials > 1
        out = {"cell": idx, "config_hash": chash, "seed": cfg["seed"],
               "family": cfg["family"], "geometry": cfg["geometry"],
               "n": n, "scheme": scheme,
               ("kappa" if sweep_kappa else "theta"): repr(float(value)),
               "smoother": summary["smoother"], "krylov": cfg["krylov"],
               "iterations": summary["iterations"],
               "wall_time": summary["wall_time"],
               "converged": ok}
        return idx, out, ok

    workers = max(1, cfg["workers"])
    results = []
    if workers == 1 or len(cells) == 1:
        results = [run_cell(ic) for ic in enumerate(cells)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_cell, enumerate(cells)))
    results.sort(key=lambda t: t[0])
    var_col = "kappa" if sweep_kappa else "theta"
    columns = ["cell", "config_hash", "seed", "family", "geometry", "n",
               "scheme", var_col, "smoother", "krylov", "iterations",
               "wall_time", "converged"]
    rows = [row for _, row, _ in results]
    path = cfg["csv"] or os.path.join(cfg["out"], "bench.csv")
    _write_csv(path, columns, rows)
    for row in rows:
        print(f"{var_col}={row[var_col]} n={row['n']} scheme={row['scheme']} "
              f"{row['smoother']}: {row['iterations']} iterations")
    if not all(ok for _, _, ok in results):
        raise NonConvergedError("at least one sweep cell failed to converge")
    return 0


# ---------------------------------------------------------------------------

_COMMANDS = {"train": cmd_train, "solve": cmd_solve, "analyze": cmd_analyze,
             "bench": cmd_bench}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.subcommand is None:
            parser.print_help()
            return 1
        cfg = resolve_config(ns.subcommand, ns)
        return _COMMANDS[ns.subcommand](cfg)
    except (ConfigError, UnsupportedOperationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NonConvergedError as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return 3
    except (NumericError, SingularMatrixError, TrainingError,
            ContractError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
