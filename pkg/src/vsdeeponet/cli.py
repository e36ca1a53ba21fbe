"""Command-line pipeline: generate data, train, evaluate, infer, invert, export.

Exit codes: 0 ok, 2 usage, 3 data validation, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .cavity import COMPONENTS as CAVITY_COMPONENTS
from .cavity import CavityParams, DivergenceError, PoissonNotConverged, grid_coords, run_cavity_case
from .inverse import GaConfig, SurrogateObjective, run_ga
from .model import ModelConfig, SDeepONet
from .plasticity import COMPONENTS as BAR_COMPONENTS
from .plasticity import BarGeometry, Material, pseudo_node_coords, run_bar_case
from .rbi import profile_from_genome, sample_profiles
from .storage import (
    ContainerError,
    DatasetContainer,
    check_compatible,
    export_fields_csv,
    import_csv,
    read_checkpoint,
    read_dataset,
    write_checkpoint,
    write_dataset,
)
from .training import NonFiniteLossError, TrainConfig, attach_scalers, evaluate, report_csv_rows, split_dataset, train

log = logging.getLogger("vsdeeponet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


# -- helpers --------------------------------------------------------------------

def _resolve(args, defaults: dict) -> dict:
    """defaults < config file < explicit command-line flags."""
    resolved = dict(defaults)
    if getattr(args, "config", None):
        try:
            resolved.update(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            resolved[key] = val
    return resolved


def _record(out: Path, command: str, resolved: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    rec = {
        "command": command,
        "argv": sys.argv[1:],
        "resolved": resolved,
        "versions": {"vsdeeponet": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }
    (out / "run_record.json").write_text(json.dumps(rec, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _ints(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(int(t) for t in text)
    return tuple(int(t) for t in str(text).split(",") if t.strip())


def _grid(text):
    try:
        nx, ny = str(text).lower().split("x")
        return int(nx), int(ny)
    except ValueError as exc:
        raise UsageError(f"grid must look like 121x41, got {text!r}") from exc


def _poisson(mode: str) -> dict:
    kind, _, val = str(mode).partition(":")
    if kind == "fixed":
        return {"poisson_iters": int(val or 50), "poisson_tol": None}
    if kind == "tol":
        return {"poisson_tol": float(val or 1e-6)}
    raise UsageError(f"poisson mode must be fixed[:k] or tol[:value], got {mode!r}")


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _read_two_column_csv(path, name):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ContainerError(f"{path} is empty")
    key = [k for k in rows[0] if k != "t"]
    if len(key) != 1:
        raise ContainerError(f"{path} must have columns t,{name}")
    t = np.array([float(r["t"]) for r in rows])
    v = np.array([float(r[key[0]]) for r in rows])
    return t, v


# -- generators -----------------------------------------------------------------

def _cavity_job(job):
    profile, params = job
    res = run_cavity_case(profile, params)
    return res.snapshots, res.diagnostics


def cmd_gen_cavity(args) -> int:
    defaults = {"cases": 8, "seed": 0, "grid": "61x21", "steps": 2000, "dt": None, "t_total": 2.0,
                "snapshots": 25, "poisson_mode": "fixed:50", "rho": 1.0, "mu": 0.1, "threads": 1}
    r = _resolve(args, defaults)
    nx, ny = _grid(r["grid"])
    dt = r["dt"] if r["dt"] is not None else r["t_total"] / r["steps"]
    params = CavityParams(nx=nx, ny=ny, rho=r["rho"], mu=r["mu"], dt=dt, n_steps=r["steps"],
                          n_snapshots=r["snapshots"], **_poisson(r["poisson_mode"]))
    out = Path(args.out)
    _record(out, "gen-cavity", r)
    profiles = sample_profiles(r["seed"], r["cases"], (-2.0, 2.0), params.n_snapshots, params.t_total)
    try:
        results = _map(_cavity_job, [(p, params) for p in profiles], r["threads"])
    except DivergenceError as exc:
        log.error("a case diverged at step %d; lower --dt or the load bounds", exc.step)
        raise
    fields = [snaps for snaps, _ in results]
    rows = [(i, d.step, d.cfl, d.divergence, d.residual, d.sweeps)
            for i, (_, diags) in enumerate(results) for d in diags]
    container = DatasetContainer(
        coords=grid_coords(params),
        loads=np.stack([p.samples for p in profiles]),
        fields=np.stack(fields),
        problem="cavity",
        components=list(CAVITY_COMPONENTS),
        times=profiles[0].times,
        controls=np.stack([p.control.values for p in profiles]),
        generation={"seed": r["seed"], "params": {k: getattr(params, k) for k in params.__dataclass_fields__}},
    )
    write_dataset(container, out)
    _write_csv(out / "diagnostics.csv", ["case", "step", "cfl", "divergence_norm", "poisson_residual", "sweeps"], rows)
    return EXIT_OK


def _bar_job(job):
    profile, n_sub, n_nodes = job
    return run_bar_case(profile, Material(), BarGeometry(), n_sub=n_sub, n_nodes=n_nodes)


def cmd_gen_bar(args) -> int:
    defaults = {"cases": 200, "seed": 0, "snapshots": 40, "nodes": 1, "substeps": 10, "t_total": 1.0, "threads": 1}
    r = _resolve(args, defaults)
    geom = BarGeometry()
    bound = 0.05 * geom.length
    profiles = sample_profiles(r["seed"], r["cases"], (-bound, bound), r["snapshots"], r["t_total"])
    out = Path(args.out)
    _record(out, "gen-bar", r)
    fields = _map(_bar_job, [(p, r["substeps"], r["nodes"]) for p in profiles], r["threads"])
    container = DatasetContainer(
        coords=pseudo_node_coords(r["nodes"]),
        loads=np.stack([p.samples for p in profiles]),
        fields=np.stack(fields),
        problem="bar1d",
        components=list(BAR_COMPONENTS),
        times=profiles[0].times,
        controls=np.stack([p.control.values for p in profiles]),
        generation={"seed": r["seed"], "params": {"substeps": r["substeps"], "length_mm": geom.length,
                                                  "material": vars(Material())}},
    )
    write_dataset(container, out)
    return EXIT_OK


# -- training / evaluation --------------------------------------------------------

FIELD_SCALING = {"cavity": "step-maxabs", "bar1d": "minmax"}


def cmd_train(args) -> int:
    defaults = {"epochs": 1000, "batch_size": 64, "lr": 1e-3, "seed": 0, "split": 0.8, "hd": 32,
                "trunk": "101,101,101,101,101", "branch": "64,32,32,64", "scaling": None}
    r = _resolve(args, defaults)
    data = read_dataset(args.data)
    n, S, N, C = data.fields.shape
    cfg = ModelConfig(n_steps=S, n_components=C, hd=int(r["hd"]), trunk_hidden=_ints(r["trunk"]),
                      branch_hidden=_ints(r["branch"]))
    tcfg = TrainConfig(epochs=int(r["epochs"]), batch_size=int(r["batch_size"]), lr=float(r["lr"]),
                       seed=int(r["seed"]), split_fraction=float(r["split"]))
    train_idx, test_idx = split_dataset(n, tcfg.seed, tcfg.split_fraction) if n > 1 else (np.arange(n), np.arange(0))
    model = SDeepONet(cfg, seed=tcfg.seed)
    kind = r["scaling"] or FIELD_SCALING.get(data.problem, "minmax")
    tr = data.subset(train_idx)
    attach_scalers(model, tr.loads, data.coords, tr.fields, kind)
    out = Path(args.out)
    _record(out, "train", r)
    curve = train(model, tr.loads, data.coords, tr.fields, tcfg)
    write_checkpoint(model, out / "model", extra={"train_config": tcfg.to_dict(), "problem": data.problem,
                                                  "components": list(data.components)})
    (out / "split.json").write_text(json.dumps({"train": train_idx.tolist(), "test": test_idx.tolist()}) + "\n")
    _write_csv(out / "loss_curve.csv", ["epoch", "loss"], [(i, repr(float(v))) for i, v in enumerate(curve)])
    return EXIT_OK


def _model_dir(path: Path) -> Path:
    return path / "model" if (path / "model" / "manifest.json").is_file() else path


def cmd_eval(args) -> int:
    data = read_dataset(args.data)
    mpath = Path(args.model)
    model = read_checkpoint(_model_dir(mpath))
    check_compatible(model, data)
    idx = np.arange(data.fields.shape[0])
    split_file = mpath / "split.json"
    if args.subset != "all":
        if not split_file.is_file():
            raise ContainerError(f"--subset {args.subset} needs {split_file}")
        idx = np.array(json.loads(split_file.read_text())[args.subset], dtype=int)
    sub = data.subset(idx)
    pred = model.predict_fields(sub.loads, sub.coords)
    report = evaluate(pred, sub.fields, sub.loads, sub.components or None)
    out = Path(args.report)
    _record(out, "eval", {"data": args.data, "model": args.model, "subset": args.subset})
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, default=_jsonable) + "\n")
    _write_csv(out / "report.csv", ["component", "metric", "index", "value"], report_csv_rows(report))
    for comp in report.components:
        print(f"{comp.name}: rel_l2={comp.rel_l2}% mae={comp.mae:.6g} r2={comp.r2:.6f}")
    return EXIT_OK


def _read_coords(path) -> np.ndarray:
    p = Path(path)
    if p.is_dir():
        return read_dataset(p).coords
    with open(p, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([(float(r["x"]), float(r["y"])) for r in rows])


def cmd_infer(args) -> int:
    model = read_checkpoint(_model_dir(Path(args.model)))
    _, load = _read_two_column_csv(args.load_csv, "value")
    if load.size != model.cfg.n_steps:
        raise ContainerError(f"load CSV has {load.size} rows, model expects S={model.cfg.n_steps}")
    coords = _read_coords(args.coords)
    fields = model.forward(load, coords, physical=True)  # [N, S, C]
    out = Path(args.out)
    _record(out, "infer", {"model": args.model, "load_csv": args.load_csv, "coords": args.coords})
    N, S, C = fields.shape
    rows = [(n, s, c, repr(float(fields[n, s, c]))) for n in range(N) for s in range(S) for c in range(C)]
    _write_csv(out / "prediction.csv", ["node", "step", "component", "value"], rows)
    return EXIT_OK


def cmd_invert(args) -> int:
    defaults = {"generations": 25, "population": 100, "parents_mating": 10, "lo": -5.5, "hi": 5.5,
                "mutation_fraction": 0.2, "mutation_scale": None, "elitism": 1, "seed": 0}
    r = dict(defaults)
    if args.ga_config:
        r.update(json.loads(Path(args.ga_config).read_text()))
    if args.seed is not None:
        r["seed"] = args.seed
    cfg = GaConfig(**r)
    model = read_checkpoint(_model_dir(Path(args.model)))
    t, target = _read_two_column_csv(args.target_csv, "sigma")
    coords = _read_coords(args.coords) if args.coords else np.array([[0.5, 0.5]])
    t_total = args.t_total
    obj = SurrogateObjective(model, coords, target, component=args.component, t_total=t_total)
    res = run_ga(obj, cfg)
    out = Path(args.out)
    _record(out, "invert", {**r, "mutation_scale": cfg.mutation_scale, "component": args.component,
                            "t_total": t_total, "model": args.model, "target_csv": args.target_csv})
    _write_csv(out / "ga_history.csv", ["generation", "best_fitness", "mean_fitness"], res.history)
    ident_load = profile_from_genome(res.best_genome, model.cfg.n_steps, t_total).samples
    ident_stress = obj.predicted_history(res.best_genome[None])[0]
    ref_load = [""] * t.size
    if args.reference_load_csv:
        ref_load = list(_read_two_column_csv(args.reference_load_csv, "value")[1])
    rows = [(t[i], ident_load[i], ref_load[i], ident_stress[i], target[i]) for i in range(t.size)]
    _write_csv(out / "comparison.csv",
               ["t", "identified_load", "reference_load", "identified_stress", "reference_stress"], rows)
    (out / "best_genome.json").write_text(json.dumps({"genome": res.best_genome.tolist(),
                                                       "fitness": res.best_fitness}) + "\n")
    return EXIT_OK


def cmd_export(args) -> int:
    data = read_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    export_fields_csv(data, out / "fields.csv")
    _write_csv(out / "coords.csv", ["node", "x", "y"], [(i, repr(float(x)), repr(float(y))) for i, (x, y) in enumerate(data.coords)])
    _write_csv(out / "loads.csv", ["case", "step", "value"],
               [(i, s, repr(float(v))) for i, row in enumerate(data.loads) for s, v in enumerate(row)])
    _record(out, "export", {"data": args.data})
    return EXIT_OK


def cmd_import(args) -> int:
    comps = args.components.split(",") if args.components else None
    container = import_csv(args.fields, args.coords, args.loads, comps, problem=args.problem)
    write_dataset(container, args.out)
    _record(Path(args.out), "import", vars(args))
    return EXIT_OK


# -- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vsdeeponet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-cavity", help="simulate lid-driven cavity cases")
    g.add_argument("--cases", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--grid", help="NXxNY, e.g. 121x41")
    g.add_argument("--steps", type=int)
    g.add_argument("--dt", type=float, help="default: t_total / steps")
    g.add_argument("--t-total", dest="t_total", type=float)
    g.add_argument("--snapshots", type=int)
    g.add_argument("--poisson-mode", dest="poisson_mode", help="fixed[:k] or tol[:value]")
    g.add_argument("--threads", type=int)
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_cavity)

    b = sub.add_parser("gen-bar", help="simulate 1D elastoplastic bar cases")
    b.add_argument("--cases", type=int)
    b.add_argument("--seed", type=int)
    b.add_argument("--snapshots", type=int)
    b.add_argument("--nodes", type=int)
    b.add_argument("--substeps", type=int)
    b.add_argument("--threads", type=int)
    b.add_argument("--config")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_gen_bar)

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int, help="optimizer steps")
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--split", type=float)
    t.add_argument("--hd", type=int)
    t.add_argument("--trunk", help="hidden widths, e.g. 101,101,101,101,101")
    t.add_argument("--branch", help="GRU sizes, e.g. 64,32,32,64")
    t.add_argument("--scaling", choices=["step-maxabs", "minmax", "maxabs"])
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a trained model")
    e.add_argument("--data", required=True)
    e.add_argument("--model", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--subset", choices=["all", "train", "test"], default="all")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="predict fields for one load history")
    i.add_argument("--model", required=True)
    i.add_argument("--load-csv", dest="load_csv", required=True, help="columns t,value (S rows)")
    i.add_argument("--coords", required=True, help="CSV node,x,y or a dataset directory")
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_infer)

    v = sub.add_parser("invert", help="identify a load history from a mean-stress target")
    v.add_argument("--model", required=True)
    v.add_argument("--target-csv", dest="target_csv", required=True, help="columns t,sigma")
    v.add_argument("--ga-config")
    v.add_argument("--coords", help="CSV node,x,y or dataset directory (default: one node)")
    v.add_argument("--component", type=int, default=0)
    v.add_argument("--t-total", dest="t_total", type=float, default=1.0)
    v.add_argument("--reference-load-csv", dest="reference_load_csv")
    v.add_argument("--seed", type=int)
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_invert)

    x = sub.add_parser("export", help="dump a dataset to CSV")
    x.add_argument("--data", required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export)

    m = sub.add_parser("import", help="build a dataset from CSV files")
    m.add_argument("--fields", required=True)
    m.add_argument("--coords", required=True)
    m.add_argument("--loads", required=True)
    m.add_argument("--components")
    m.add_argument("--problem", default="external")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_import)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (DivergenceError, PoissonNotConverged, NonFiniteLossError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (ContainerError, ValueError, KeyError, OSError) as exc:
        log.error("data validation failed: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
