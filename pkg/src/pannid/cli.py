"""Command-line pipeline: generate -> split -> train/sweep -> evaluate -> predict.

Every command reads an optional JSON run configuration (``--config``) and
applies flag overrides on top of it. Exit codes: 0 ok, 2 configuration or
input error, 3 forward-solver failure, 4 non-finite loss.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import datagen, icnn, training
from .equilibrium import DEFAULT_LAMBDA_R, force_map_csv
from .errors import ConfigError, DomainError, MeshError, NumericalError, SolverError
from .kinematics import KinematicMode, load_dataset, load_mesh, save_json
from .material import NeoHookeanModel, PannModel, load_model, save_model

log = logging.getLogger("pannid")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_NUMERICAL = 0, 2, 3, 4
MANIFEST = "experiments.json"
F_COLUMNS = [f"F{i}{j}" for i in range(1, 4) for j in range(1, 4)]
P_COLUMNS = [f"P{i}{j}" for i in range(1, 4) for j in range(1, 4)]

DEFAULT_MATERIAL = {"kind": "mooney_rivlin", "c10": 0.05, "c01": 0.25, "lam": 0.2}


# ---------------------------------------------------------------------------
# configuration


def _stretches(spec):
    if isinstance(spec, dict):
        try:
            return list(np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["num"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed stretch range: {exc}") from exc
    if not isinstance(spec, list) or not spec:
        raise ConfigError("stretches must be a non-empty list or a {start, stop, num} range")
    return [float(v) for v in spec]


def _experiment_specs(cfg):
    """ExperimentSpec list from the config, falling back to the default design."""
    if "experiments" not in cfg:
        return datagen.default_experiments()
    specs = []
    for i, raw in enumerate(cfg["experiments"]):
        try:
            geom = datagen.geometry_from_dict(raw["geometry"])
            program = datagen.LoadProgram(
                geom,
                _stretches(raw["stretches"]),
                raw.get("grips", "clamped"),
                tuple(bool(v) for v in raw.get("reaction_mask", (True, True))),
            )
            specs.append(datagen.ExperimentSpec(str(raw.get("name", f"exp{i}")), geom, program))
        except KeyError as exc:
            raise ConfigError(f"experiment {i}: missing field {exc}") from exc
    if not specs:
        raise ConfigError("no experiments configured")
    return specs


def _load_config(args):
    cfg = {}
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
    overrides = {
        "output_dir": args.output_dir,
        "data": getattr(args, "data", None),
        "mode": args.mode,
        "lambda_r": args.lambda_r,
    }
    for key, val in overrides.items():
        if val is not None:
            cfg[key] = val
    for section, pairs in (
        ("split", (("n_train", "n_train"), ("n_val", "n_val"), ("source", "source"))),
        ("optim", (("lr", "lr"), ("max_epochs", "max_epochs"), ("patience", "patience"), ("seed", "seed"))),
        ("noise", (("sigma_u", "sigma_u"), ("sigma_r", "sigma_r"), ("seed", "noise_seed"))),
    ):
        for key, attr in pairs:
            val = getattr(args, attr, None)
            if val is not None:
                cfg.setdefault(section, {})[key] = val
    if getattr(args, "kind", None):
        cfg.setdefault("model", {})["kind"] = args.kind
    if getattr(args, "widths", None):
        cfg.setdefault("model", {"kind": "pann"}).setdefault("arch", {})["widths"] = args.widths
    for key in ("model_in", "substeps", "experiment", "input", "output"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val

    out = cfg.setdefault("output_dir", ".")
    if not os.path.isdir(out):
        raise ConfigError(f"output directory {out!r} does not exist")
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out!r} is not writable")
    return cfg


def _mode(cfg):
    try:
        return KinematicMode.parse(cfg.get("mode", "plane_strain"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _workers(args):
    if args.deterministic:
        return 1
    return max(1, args.threads or 1)


def _split_config(cfg):
    s = cfg.get("split", {})
    try:
        return training.SplitConfig(int(s.get("n_train", 20)), int(s.get("n_val", 6)), s.get("source"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed split config: {exc}") from exc


def _optim_config(cfg):
    o = cfg.get("optim", {})
    try:
        return training.OptimConfig(
            lr=float(o.get("lr", 1e-3)),
            max_epochs=int(o.get("max_epochs", 5000)),
            patience=int(o.get("patience", 200)),
            seed=int(o.get("seed", 0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed optimiser config: {exc}") from exc


def _write(cfg, name, text):
    path = os.path.join(cfg["output_dir"], name)
    with open(path, "w") as fh:
        fh.write(text)
    return path


# ---------------------------------------------------------------------------
# data access


def _manifest_path(cfg):
    data = cfg.get("data", cfg["output_dir"])
    path = os.path.join(data, MANIFEST) if os.path.isdir(data) else data
    if not os.path.isfile(path):
        raise ConfigError(f"no experiment manifest at {path!r}; run 'generate' first")
    return path


def _read_manifest(cfg):
    path = _manifest_path(cfg)
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed manifest {path}: {exc}") from exc
    return os.path.dirname(os.path.abspath(path)), doc


def _load_experiments(cfg):
    base, doc = _read_manifest(cfg)
    out = []
    for entry in doc.get("experiments", []):
        mesh = load_mesh(os.path.join(base, entry["mesh"]))
        ds = load_dataset(os.path.join(base, entry["dataset"]), mesh)
        out.append(training.Experiment(entry["name"], mesh, ds))
    if not out:
        raise ConfigError("manifest lists no experiments")
    return out


def _initial_model(cfg, mode):
    spec = cfg.get("model", {"kind": "neo_hookean"})
    kind = spec.get("kind", "neo_hookean")
    if kind == "neo_hookean":
        return NeoHookeanModel(np.asarray(spec.get("theta", [0.0, 0.0]), dtype=float), mode)
    if kind == "pann":
        arch = icnn.IcnnArch.from_dict({"widths": [16, 16], **spec.get("arch", {})})
        seed = int(cfg.get("optim", {}).get("seed", 0))
        return PannModel.initialise(arch, seed, mode)
    raise ConfigError(f"unknown model kind {kind!r}")


def _model_in(cfg):
    path = cfg.get("model_in") or os.path.join(cfg["output_dir"], "model.json")
    if not os.path.isfile(path):
        raise ConfigError(f"model file {path!r} not found")
    return load_model(path)


def _sweep_archs(cfg):
    if "sweep" not in cfg:
        return list(icnn.DEFAULT_SWEEP)
    try:
        return [icnn.IcnnArch.from_dict(d) for d in cfg["sweep"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed sweep list: {exc}") from exc


# ---------------------------------------------------------------------------
# commands


def _noise_dict(noise):
    return {"sigma_u": noise.sigma_u, "sigma_r": noise.sigma_r, "seed": noise.seed}


def cmd_generate(args, cfg):
    mode = _mode(cfg)
    material = datagen.material_from_dict(cfg.get("material", DEFAULT_MATERIAL), mode)
    n = cfg.get("noise", {})
    noise = datagen.NoiseSpec(float(n.get("sigma_u", 0.0)), float(n.get("sigma_r", 0.0)), int(n.get("seed", 0)))
    specs = _experiment_specs(cfg)
    manifest = {"mode": mode.value, "material": material.to_dict(), "noise": _noise_dict(noise), "experiments": []}
    for k, spec in enumerate(specs):
        mesh = datagen.generate_mesh(spec.geometry)
        ds = datagen.forward_solve(mesh, material, spec.program)
        peak = datagen.max_local_stretch(mesh, ds, mode)
        if noise.sigma_u > 0 or noise.sigma_r > 0:
            ds = datagen.add_noise(ds, datagen.NoiseSpec(noise.sigma_u, noise.sigma_r, noise.seed + k))
        mesh_file, data_file = f"mesh_{spec.name}.json", f"dataset_{spec.name}.json"
        save_json(mesh.to_dict(), os.path.join(cfg["output_dir"], mesh_file))
        save_json(ds.to_dict(), os.path.join(cfg["output_dir"], data_file))
        manifest["experiments"].append({
            "name": spec.name,
            "mesh": mesh_file,
            "dataset": data_file,
            "geometry": spec.geometry.to_dict(),
            "stretches": spec.program.stretches,
            "grips": spec.program.grips,
        })
        print(f"{spec.name}: {len(ds)} steps, max local stretch {peak:.4f}")
    save_json(manifest, os.path.join(cfg["output_dir"], MANIFEST))
    return EXIT_OK


def cmd_split(args, cfg):
    exps = _load_experiments(cfg)
    split = training.split_dataset(exps, _split_config(cfg))

    def ids(samples):
        return [[s.experiment.name, s.step.step_id] for s in samples]

    save_json(
        {"train": ids(split.train), "val": ids(split.val), "test": ids(split.test)},
        os.path.join(cfg["output_dir"], "split.json"),
    )
    print(f"train {len(split.train)}, val {len(split.val)}, test {len(split.test)}")
    return EXIT_OK


def cmd_train(args, cfg):
    mode = _mode(cfg)
    exps = _load_experiments(cfg)
    split = training.split_dataset(exps, _split_config(cfg))
    lam = float(cfg.get("lambda_r", DEFAULT_LAMBDA_R))
    workers = _workers(args)
    res = training.train(_initial_model(cfg, mode), split, _optim_config(cfg), lam, workers)
    save_model(res.model, os.path.join(cfg["output_dir"], "model.json"))
    _write(cfg, "history.csv", training.history_csv(res.history))
    monitored = split.val or split.train
    ev = training.evaluate(res.model, monitored, lam, workers=workers)
    _write(cfg, "metrics.csv", training.metrics_csv(ev))
    print(f"best epoch {res.best_epoch}, best validation loss {res.best_val:.6g}")
    return EXIT_OK


def cmd_sweep(args, cfg):
    mode = _mode(cfg)
    exps = _load_experiments(cfg)
    split = training.split_dataset(exps, _split_config(cfg))
    lam = float(cfg.get("lambda_r", DEFAULT_LAMBDA_R))
    result = training.sweep(_sweep_archs(cfg), split, _optim_config(cfg), lam, mode.value, _workers(args))
    _write(cfg, "sweep.csv", training.sweep_csv(result))
    best = result.best
    save_model(best.result.model, os.path.join(cfg["output_dir"], "model.json"))
    _write(cfg, "history.csv", training.history_csv(best.result.history))
    print(f"selected arch {best.arch_id} ({best.arch.label()}, {best.params} params), "
          f"validation loss {best.val_loss:.6g}")
    return EXIT_OK


def cmd_evaluate(args, cfg):
    model = _model_in(cfg)
    exps = _load_experiments(cfg)
    split = training.split_dataset(exps, _split_config(cfg))
    lam = float(cfg.get("lambda_r", DEFAULT_LAMBDA_R))
    ev = training.evaluate(model, split.test, lam, workers=_workers(args))
    _write(cfg, "metrics.csv", training.metrics_csv(ev))
    _write(cfg, "curve.csv", training.curve_csv(ev))
    _write(cfg, "summary.csv", training.csv_text(["metric", "value"], sorted(ev.aggregates.items())))
    # residual map of the last test step of every experiment
    last = {}
    for s, (_, rep) in zip(split.test, ev.reports):
        last[s.experiment.name] = (s.experiment, rep)
    for name, (exp, rep) in last.items():
        _write(cfg, f"residuals_{name}.csv", force_map_csv(exp.mesh, rep.forces))
    agg = ev.aggregates
    print(f"{agg['n_steps']} test steps, loss {agg['loss_sum']:.6g}, "
          f"median inner residual {agg['inner_median']:.6g}")
    return EXIT_OK


def cmd_predict(args, cfg):
    model = _model_in(cfg)
    src = cfg.get("input")
    if not src or not os.path.isfile(src):
        raise ConfigError(f"input CSV {src!r} not found")
    with open(src, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in F_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ConfigError(f"input CSV lacks columns {missing}")
        try:
            F = np.array([[float(row[c]) for c in F_COLUMNS] for row in reader]).reshape(-1, 3, 3)
        except ValueError as exc:
            raise ConfigError(f"malformed input CSV: {exc}") from exc
    W = model.energy(F)
    P = model.stress(F).reshape(-1, 9)
    rows = [[*f, w, *p] for f, w, p in zip(F.reshape(-1, 9), W, P)]
    out = cfg.get("output") or "predictions.csv"
    if not os.path.isabs(out):
        out = os.path.join(cfg["output_dir"], out)
    with open(out, "w") as fh:
        fh.write(training.csv_text(F_COLUMNS + ["W"] + P_COLUMNS, rows))
    print(f"{len(rows)} rows written to {out}")
    return EXIT_OK


def cmd_continuity_scan(args, cfg):
    model = _model_in(cfg)
    base, doc = _read_manifest(cfg)
    entries = doc.get("experiments", [])
    name = cfg.get("experiment") or (entries[0]["name"] if entries else None)
    match = [e for e in entries if e["name"] == name]
    if not match:
        raise ConfigError(f"unknown experiment {name!r}")
    entry = match[0]
    geom = datagen.geometry_from_dict(entry["geometry"])
    program = datagen.LoadProgram(geom, entry["stretches"], entry.get("grips", "clamped"))
    mesh = load_mesh(os.path.join(base, entry["mesh"]))
    scan = training.continuity_scan(model, mesh, program, int(cfg.get("substeps", 100)))
    _write(cfg, "scan.csv", training.scan_csv(scan))
    ratio = scan.jump_ratio
    print("max jump / mean increment: " + ("absent" if ratio is None else f"{ratio:.4f}"))
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "split": cmd_split,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "continuity-scan": cmd_continuity_scan,
}


# ---------------------------------------------------------------------------
# argument parsing


def _widths(text):
    try:
        return [int(v) for v in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError("widths must be comma-separated integers") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--output-dir", help="existing directory for all outputs")
    common.add_argument("--mode", choices=[m.value for m in KinematicMode], help="kinematic mode")
    common.add_argument("--lambda-r", type=float, help="reaction-term weight")
    common.add_argument("--threads", type=int, default=1, help="worker cap for per-step evaluation")
    common.add_argument("--deterministic", action="store_true", help="force sequential reduction")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", help="experiment manifest or the directory holding it")

    split = argparse.ArgumentParser(add_help=False)
    split.add_argument("--n-train", type=int, help="training steps")
    split.add_argument("--n-val", type=int, help="validation steps")
    split.add_argument("--source", help="experiment providing train/val steps")

    optim = argparse.ArgumentParser(add_help=False)
    optim.add_argument("--lr", type=float, help="Adam learning rate")
    optim.add_argument("--max-epochs", type=int, help="epoch budget")
    optim.add_argument("--patience", type=int, help="early-stopping patience")
    optim.add_argument("--seed", type=int, help="initialisation seed")

    model_in = argparse.ArgumentParser(add_help=False)
    model_in.add_argument("--model", dest="model_in", help="model JSON (default: <output-dir>/model.json)")

    parser = argparse.ArgumentParser(prog="pannid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="synthesise meshes and datasets")
    g.add_argument("--sigma-u", type=float, help="displacement noise std (mm)")
    g.add_argument("--sigma-r", type=float, help="reaction noise std (N)")
    g.add_argument("--noise-seed", type=int, help="noise seed")

    sub.add_parser("split", parents=[common, data, split], help="write the train/val/test split")

    t = sub.add_parser("train", parents=[common, data, split, optim], help="identify one model")
    t.add_argument("--kind", choices=["neo_hookean", "pann"], help="model class")
    t.add_argument("--widths", type=_widths, help="PANN hidden widths, e.g. 16,16")

    sub.add_parser("sweep", parents=[common, data, split, optim], help="architecture sweep")
    sub.add_parser("evaluate", parents=[common, data, split, model_in], help="test-set metrics")

    p = sub.add_parser("predict", parents=[common, model_in], help="energy and stress for an F list")
    p.add_argument("--input", help="CSV with columns F11..F33")
    p.add_argument("--output", help="output CSV (default predictions.csv in the output dir)")

    c = sub.add_parser("continuity-scan", parents=[common, data, model_in], help="fine reaction scan")
    c.add_argument("--substeps", type=int, help="number of scan samples (default 100)")
    c.add_argument("--experiment", help="experiment whose program is scanned")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = _load_config(args)
        return COMMANDS[args.command](args, cfg)
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, MeshError, DomainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
