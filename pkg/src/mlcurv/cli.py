"""Command-line driver: generation, preprocessing, training and evaluation runs.

Configuration is resolved as profile defaults < ``--config`` file < flags.
Every run writes its artifacts, a manifest (resolved config, input/output
SHA-256 hashes, versions) and appends structured JSONL log lines.
"""
import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from . import __version__, datagen, harness, kernels, preprocess
from .hybrid import Corrector, SolverParams
from .neuralnet import ArtifactMismatch, TrainConfig, init_model, load_model, save_model, train

log = logging.getLogger("mlcurv")

EXIT_OK, EXIT_CONFIG, EXIT_ARTIFACT, EXIT_NUMERIC = 0, 2, 3, 4
PROFILES = ("desk", "paper")
MANIFEST_VERSION = 1


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- configuration

def load_profile(name):
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; choose from {PROFILES}")
    text = resources.files("mlcurv").joinpath("profiles", f"{name}.toml").read_text()
    return tomllib.loads(text)


def merge_config(base, over):
    """Recursive table merge; values in ``over`` win."""
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge_config(out[k], v)
        else:
            out[k] = v
    return out


def _parse_value(text):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_sets(cfg, sets):
    """``section.key=value`` overrides; values use TOML syntax (bare words are strings)."""
    for s in sets or ():
        if "=" not in s:
            raise ConfigError(f"--set expects section.key=value, got {s!r}")
        path, val = s.split("=", 1)
        keys = path.strip().split(".")
        node = cfg
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{path}: {k} is not a table")
        node[keys[-1]] = _parse_value(val.strip())
    return cfg


def resolve_config(args):
    cfg = load_profile(args.profile)
    if args.config:
        try:
            with open(args.config, "rb") as f:
                cfg = merge_config(cfg, tomllib.load(f))
        except OSError as e:
            raise ConfigError(f"cannot read config file: {e}") from e
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{args.config}: {e}") from e
    cfg = apply_sets(cfg, args.set)
    for k in ("seed", "eta", "workers"):
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    cfg["profile"] = args.profile
    if cfg.get("workers") in (None, 0):
        cfg["workers"] = os.cpu_count() or 1
    return cfg


def build_params(cls, table, where):
    """Dataclass from a config table, rejecting unknown keys and wrong types."""
    table = dict(table or {})
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(table) - set(names))
    if unknown:
        raise ConfigError(f"[{where}] unknown keys {unknown}; allowed: {sorted(names)}")
    kw = {}
    for k, v in table.items():
        default = names[k].default
        if isinstance(default, bool):
            if not isinstance(v, bool):
                raise ConfigError(f"[{where}] {k} must be a boolean")
        elif isinstance(default, int) and not isinstance(default, bool):
            if not isinstance(v, int) or isinstance(v, bool):
                raise ConfigError(f"[{where}] {k} must be an integer")
        elif isinstance(default, float):
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ConfigError(f"[{where}] {k} must be a number")
            v = float(v)
        kw[k] = v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{where}] {e}") from e


def _table(cfg, *path):
    node = cfg
    for k in path:
        node = node.get(k, {}) if isinstance(node, dict) else {}
    return node if isinstance(node, dict) else {}


def _int(cfg, key):
    v = cfg.get(key)
    if not isinstance(v, int) or isinstance(v, bool):
        raise ConfigError(f"{key} must be an integer")
    return v


# ---------------------------------------------------------------- logging and manifests

class JsonlHandler(logging.Handler):
    def __init__(self, path, command):
        super().__init__()
        self.f = open(path, "a")
        self.command = command
        self.t0 = time.perf_counter()

    def emit(self, record):
        rec = {"t": round(time.perf_counter() - self.t0, 6), "level": record.levelname, "cmd": self.command,
               "logger": record.name, "msg": record.getMessage()}
        rec.update(getattr(record, "fields", {}))
        self.f.write(json.dumps(rec, sort_keys=True) + "\n")
        self.f.flush()

    def close(self):
        self.f.close()
        super().close()


def stage(name, t0, **fields):
    log.info("stage %s done in %.3f s", name, time.perf_counter() - t0,
             extra={"fields": {"stage": name, "seconds": time.perf_counter() - t0, **fields}})


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions():
    return {"mlcurv": __version__, "numpy": np.__version__, "python": sys.version.split()[0],
            "kernels": kernels.BACKEND}


def manifest_name(args):
    """One manifest per distinct run: class- or input-specific commands get a suffix."""
    if getattr(args, "cls", None):
        return f"{args.command}_{args.cls}"
    if args.command in ("split", "fit-preprocess"):
        return f"{args.command}_{Path(args.input).name.split('.')[0]}"
    if args.command == "eval-geometry":
        return f"{args.command}_{args.name}"
    if args.command == "infer":
        return f"{args.command}_{'dataset' if args.dataset else 'surface'}"
    return args.command


def write_manifest(out, name, command, argv, cfg, inputs, outputs):
    """Manifest next to the outputs; paths in argv are kept as given, so replay from the same directory."""
    man = {"manifest_version": MANIFEST_VERSION, "command": command, "argv": argv, "config": cfg,
           "seed": cfg.get("seed"), "versions": _versions(),
           "inputs": {str(p): sha256(p) for p in inputs},
           "outputs": {str(p): sha256(p) for p in outputs}}
    path = Path(out) / f"{name}.manifest.json"
    path.write_text(json.dumps(man, indent=1, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------- artifacts

def _require(path, what):
    p = Path(path)
    if not p.exists():
        raise ArtifactMismatch(f"missing {what}: {p}")
    return p


def _read_ds(path, cls=None):
    p = _require(path, "dataset")
    try:
        ds = datagen.read_dataset(p)
    except ValueError as e:
        raise ArtifactMismatch(str(e)) from e
    if cls is not None and ds.cls != cls:
        raise ArtifactMismatch(f"{p}: dataset class {ds.cls!r}, expected {cls!r}")
    return ds


def shipped_models_dir():
    return Path(str(resources.files("mlcurv").joinpath("models")))


def load_correctors(models_dir):
    """(ns, sd) correctors from model_<cls>.json + stats_<cls>.json; fingerprints checked."""
    d = Path(models_dir)
    out = []
    for cls in ("ns", "sd"):
        mp = _require(d / f"model_{cls}.json", f"{cls} model")
        try:
            model = load_model(mp)
        except (KeyError, ValueError) as e:
            raise ArtifactMismatch(f"{d / f'model_{cls}.json'}: {e}") from e
        sp = _require(d / f"stats_{cls}.json", f"{cls} stats")
        try:
            stats = preprocess.PreprocessStats.load(sp)
        except (KeyError, ValueError) as e:
            raise ArtifactMismatch(f"{d / f'stats_{cls}.json'}: {e}") from e
        if model.cls and model.cls != cls:
            raise ArtifactMismatch(f"{d / f'model_{cls}.json'} holds a {model.cls!r} model")
        out.append(Corrector(model, stats))
    return tuple(out)


def _models_arg(args):
    if getattr(args, "baseline_only", False):
        return None, []
    d = Path(args.models) if args.models else shipped_models_dir()
    files = [d / f"{k}_{c}.json" for k in ("model", "stats") for c in ("ns", "sd")]
    return load_correctors(d), files


# ---------------------------------------------------------------- subcommands

def cmd_gen_spheres(args, cfg, out):
    prm = build_params(datagen.SphereParams, _table(cfg, "spheres"), "spheres")
    ds = datagen.generate_spherical_dataset(_int(cfg, "eta"), prm, _int(cfg, "seed"), cfg["workers"])
    path = out / "spheres_ns.c3ds"
    datagen.write_dataset(ds, path)
    log.info("wrote %d spherical tuples", len(ds), extra={"fields": {"rows": len(ds)}})
    return [], [path, Path(str(path) + ".json")]


def cmd_gen_sinusoids(args, cfg, out):
    prm = build_params(datagen.SinusoidParams, _table(cfg, "sinusoids"), "sinusoids")
    ns, sd = datagen.generate_sinusoidal_datasets(_int(cfg, "eta"), prm, _int(cfg, "seed"), cfg["workers"])
    paths = []
    for ds, name in ((ns, "sinusoids_ns.c3ds"), (sd, "sinusoids_sd.c3ds")):
        datagen.write_dataset(ds, out / name)
        paths += [out / name, out / (name + ".json")]
        log.info("wrote %d %s tuples", len(ds), ds.cls, extra={"fields": {"rows": len(ds), "cls": ds.cls}})
    return [], paths


def cmd_gen_hyppar(args, cfg, out):
    prm = build_params(datagen.HypParaboloidParams, _table(cfg, "hyppar"), "hyppar")
    ds = datagen.generate_hyp_paraboloidal_dataset(_int(cfg, "eta"), prm, _int(cfg, "seed"), cfg["workers"])
    path = out / "hyppar_sd.c3ds"
    datagen.write_dataset(ds, path)
    log.info("wrote %d saddle tuples", len(ds), extra={"fields": {"rows": len(ds)}})
    return [], [path, Path(str(path) + ".json")]


def cmd_merge(args, cfg, out):
    sets = [_read_ds(p, args.cls) for p in args.inputs]
    fr = args.fractions if args.fractions else _table(cfg, "merge", args.cls).get("fractions")
    if fr is not None and len(fr) != len(sets):
        raise ConfigError(f"{len(fr)} fractions for {len(sets)} inputs")
    t = _table(cfg, "merge")
    rebalance = t.get("rebalance", True)
    if not isinstance(rebalance, bool):
        raise ConfigError("merge.rebalance must be a boolean")
    ds = datagen.merge_balanced(sets, args.cls, fr, _int(cfg, "seed"), int(t.get("nbins", 100)), rebalance)
    path = out / f"merged_{args.cls}.c3ds"
    datagen.write_dataset(ds, path)
    return [Path(p) for p in args.inputs], [path, Path(str(path) + ".json")]


def cmd_split(args, cfg, out):
    ds = _read_ds(args.input)
    t = _table(cfg, "split")
    groups = tuple(t.get("groups", (14, 3, 3)))
    parts = datagen.stratified_split(ds, _int(cfg, "seed"), int(t.get("n_folds", 20)), groups,
                                     int(t.get("nbins", 100)))
    paths = []
    for name, part in zip(("train", "test", "validation"), parts):
        p = out / f"{name}_{ds.cls}.c3ds"
        datagen.write_dataset(part, p)
        paths += [p, Path(str(p) + ".json")]
        log.info("%s subset: %d tuples", name, len(part), extra={"fields": {"subset": name, "rows": len(part)}})
    return [Path(args.input)], paths


def cmd_fit_preprocess(args, cfg, out):
    ds = _read_ds(args.input)
    if len(ds) < 2:
        raise ValueError(f"{args.input}: {len(ds)} tuples, cannot fit statistics")
    m = args.m_iota or _table(cfg, "preprocess").get(f"m_iota_{ds.cls}")
    if not isinstance(m, int):
        raise ConfigError(f"preprocess.m_iota_{ds.cls} must be an integer")
    X = preprocess.h_normalize(ds.features, ds.h)
    try:
        stats = preprocess.fit_stats(X, m, ds.h, ds.cls)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    path = out / f"stats_{ds.cls}.json"
    stats.save(path)
    if stats.constant.any():
        log.info("constant features %s", np.flatnonzero(stats.constant).tolist())
    return [Path(args.input)], [path]


def _prepared(ds, stats):
    r, hk = preprocess.apply(stats, ds.features.astype(np.float64), ds.h)
    return r.astype(np.float32), hk.astype(np.float32), ds.targets.astype(np.float32)


def cmd_train(args, cfg, out):
    tr = _read_ds(args.train, args.cls)
    va = _read_ds(args.validation, args.cls)
    sp = _require(args.stats, "preprocessing stats")
    stats = preprocess.PreprocessStats.load(sp)
    if stats.cls and stats.cls != args.cls:
        raise ArtifactMismatch(f"{sp} was fitted on {stats.cls!r} data")
    t = dict(_table(cfg, "train", args.cls))
    arch = {k: t.pop(k) for k in ("n_h", "l2", "eq16_literal") if k in t}
    tc = build_params(TrainConfig, {**t, "seed": _int(cfg, "seed")}, f"train.{args.cls}")
    model = init_model(stats.m_iota, int(arch.get("n_h", 140)), float(arch.get("l2", 0.0)), _int(cfg, "seed"),
                       args.cls, eq16_literal=bool(arch.get("eq16_literal", False)))
    model.stats_fingerprint = stats.fingerprint()

    def progress(epoch, rmse, vmae, lr):
        log.debug("epoch %d", epoch, extra={"fields": {"epoch": epoch, "train_rmse": rmse, "val_mae": vmae, "lr": lr}})

    best, hist = train(model, _prepared(tr, stats), _prepared(va, stats), tc, progress)
    mp, hp = out / f"model_{args.cls}.json", out / f"history_{args.cls}.json"
    save_model(best, mp)
    hp.write_text(json.dumps(hist, sort_keys=True) + "\n")
    log.info("trained %s: %d epochs, best validation MAE %.6g", args.cls, len(hist["val_mae"]),
             best.history["best_val_mae"], extra={"fields": dict(best.history)})
    return [Path(args.train), Path(args.validation), sp], [mp, hp]


def _emit(rep, out, stem):
    paths = []
    for fmt, suffix in (("csv", "_summary.csv"), ("jsonl", "_records.jsonl"), ("plotdata", "_plot.json")):
        p = out / (stem + suffix)
        harness.emit_report(rep, p, fmt)
        paths.append(p)
    s = rep.summary()
    log.info("%s: baseline MAE %.4e, hybrid MAE %.4e, factor %.3f", rep.name, s["baseline"]["mae_hk"],
             s["hybrid"]["mae_hk"], s["improvement"]["mae_hk"],
             extra={"fields": {"report": rep.name, "improvement": s["improvement"], "timing": rep.timing}})
    return paths


def cmd_eval_geometry(args, cfg, out):
    models, mfiles = _models_arg(args)
    t = _table(cfg, "eval")
    eta = _int(cfg, "eta")
    steps = args.steps if args.steps else None
    res = harness.run_geometry_test(args.name, eta, models, _int(cfg, "seed"), nu=int(t.get("nu", 10)),
                                    eps_rnd=float(t.get("eps_rnd", 1e-4)), steps=steps, workers=cfg["workers"])
    paths = []
    if isinstance(res, list):
        for r in res:
            paths += _emit(r, out, r.name)
        rows = [{"step": r.meta["step"], "n": len(r), **{f"baseline_{k}": v for k, v in r.baseline.items() if k != "n"},
                 **{f"hybrid_{k}": v for k, v in r.hybrid.items() if k != "n"}} for r in res]
        p = out / "morph_steps.csv"
        harness._write_csv(p, list(rows[0].keys()), rows)
        paths.append(p)
    else:
        paths += _emit(res, out, args.name)
    return mfiles, paths


def cmd_convergence1(args, cfg, out):
    models, mfiles = _models_arg(args)
    t = _table(cfg, "convergence1")
    res = harness.run_convergence_case1(float(t.get("R", 2.0 / 64)), tuple(t.get("ratios", (2, 4, 8, 16, 32))),
                                        int(t.get("trials", 100)), models, _int(cfg, "seed"),
                                        nu=int(t.get("nu", 10)), eps_rnd=float(t.get("eps_rnd", 1e-4)),
                                        workers=cfg["workers"])
    paths = [out / "convergence1.csv", out / "convergence1.jsonl"]
    harness.emit_report(res, paths[0], "csv")
    harness.emit_report(res, paths[1], "jsonl")
    return mfiles, paths


def cmd_convergence2(args, cfg, out):
    models, mfiles = _models_arg(args)
    t = _table(cfg, "convergence2")
    res = harness.run_convergence_case2(tuple(t.get("cells", (19, 38, 76, 152))), models,
                                        float(t.get("radius", 0.2222)), int(t.get("nu", 80)))
    paths = [out / "convergence2.csv", out / "convergence2.jsonl"]
    harness.emit_report(res, paths[0], "csv")
    harness.emit_report(res, paths[1], "jsonl")
    return mfiles, paths


def _surface_from_spec(spec, h):
    kind = spec.get("kind")
    pad = harness._pad(h)
    if kind == "sphere":
        return harness.Sphere(float(spec["radius"]), spec.get("center", (0.0, 0.0, 0.0)), pad=pad)
    if kind == "ellipsoid":
        return harness.Ellipsoid(*[float(a) for a in spec["axes"]], pad=pad)
    raise ConfigError(f"infer supports sphere and ellipsoid surfaces, not {kind!r}")


def cmd_infer(args, cfg, out):
    models, mfiles = _models_arg(args)
    params = SolverParams()
    if args.dataset:
        ds = _read_ds(args.dataset)
        if models is None:
            pred = ds.features[:, 108].astype(np.float64)
        else:
            pred = models[0 if ds.cls == "ns" else 1].predict(ds.features, ds.h)
        path = out / "infer_dataset.jsonl"
        with open(path, "w") as f:
            for i in range(len(ds)):
                f.write(json.dumps({"row": i, "hk": float(ds.features[i, 108]), "hk_F": float(pred[i]),
                                    "target": float(ds.targets[i])}) + "\n")
        return [Path(args.dataset)] + mfiles, [path]
    try:
        with open(args.surface, "rb") as f:
            spec = tomllib.load(f)
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot read surface spec: {e}") from e
    eta = int(spec.get("eta", _int(cfg, "eta")))
    h = 2.0 ** -eta
    surf = _surface_from_spec(spec, h)
    rng = datagen.derived_rng(_int(cfg, "seed"), 5)
    grid, phi = harness.prepare_field(surf, h, int(spec.get("nu", 10)), float(spec.get("eps_rnd", 1e-4)), rng)
    rep = harness.evaluate_interface("infer", grid, phi, surf, models, params)
    path = out / "infer_surface.jsonl"
    harness.emit_report(rep, path, "jsonl")
    return [Path(args.surface)] + mfiles, [path]


COMMANDS = {
    "gen-spheres": cmd_gen_spheres, "gen-sinusoids": cmd_gen_sinusoids, "gen-hyppar": cmd_gen_hyppar,
    "merge": cmd_merge, "split": cmd_split, "fit-preprocess": cmd_fit_preprocess, "train": cmd_train,
    "eval-geometry": cmd_eval_geometry, "convergence1": cmd_convergence1, "convergence2": cmd_convergence2,
    "infer": cmd_infer,
}


# ---------------------------------------------------------------- parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--profile", default="desk", choices=PROFILES, help="parameter profile (default desk)")
    common.add_argument("--config", help="TOML file overriding the profile")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config value")
    common.add_argument("--seed", type=int, help="global seed")
    common.add_argument("--eta", type=int, help="grid resolution exponent, h = 2^-eta")
    common.add_argument("--workers", type=int, help="worker processes (default: available cores)")
    common.add_argument("--out", default=".", help="output directory (default: current directory)")
    common.add_argument("--log", help="JSONL log file (default: <out>/mlcurv.log.jsonl)")
    common.add_argument("-v", "--verbose", action="store_true", help="also log per-epoch training lines")

    p = argparse.ArgumentParser(prog="mlcurv", description="Neural error correction for level-set mean curvature.")
    p.add_argument("--version", action="version", version=f"mlcurv {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("gen-spheres", "gen-sinusoids", "gen-hyppar"):
        sub.add_parser(name, parents=[common], help=f"generate the {name[4:]} dataset")
    s = sub.add_parser("merge", parents=[common], help="merge same-class datasets with source fractions")
    s.add_argument("--class", dest="cls", required=True, choices=("ns", "sd"))
    s.add_argument("--fractions", type=float, nargs="+")
    s.add_argument("inputs", nargs="+")
    s = sub.add_parser("split", parents=[common], help="stratified train/test/validation split")
    s.add_argument("input")
    s = sub.add_parser("fit-preprocess", parents=[common], help="fit standardize/PCA/whiten statistics")
    s.add_argument("input")
    s.add_argument("--m-iota", type=int, dest="m_iota")
    s = sub.add_parser("train", parents=[common], help="train one error-correcting network")
    s.add_argument("--class", dest="cls", required=True, choices=("ns", "sd"))
    s.add_argument("--train", required=True)
    s.add_argument("--validation", required=True)
    s.add_argument("--stats", required=True)
    for name, helptext in (("eval-geometry", "geometric test"), ("convergence1", "shifted-sphere convergence"),
                           ("convergence2", "uniform-grid convergence"), ("infer", "hybrid curvature inference")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--models", help="directory with model_/stats_ ns/sd JSON files (default: shipped)")
        s.add_argument("--baseline-only", action="store_true", help="skip the networks")
        if name == "eval-geometry":
            s.add_argument("name", choices=harness.GEOMETRIES)
            s.add_argument("--steps", type=int, nargs="+", help="morph steps to run (default: all)")
        if name == "infer":
            g = s.add_mutually_exclusive_group(required=True)
            g.add_argument("--dataset")
            g.add_argument("--surface", help="TOML surface spec: kind, radius/axes, eta, nu, eps_rnd")
    s = sub.add_parser("replay", help="rerun a manifest and compare output hashes")
    s.add_argument("manifest")
    s.add_argument("--out", help="output directory for the rerun (default: the original)")
    return p


def run(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else EXIT_OK
    if args.command == "replay":
        return replay(args.manifest, args.out)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    handler = JsonlHandler(args.log or out / "mlcurv.log.jsonl", args.command)
    root = logging.getLogger("mlcurv")
    root.setLevel(logging.DEBUG if args.verbose else logging.INFO)
    root.addHandler(handler)
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.INFO)
    console.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root.addHandler(console)
    try:
        cfg = resolve_config(args)
        t0 = time.perf_counter()
        inputs, outputs = COMMANDS[args.command](args, cfg, out)
        stage(args.command, t0)
        man = write_manifest(out, manifest_name(args), args.command, list(argv), cfg, inputs, outputs)
        log.info("manifest %s", man)
        return EXIT_OK
    except ConfigError as e:
        log.error("config error: %s", e)
        return EXIT_CONFIG
    except ArtifactMismatch as e:
        log.error("artifact mismatch: %s", e)
        return EXIT_ARTIFACT
    except (FloatingPointError, ArithmeticError, datagen.BalanceError) as e:
        log.error("numerical failure: %s", e)
        return EXIT_NUMERIC
    except ValueError as e:
        # degenerate data reaching a module (empty subsets, no usable nodes)
        log.error("numerical failure: %s", e)
        return EXIT_NUMERIC
    finally:
        root.removeHandler(handler)
        root.removeHandler(console)
        handler.close()


def replay(manifest, out=None):
    """Rerun the command of a manifest (optionally into another directory) and verify hashes."""
    try:
        man = json.loads(Path(manifest).read_text())
        argv = list(man["argv"])
        recorded = man["outputs"]
    except (OSError, ValueError, KeyError) as e:
        print(f"cannot read manifest: {e}", file=sys.stderr)
        return EXIT_ARTIFACT
    for p, digest in man.get("inputs", {}).items():
        if not Path(p).exists() or sha256(p) != digest:
            print(f"input changed or missing: {p}", file=sys.stderr)
            return EXIT_ARTIFACT
    orig_out = _argv_out(argv)
    if out is not None:
        argv = _with_out(argv, out)
    # freeze the resolved configuration so profile edits cannot change the replay
    cfg_path = Path(out or orig_out) / f".{Path(manifest).name.split('.')[0]}.replay.toml"
    cfg_path.parent.mkdir(parents=True, exist_ok=True)
    cfg_path.write_text(_to_toml(man["config"]))
    code = run(_strip_config(argv) + ["--config", str(cfg_path)])
    if code != EXIT_OK:
        return code
    bad = []
    for p, digest in recorded.items():
        q = Path(out) / Path(p).relative_to(orig_out) if out is not None else Path(p)
        if not q.exists() or sha256(q) != digest:
            bad.append(str(q))
    if bad:
        print("replay differs: " + ", ".join(bad), file=sys.stderr)
        return EXIT_ARTIFACT
    print(f"replay identical: {len(recorded)} outputs")
    return EXIT_OK


def _argv_out(argv):
    for i, a in enumerate(argv):
        if a == "--out":
            return argv[i + 1]
        if a.startswith("--out="):
            return a.split("=", 1)[1]
    return "."


def _with_out(argv, out):
    res, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        if a == "--out":
            skip = True
            continue
        if a.startswith("--out="):
            continue
        res.append(a)
    return res + ["--out", str(out)]


def _strip_config(argv):
    res, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        if a in ("--config", "--set"):
            skip = True
            continue
        if a.startswith("--config=") or a.startswith("--set="):
            continue
        res.append(a)
    return res


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot store {type(v).__name__} in a config file")


def _to_toml(cfg, prefix=""):
    lines, tables = [], []
    for k, v in cfg.items():
        if isinstance(v, dict):
            tables.append((k, v))
        elif v is not None:
            lines.append(f"{k} = {_toml_value(v)}")
    text = "\n".join(lines) + ("\n" if lines else "")
    for k, v in tables:
        name = f"{prefix}{k}"
        text += f"\n[{name}]\n" + _to_toml(v, name + ".")
    return text


def main(argv=None):
    sys.exit(run(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
