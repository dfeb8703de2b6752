"""Command-line entry point: gen, pretrain, finetune, eval, ablate.

Exit codes: 0 success, 2 configuration error, 3 data / I/O error,
4 numeric or divergence error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ABLATION_AXES, ExperimentConfig, load_config, output_root
from .errors import ConfigurationError, DataError, NumericError, SimperError
from .evaluation import append_results_csv, compute_metrics, encode_dataset, export_features
from .experiments import DataBundle, evaluate_checkpoint, prepare_data, run_method
from .synthdata import DatasetManifest, load_arrays
from .train import Checkpoint, predict_supervised, pretrain_instance_discrimination, pretrain_simper, train_supervised

log = logging.getLogger("simper")

SMOKE = [
    "data.n=40",
    "data.test_fraction=0.5",
    "train.epochs=3",
    "train.decay_epochs=2",
    "train.batch_size=4",
    "train.finetune_epochs=3",
    "train.finetune_decay_epochs=2",
    "augment.num_views=4",
]


# ------------------------------------------------------------------ helpers


def _load(args) -> ExperimentConfig:
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "smoke", False):
        overrides = SMOKE + overrides
    cfg = load_config(getattr(args, "config", None), overrides)
    return cfg


def _out_dir(cfg: ExperimentConfig, args, default: str) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    if cfg.experiment.output_dir:
        return Path(cfg.experiment.output_dir)
    return output_root() / cfg.experiment.name / default


def _bundle_from_dir(data_dir: Path) -> DataBundle:
    paths = {k: data_dir / f"{k}.json" for k in ("pool", "train", "test", "labelled")}
    for k in ("train", "test"):
        if not paths[k].is_file():
            raise DataError(f"dataset manifest not found: {paths[k]} (run `gen` first)")
    train = DatasetManifest.load(paths["train"], verify=True)
    test = DatasetManifest.load(paths["test"], verify=True)
    labelled = DatasetManifest.load(paths["labelled"]) if paths["labelled"].is_file() else train
    pool = DatasetManifest.load(paths["pool"]) if paths["pool"].is_file() else train
    return DataBundle(pool, train, test, labelled)


def _provenance(cfg: ExperimentConfig, seed: int, bundle: DataBundle, extra: dict | None = None) -> dict:
    rec = {
        "config_hash": cfg.config_hash(),
        "seed": seed,
        "config": cfg.to_dict(),
        "train_manifest_sha256": bundle.train.checksum(),
        "test_manifest_sha256": bundle.test.checksum(),
    }
    rec.update(extra or {})
    return rec


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=list) + "\n", encoding="utf-8")
    return path


def _seed(cfg: ExperimentConfig, args) -> int:
    return int(args.seed) if getattr(args, "seed", None) is not None else int(cfg.experiment.seeds[0])


# ------------------------------------------------------------------ commands


def cmd_gen(args) -> int:
    if args.preset:
        args.set = (args.set or []) + [f"data.preset={args.preset}"]
    for key, val in (("n", args.n), ("seed", args.seed), ("split", args.split), ("band", args.band), ("fraction", args.fraction)):
        if val is not None:
            args.set = (args.set or []) + [f"data.{key}={val}"]
    cfg = _load(args).validate()
    out = _out_dir(cfg, args, "data")
    bundle = prepare_data(cfg, out)
    for name, m in (("pool", bundle.pool), ("train", bundle.train), ("test", bundle.test)):
        print(f"{name}: {len(m)} samples  sha256={m.checksum()}")
    print(f"checksum={bundle.pool.checksum()}")
    print(f"dataset written to {out}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _load(args)
    cfg.experiment.method = args.method
    cfg.validate()
    seed = _seed(cfg, args)
    out = _out_dir(cfg, args, f"{args.method}-seed{seed}")
    bundle = _bundle_from_dir(Path(args.data)) if args.data else prepare_data(cfg, out / "data")
    tcfg = cfg.train_config(seed)
    t0 = time.perf_counter()
    fn = pretrain_simper if args.method == "simper" else pretrain_instance_discrimination
    result = fn(bundle.train, tcfg, log=lambda e, l, lr: log.info("epoch %d loss %.5f lr %g", e, l, lr))
    result.checkpoint.meta["config_hash"] = cfg.config_hash()
    result.checkpoint.save(out / "checkpoint")
    result.write_loss_csv(out / "loss.csv")
    _write_json(out / "provenance.json", _provenance(cfg, seed, bundle, {"method": args.method, "wall_seconds": round(time.perf_counter() - t0, 3)}))
    print(f"checkpoint written to {out / 'checkpoint'}  final loss {result.losses[-1]:.5f}")
    return 0


def _load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not (path / "manifest.txt").is_file():
        raise DataError(f"checkpoint not found: {path}")
    return Checkpoint.load(path)


def cmd_eval(args) -> int:
    cfg = _load(args).validate()
    ckpt = _load_checkpoint(args.checkpoint)
    bundle = _bundle_from_dir(Path(args.data))
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "eval"
    h = cfg.config_hash()
    protocols = [args.protocol] if args.protocol else list(cfg.eval.protocols)
    if ckpt.head and "head" in protocols:
        protocols.remove("head")
    reports, _ = evaluate_checkpoint(ckpt, bundle, cfg, protocols, config_hash=h)
    for proto, rep in reports.items():
        rep.extra["checkpoint"] = str(args.checkpoint)
        rep.save(out / f"report-{proto}.txt")
        append_results_csv(out / "results.csv", {"experiment": cfg.experiment.name, "protocol": proto, "seed": ckpt.meta.get("seed", ""), "config_hash": h, **_row(rep)})
        print(f"{proto}: mae={rep.mae:.4f} mape={rep.mape:.2f}% gm={rep.gm:.4f} rho={rep.pearson_rho:.4f} degenerate={rep.degenerate}")
    if args.export_features:
        x, y = load_arrays(bundle.test)
        z = encode_dataset(x, ckpt.tensors(requires_grad=False), ckpt.encoder)
        p = export_features([e.id for e in bundle.test.entries], y, z, out / "features.csv")
        print(f"features written to {p}")
    return 0


def cmd_finetune(args) -> int:
    cfg = _load(args).validate()
    seed = _seed(cfg, args)
    init = None if args.init in (None, "none") else _load_checkpoint(args.init)
    out = _out_dir(cfg, args, f"finetune-seed{seed}")
    bundle = _bundle_from_dir(Path(args.data)) if args.data else prepare_data(cfg, out / "data")
    result = train_supervised(bundle.labelled, cfg.supervised_config(seed), init=init, freeze_encoder=args.freeze_encoder)
    h = cfg.config_hash()
    result.checkpoint.meta["config_hash"] = h
    result.checkpoint.save(out / "checkpoint")
    result.write_loss_csv(out / "loss.csv")
    x, y = load_arrays(bundle.test)
    rep = compute_metrics(y, predict_supervised(result.checkpoint, x, clip_len=cfg.data.num_frames), "head", h)
    rep.save(out / "report-head.txt")
    append_results_csv(out / "results.csv", {"experiment": cfg.experiment.name, "protocol": "head", "seed": seed, "config_hash": h, **_row(rep)})
    _write_json(out / "provenance.json", _provenance(cfg, seed, bundle, {"method": "finetune" if init else "supervised", "init": str(args.init)}))
    print(f"head: mae={rep.mae:.4f} mape={rep.mape:.2f}% gm={rep.gm:.4f} rho={rep.pearson_rho:.4f}")
    return 0


def _row(rep) -> dict:
    return {"mae": repr(rep.mae), "mape": repr(rep.mape), "gm": repr(rep.gm), "pearson_rho": repr(rep.pearson_rho), "n": rep.n, "degenerate": rep.degenerate, "status": "ok"}


def _apply_axis(cfg: ExperimentConfig, axis: str, value: str) -> ExperimentConfig:
    c = cfg.copy()
    if axis == "speed_range":
        lo, hi = value.split(":")
        c.set("augment", "s_min", lo)
        c.set("augment", "s_max", hi)
    elif axis == "num_views":
        c.set("augment", "num_views", value)
    elif axis == "similarity":
        c.set("similarity", "kind", value)
    elif axis == "loss_mode":
        c.set("loss", "mode", value)
    elif axis == "data_fraction":
        c.set("data", "fraction", value)
    elif axis == "label_fraction":
        c.set("data", "label_fraction", value)
        c.experiment.method = "finetune"
    return c


def _grid_point(payload):
    cfg, axis, value, seed, root = payload
    rows = []
    try:
        c = _apply_axis(cfg, axis, value).validate()
        bundle = prepare_data(c, Path(root) / f"data-{axis}-{value}".replace(":", "_"))
        outcome = run_method(c, bundle, seed, c.experiment.method)
        for proto, rep in outcome.reports.items():
            rows.append({"protocol": proto, "config_hash": c.config_hash(), **_row(rep)})
    except SimperError as exc:
        rows.append({"protocol": "-", "config_hash": "", "status": f"error:{type(exc).__name__}:{exc}".replace(",", ";")})
    return [{"experiment": cfg.experiment.name, "value": value, "seed": seed, **r} for r in rows]


def cmd_ablate(args) -> int:
    cfg = _load(args)
    axis = args.axis or cfg.ablate.axis
    values = tuple(args.values.split(",")) if args.values else cfg.ablate.values
    if axis not in ABLATION_AXES:
        raise ConfigurationError(f"ablation axis must be one of {', '.join(ABLATION_AXES)}")
    if not values:
        raise ConfigurationError("no ablation values given")
    cfg.validate()
    # every grid point must be valid before the first one runs
    for v in values:
        _apply_axis(cfg, axis, v).validate()
    out = _out_dir(cfg, args, f"ablate-{axis}")
    grid = [(cfg, axis, v, s, str(out)) for v in values for s in cfg.experiment.seeds]
    if args.parallel or cfg.ablate.parallel:
        with ProcessPoolExecutor() as pool:
            results = list(pool.map(_grid_point, grid))
    else:
        results = [_grid_point(g) for g in grid]
    path = out / "results.csv"
    n = 0
    for rows in results:
        for r in rows:
            append_results_csv(path, r)
            n += 1
    print(f"{n} rows appended to {path}")
    return 0


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="simper", description="Periodic self-supervised learning on synthetic videos.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="sectioned key/value config file")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config key (repeatable)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--smoke", action="store_true", help="tiny preset for plumbing checks")

    g = sub.add_parser("gen", help="generate a dataset and its train/test split")
    common(g)
    g.add_argument("--preset", choices=["rotating", "sine1d"])
    g.add_argument("--n", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--split", choices=["uniform", "interpolation", "extrapolation", "spurious", "subsample"])
    g.add_argument("--band", help="low:high in Hz for gap splits")
    g.add_argument("--fraction", type=float)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("pretrain", help="self-supervised pretraining")
    common(t)
    t.add_argument("--method", choices=["simper", "infonce_baseline"], default="simper")
    t.add_argument("--data", help="dataset directory written by gen (generated on the fly if omitted)")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_pretrain)

    f = sub.add_parser("finetune", help="supervised training, optionally from a checkpoint")
    common(f)
    f.add_argument("--init", default="none", help="checkpoint directory or 'none'")
    f.add_argument("--data")
    f.add_argument("--seed", type=int)
    f.add_argument("--freeze-encoder", action="store_true")
    f.set_defaults(func=cmd_finetune)

    e = sub.add_parser("eval", help="evaluate a checkpoint's features")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--protocol", choices=["fft", "knn"])
    e.add_argument("--export-features", action="store_true")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="sweep one axis over values and seeds")
    common(a)
    a.add_argument("--axis", choices=ABLATION_AXES)
    a.add_argument("--values", help="comma-separated values (speed ranges as low:high)")
    a.add_argument("--parallel", action="store_true")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return int(args.func(args) or 0)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
