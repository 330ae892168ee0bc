"""Command line entry points.

Exit codes: 0 success, 1 runtime failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, dataio, diagnostics, metrics, synthetic
from .config import RunConfig
from .model import ReModel, TrainingError, train
from .nn import checkpoint
from .nn.layers import ConfigError

log = logging.getLogger("revib")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def _seed(args, fallback: int) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    env = os.environ.get("REVIB_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"REVIB_SEED must be an integer, got {env!r}") from None
    return int(fallback)


def _load_config(path) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    if not Path(path).is_file():
        raise UsageError(f"config file not found: {path}")
    return RunConfig.load(path).validate()


def _need_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


def _load_model(ckpt_path) -> tuple[ReModel, RunConfig, dict]:
    _need_file(ckpt_path, "checkpoint")
    header, tensors = checkpoint.read(ckpt_path)
    cfg = RunConfig.from_dict(header["meta"]["config"]).validate()
    model = ReModel(cfg.model, seed=header["seed"])
    model.store.load_state(tensors)
    return model, cfg, header


def _split_samples(data_path, cfg: RunConfig, which: str) -> list[dataio.Sample]:
    samples, _, _ = dataio.load_cache(_need_file(data_path, "sample cache"))
    if which == "all":
        return samples
    tr, va, te = dataio.split(samples, cfg.data.split, cfg.train.seed)
    return {"train": tr, "val": va, "test": te}[which]


def _select(samples, spec: str | None):
    if not spec:
        return samples
    lo, _, hi = spec.partition(":")
    if not _:
        return [samples[int(lo)]]
    return samples[int(lo) if lo else None:int(hi) if hi else None]


def _sample_id(s: dataio.Sample) -> str:
    return f"{s.scene}/{s.ego_id}/{s.start_frame}"


def _apply_baseline(cfg: RunConfig, baseline: str) -> None:
    if baseline == "linear":
        cfg.model.use_self = cfg.model.use_re = False


def _apply_ablation(cfg: RunConfig, args) -> None:
    if getattr(args, "no_self", False):
        cfg.model.use_self = False
    if getattr(args, "no_re", False):
        cfg.model.use_re = False
    if getattr(args, "no_linear", False):
        cfg.model.use_linear = False


# ---------------------------------------------------------------- commands


def cmd_prepare(args) -> int:
    cfg = _load_config(args.config)
    seed = _seed(args, cfg.train.seed)
    scenes: list[dataio.Scene] = []
    if args.synthetic:
        kinds = args.synthetic.split(",")
        try:
            scenes = synthetic.generate_mixed(kinds, args.n_scenes, seed, t_h=cfg.data.t_h,
                                              t_f=cfg.data.t_f, dt=cfg.data.frame_interval)
        except dataio.DataConfigError as exc:
            raise UsageError(str(exc)) from None
    for inp in args.input or []:
        p = Path(inp)
        files = sorted(p.glob("*.txt")) if p.is_dir() else [p]
        if not p.exists():
            raise UsageError(f"input not found: {inp}")
        if not files:
            raise UsageError(f"no .txt scene files in {inp}")
        for f in files:
            try:
                scenes.append(dataio.load_scene(f, cfg.data.frame_interval))
            except (dataio.SceneParseError, dataio.EmptySceneError) as exc:
                raise UsageError(str(exc)) from None
    if not scenes:
        raise UsageError("nothing to prepare: give --input files/directories or --synthetic")
    report = dataio.SkipReport()
    samples = [s for sc in scenes for s in dataio.make_samples(sc, cfg.data, report)]
    meta = {"scenes": len(scenes), "skips": report.as_dict(),
            "source": args.synthetic or "files", "seed": seed if args.synthetic else None}
    digest = dataio.save_cache(samples, cfg.data, args.out, meta)
    summary = {"samples": len(samples), "scenes": len(scenes), "sha256": digest,
               "skips": report.as_dict()}
    Path(str(args.out) + ".report.json").write_text(json.dumps(summary, indent=2, sort_keys=True)
                                                    + "\n")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    cfg.train.seed = _seed(args, cfg.train.seed)
    _apply_ablation(cfg, args)
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    train_set = _split_samples(args.data, cfg, "train")
    run = Path(args.run_dir)
    run.mkdir(parents=True, exist_ok=True)
    model = ReModel(cfg.model, seed=cfg.train.seed)
    result = train(model, train_set, cfg.train,
                   progress=lambda e, l: log.info("epoch %d/%d loss %.6f", e, cfg.train.epochs, l))
    ckpt = run / "checkpoint.bin"
    checkpoint.save(model.store, ckpt, {"config": cfg.to_dict()})
    manifest = {"config": cfg.to_dict(), "seed": cfg.train.seed,
                "dataset_sha256": dataio.file_sha256(args.data), "train_samples": len(train_set),
                "init_loss": result.init_loss, "loss_curve": result.curve, "steps": result.steps,
                "checkpoint": ckpt.name, "checkpoint_sha256": dataio.file_sha256(ckpt),
                "n_parameters": model.store.n_values(), "revib_version": __version__}
    (run / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    with open(run / "loss_curve.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        w.writerow([0, repr(result.init_loss)])
        for i, v in enumerate(result.curve, start=1):
            w.writerow([i, repr(v)])
    print(json.dumps({"checkpoint": str(ckpt), "init_loss": result.init_loss,
                      "final_loss": result.curve[-1] if result.curve else None}))
    return EXIT_OK


def cmd_eval(args) -> int:
    model, cfg, _ = _load_model(args.checkpoint)
    # cfg.model is the model's own config object, so flags act on the loaded model
    _apply_baseline(cfg, args.baseline)
    _apply_ablation(cfg, args)
    samples = _split_samples(args.data, cfg, args.split)
    if not samples:
        raise UsageError(f"split {args.split!r} is empty")
    K = args.K if args.K is not None else (1 if args.baseline == "linear" else cfg.train.k_eval)
    seed = _seed(args, cfg.train.seed)
    preds = model.predict_arrays(samples, K, seed=seed)["total"]
    rep = metrics.report(np.stack([s.ego_future for s in samples]), preds,
                         [_sample_id(s) for s in samples])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rep.write_json(out / "metrics.json", {"split": args.split, "seed": seed,
                                          "baseline": args.baseline})
    rep.write_csv(out / "per_sample.csv")
    print(json.dumps(rep.summary(), sort_keys=True))
    return EXIT_OK


def cmd_predict(args) -> int:
    model, cfg, _ = _load_model(args.checkpoint)
    samples = _select(_split_samples(args.data, cfg, args.split), args.samples)
    K = args.K if args.K is not None else cfg.train.k_eval
    arr = model.predict_arrays(samples, K, seed=_seed(args, cfg.train.seed))
    t_h = cfg.data.t_h
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "k", "step", "x", "y", "base_x", "base_y", "self_x", "self_y",
                    "re_x", "re_y"])
        for b, s in enumerate(samples):
            for k in range(K):
                for t in range(cfg.data.t_f):
                    row = [arr[n][b, k, t] for n in ("total", "base", "self", "re")]
                    w.writerow([_sample_id(s), k, t_h + t + 1]
                               + [repr(float(v)) for pair in row for v in pair])
    print(json.dumps({"rows": len(samples) * K * cfg.data.t_f, "out": str(args.out)}))
    return EXIT_OK


def cmd_diagnose(args) -> int:
    model, cfg, _ = _load_model(args.checkpoint)
    samples = _select(_split_samples(args.data, cfg, args.split), args.samples)
    if not samples:
        raise UsageError("no samples selected")
    seed = _seed(args, cfg.train.seed)
    K = args.K if args.K is not None else cfg.train.k_eval
    out = Path(args.out)
    what = args.what
    if what == "energy":
        arr = model.predict_arrays(samples, K, seed=seed)
        origin = np.stack([s.ego_obs[-1] for s in samples])[:, None, None, :]
        shares = diagnostics.bias_energy_shares(arr["base"], arr["self"], arr["re"],
                                                origin if args.relative else None)
        with open(out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["term", "share_percent"])
            for k, v in shares.items():
                w.writerow([k, repr(v)])
        print(json.dumps(shares, sort_keys=True))
    elif what == "angles":
        arr = model.predict_arrays(samples, K, seed=seed)
        ang = diagnostics.vibration_angles(arr["self"], arr["re"])
        with open(out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "theta_s", "theta_r"])
            for s, (a, b) in zip(samples, ang):
                w.writerow([_sample_id(s), repr(float(a)), repr(float(b))])
        print(json.dumps({"rows": len(samples), "mean_sum": float(np.nanmean(ang.sum(axis=1)))}))
    elif what == "grid":
        s = samples[0]
        v = s.ego_obs[-1] - s.ego_obs[-2]
        heading = np.arctan2(v[1], v[0]) + np.deg2rad(args.manual_heading)
        manual = diagnostics.walking_manual(heading, args.manual_speed * cfg.data.frame_interval,
                                            cfg.data.t_h)
        grid = diagnostics.GridSpec.around(s.ego_obs[-1], args.half_width, args.resolution)
        g = diagnostics.social_modification_grid(model, s, manual, grid, K=args.grid_k, seed=seed)
        g.write_csv(out)
        print(json.dumps({"cells": len(g.values), "max_c": float(g.values.max())}))
    elif what in ("pca", "contrib"):
        rows = []
        for s in samples:
            F, counts, feats = diagnostics.resonance_rows(model, s)
            if what == "pca":
                rows.extend((_sample_id(s), j, f) for j, f in zip(s.neighbor_ids, feats))
            else:
                w_res, w_pos = diagnostics.first_layer_blocks(model)
                half = cfg.model.d // 2
                e_r, e_p = diagnostics.contribution_split(w_res, w_pos, F[:, :half], F[:, half:])
                rows.extend((_sample_id(s), n, int(counts[n]), e_r[n], e_p[n])
                            for n in range(len(counts)))
        with open(out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            if what == "pca":
                if len(rows) < 2:
                    raise UsageError("PCA needs at least two neighbor features")
                proj, ratio = diagnostics.feature_pca(np.stack([r[2] for r in rows]))
                w.writerow(["sample_id", "neighbor_id", "pc1", "pc2"])
                for (sid, j, _), (a, b) in zip(rows, proj):
                    w.writerow([sid, j, repr(float(a)), repr(float(b))])
                print(json.dumps({"rows": len(rows), "explained": ratio.tolist()}))
            else:
                w.writerow(["sample_id", "partition", "count", "resonance_energy",
                            "position_energy"])
                for sid, n, c, a, b in rows:
                    w.writerow([sid, n, c, repr(float(a)), repr(float(b))])
                print(json.dumps({"rows": len(rows)}))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="revib", description="Vibration-decomposed trajectory "
                                "forecasting: linear base + self-bias + re-bias.")
    p.add_argument("--version", action="version", version=f"revib {__version__}")
    p.add_argument("--dump-config", action="store_true",
                   help="print the full default configuration as JSON and exit")
    p.add_argument("--threads", type=int, default=1,
                   help="BLAS threads; 1 (default) gives bit-stable outputs")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command")

    def common(sp, seed=True):
        sp.add_argument("--config", help="run configuration JSON")
        if seed:
            sp.add_argument("--seed", type=int, help="overrides REVIB_SEED and the config seed")

    def ablations(sp):
        sp.add_argument("--no-self", action="store_true", help="zero the self-bias term")
        sp.add_argument("--no-re", action="store_true", help="zero the re-bias term")
        sp.add_argument("--no-linear", action="store_true", help="zero the linear base term")

    sp = sub.add_parser("prepare", help="window scene files (or synthetic scenes) into a sample cache")
    common(sp)
    sp.add_argument("--input", nargs="*", help="scene .txt files or directories of them")
    sp.add_argument("--synthetic", help=f"comma-separated kinds from {synthetic.KINDS}")
    sp.add_argument("--n-scenes", type=int, default=200, help="scenes per synthetic kind")
    sp.add_argument("--out", required=True, help="sample cache path")
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("train", help="train a model and write checkpoint + manifest")
    common(sp)
    ablations(sp)
    sp.add_argument("--data", required=True, help="sample cache from `prepare`")
    sp.add_argument("--run-dir", required=True)
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(func=cmd_train)

    def ckpt_args(sp):
        sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--data", required=True)
        sp.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
        sp.add_argument("--K", type=int, help="samples per prediction (default: config k_eval)")
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("eval", help="minADE/minFDE report")
    ckpt_args(sp)
    ablations(sp)
    sp.add_argument("--baseline", choices=["none", "linear"], default="none",
                    help="'linear' evaluates the linear base alone")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("predict", help="write K predictions per sample as CSV")
    ckpt_args(sp)
    sp.add_argument("--samples", help="index or python-style slice, e.g. 0:10")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("diagnose", help="analysis CSVs")
    sp.add_argument("what", choices=["energy", "angles", "grid", "pca", "contrib"])
    ckpt_args(sp)
    sp.add_argument("--samples", help="index or slice; grid uses the first selected sample")
    sp.add_argument("--out", required=True)
    sp.add_argument("--relative", action="store_true",
                    help="energy: measure the linear base relative to the last observed point")
    sp.add_argument("--manual-speed", type=float, default=1.3, help="grid: m/s")
    sp.add_argument("--manual-heading", type=float, default=180.0,
                    help="grid: degrees relative to the ego heading (180 = oncoming)")
    sp.add_argument("--half-width", type=float, default=5.0)
    sp.add_argument("--resolution", type=float, default=0.5)
    sp.add_argument("--grid-k", type=int, default=0,
                    help="grid: 0 compares z=0 predictions, K>0 fixed-seed K-sets")
    sp.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.dump_config:
        sys.stdout.write(RunConfig().dumps())
        return EXIT_OK
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    if args.threads < 1:
        print("revib: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    from threadpoolctl import threadpool_limits

    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except (UsageError, ConfigError, dataio.DataConfigError, FileNotFoundError,
            checkpoint.CheckpointError) as exc:
        print(f"revib: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, FloatingPointError, RuntimeError, ValueError, KeyError) as exc:
        print(f"revib: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
