"""Command-line entry point.

Subcommands: simulate, preprocess, train, eval, sweep, serve, map-demo,
plot. Every command records a manifest (resolved config + seeds) next to
its outputs so results are regenerable. Exit codes: 0 success, 1
validation error, 2 runtime failure. DIPME_LOG sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .errors import ConfigError, DipmeError, SceneError, TrainingDiverged

log = logging.getLogger("dipme")


class _JsonFormatter(logging.Formatter):
    def format(self, record):
        doc = {
            "ts": round(record.created, 3),
            "level": record.levelname.lower(),
            "logger": record.name,
            "msg": record.getMessage(),
        }
        return json.dumps(doc)


def _setup_logging(json_logs: bool = False):
    level = os.environ.get("DIPME_LOG", "INFO").upper()
    handler = logging.StreamHandler()
    if json_logs:
        handler.setFormatter(_JsonFormatter())
    else:
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.handlers = [handler]
    root.setLevel(getattr(logging, level, logging.INFO))


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # bad usage is a validation error -> exit 1
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _write_manifest(out_dir: Path, command: str, config: RunConfig, outputs: dict, extra: dict | None = None):
    from .simulate import MEDIA_TABLE_VERSION

    doc = {
        "command": command,
        "config": config.to_dict(),
        "media_table_version": MEDIA_TABLE_VERSION,
        "outputs": {k: str(v) for k, v in outputs.items()},
        "created": time.time(),
    }
    if extra:
        doc.update(extra)
    path = out_dir / "manifest.json"
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
    return path


def _filter_spec(cfg: RunConfig):
    from .preprocess import FilterSpec

    return FilterSpec(
        order=cfg.filter.order,
        cutoff_hz=cfg.filter.cutoff_hz,
        sample_rate_hz=cfg.filter.sample_rate_hz,
        mode=cfg.filter.mode,
    )


def _build_windows(recordings, cfg: RunConfig, length=None, stride=None, series_cache=None):
    from .preprocess import build_window_dataset

    return build_window_dataset(
        recordings,
        length=length or cfg.preprocess.window_len,
        stride=stride or cfg.preprocess.stride,
        filter_spec=_filter_spec(cfg),
        nominal_speed=cfg.preprocess.nominal_speed,
        series_cache=series_cache,
    )


def cmd_simulate(args, cfg: RunConfig) -> int:
    from .simulate import SensorNoiseModel, default_operator, generate_dataset, operator_pool, save_recordings_jsonl

    if cfg.simulator.n_per_class < 1:
        raise ConfigError("simulator.n_per_class must be >= 1")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ops = (
        [default_operator()]
        if cfg.simulator.n_operators <= 1
        else operator_pool(cfg.simulator.n_operators, seed=cfg.simulator.operator_seed)
    )
    t0 = time.time()
    recs = generate_dataset(
        cfg.simulator.n_per_class,
        operators=ops,
        seed=cfg.seed,
        depth_m=cfg.simulator.depth_m,
        noise=SensorNoiseModel(common_mode_correlation=cfg.simulator.common_mode_correlation),
    )
    dataset_path = out_dir / "dataset.jsonl"
    save_recordings_jsonl(dataset_path, recs)
    _write_manifest(out_dir, "simulate", cfg, {"dataset": dataset_path}, {"n_recordings": len(recs)})
    log.info("simulated %d recordings in %.1f s -> %s", len(recs), time.time() - t0, dataset_path)
    return 0


def cmd_preprocess(args, cfg: RunConfig) -> int:
    from .preprocess import save_windows_jsonl
    from .simulate import load_recordings_jsonl

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    recs = load_recordings_jsonl(args.dataset)
    ds = _build_windows(recs, cfg)
    windows_path = out_dir / "windows.jsonl"
    save_windows_jsonl(windows_path, ds)
    _write_manifest(out_dir, "preprocess", cfg, {"windows": windows_path}, {"n_windows": len(ds)})
    log.info("wrote %d windows -> %s", len(ds), windows_path)
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    from .evaluate import confusion, metrics, report_table, stratified_holdout
    from .mce import load_checkpoint, predict_batch, save_checkpoint, train
    from .preprocess import normalize
    from .simulate import MEDIA_CLASSES, load_recordings_jsonl

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    recs = load_recordings_jsonl(args.dataset)
    if cfg.preprocess.offset_jitter:
        from .preprocess import build_offset_jittered_dataset

        ds = build_offset_jittered_dataset(
            recs,
            length=cfg.preprocess.window_len,
            windows_per_recording=cfg.preprocess.windows_per_recording,
            seed=cfg.seed,
            filter_spec=_filter_spec(cfg),
            nominal_speed=cfg.preprocess.nominal_speed,
        )
    else:
        ds = _build_windows(recs, cfg)
    plan = stratified_holdout([r.label for r in recs], seed=cfg.seed)
    train_ids, test_ids = plan.splits[0]
    tr = ds.subset_by_recordings(train_ids)
    te = ds.subset_by_recordings(test_ids)

    init = None
    history = None
    if args.resume:
        init, stats, meta0 = load_checkpoint(args.resume)
        history = meta0.get("history", [])
        mce_cfg = init.config
        Xtr, _ = normalize(tr.windows, stats)
        Xte, _ = normalize(te.windows, stats)
    else:
        mce_cfg = cfg.mce
        Xtr, stats = normalize(tr.windows)
        Xte, _ = normalize(te.windows, stats)

    t0 = time.time()
    try:
        params, history = train(
            Xtr, tr.labels, mce_cfg, cfg.train, val_windows=Xte, val_labels=te.labels,
            init=init, history=history,
        )
    except TrainingDiverged as exc:
        log.error("training diverged: %s; writing last good checkpoint", exc)
        ckpt = out_dir / "checkpoint.json"
        save_checkpoint(ckpt, exc.last_good_params, stats, {"history": exc.history, "diverged": True})
        return 2
    ckpt = out_dir / "checkpoint.json"
    save_checkpoint(ckpt, params, stats, {"history": history, "classes": list(MEDIA_CLASSES)})
    with open(out_dir / "history.json", "w") as f:
        json.dump(history, f)
    preds = predict_batch(params, Xte).argmax(axis=1)
    report = metrics(confusion(preds, te.labels))
    with open(out_dir / "metrics.json", "w") as f:
        json.dump(report.to_dict(), f, indent=2)
    _write_manifest(out_dir, "train", cfg, {"checkpoint": ckpt, "history": out_dir / "history.json"},
                    {"final_val_acc": history[-1]["val_acc"] if history else None, "train_s": time.time() - t0})
    print(report_table({"holdout": report}), end="")
    log.info("checkpoint -> %s (val acc %.4f)", ckpt, history[-1]["val_acc"] if history else float("nan"))
    return 0


def _confusion_png(cm_counts: np.ndarray, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .simulate import MEDIA_CLASSES

    rn = cm_counts / np.maximum(cm_counts.sum(axis=1, keepdims=True), 1)
    fig, ax = plt.subplots(figsize=(5.2, 4.6))
    im = ax.imshow(rn, cmap="Blues", vmin=0, vmax=1)
    ax.set_xticks(range(6), MEDIA_CLASSES, rotation=45, ha="right")
    ax.set_yticks(range(6), MEDIA_CLASSES)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for i in range(6):
        for j in range(6):
            ax.text(j, i, f"{rn[i, j]:.2f}", ha="center", va="center",
                    color="white" if rn[i, j] > 0.5 else "black", fontsize=8)
    fig.colorbar(im)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_eval(args, cfg: RunConfig) -> int:
    from .evaluate import (
        ConfusionMatrix,
        confusion,
        evaluate_split,
        folder_holdout,
        kfold,
        leave_one_operator_out,
        metrics,
        report_table,
    )
    from .mce import load_checkpoint
    from .simulate import load_recordings_jsonl

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    recs = load_recordings_jsonl(args.dataset)
    params, _, _ = load_checkpoint(args.checkpoint)
    if params.config.window_len != cfg.preprocess.window_len:
        raise ConfigError(
            f"checkpoint window length {params.config.window_len} != preprocess.window_len {cfg.preprocess.window_len}"
        )
    ds = _build_windows(recs, cfg)
    labels = [r.label for r in recs]
    operators = [r.operator for r in recs]

    protocol = args.protocol or cfg.eval.protocol
    if protocol == "kfold":
        plan = kfold(labels, k=cfg.eval.k, seed=cfg.seed)
    elif protocol == "loo":
        plan = leave_one_operator_out(operators, group_size=cfg.eval.loo_group_size)
    elif protocol == "folder-holdout":
        plan = folder_holdout(labels, operators, cfg.eval.n_folders, cfg.eval.n_test_folders, seed=cfg.seed)
    else:
        raise ConfigError(f"unknown protocol {protocol!r}")

    reports = {}
    cm_total = np.zeros((6, 6), dtype=int)
    for i, (train_ids, test_ids) in enumerate(plan.splits):
        report, _, _, extras = evaluate_split(ds, train_ids, test_ids, params.config, cfg.train)
        reports[f"{protocol}-{i}"] = report
        cm_total += confusion(extras["preds"], extras["labels"]).counts
        log.info("split %d/%d acc %.4f", i + 1, len(plan.splits), report.accuracy)
    reports["mean(pooled)"] = metrics(ConfusionMatrix(cm_total))

    with open(out_dir / "report.json", "w") as f:
        json.dump({k: r.to_dict() for k, r in reports.items()}, f, indent=2)
    with open(out_dir / "confusion.csv", "w") as f:
        f.write(ConfusionMatrix(cm_total).to_csv())
    _confusion_png(cm_total, out_dir / "confusion.png")
    _write_manifest(out_dir, "eval", cfg, {"report": out_dir / "report.json", "confusion": out_dir / "confusion.csv"},
                    {"protocol": protocol})
    print(report_table(reports), end="")
    return 0


def cmd_sweep(args, cfg: RunConfig) -> int:
    from .evaluate import length_sweep, sweep_table
    from .preprocess import preprocess_recording
    from .simulate import load_recordings_jsonl

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    recs = load_recordings_jsonl(args.dataset)
    series = np.stack([preprocess_recording(r, _filter_spec(cfg), cfg.preprocess.nominal_speed).channels() for r in recs])
    labels = [r.label for r in recs]
    lengths = tuple(int(x) for x in args.lengths.split(",")) if args.lengths else cfg.sweep.lengths
    rows = length_sweep(series, labels, lengths=lengths, mce_config=cfg.mce, train_config=cfg.train, seed=cfg.seed)
    with open(out_dir / "sweep.json", "w") as f:
        json.dump([r.__dict__ for r in rows], f, indent=2)
    table = sweep_table(rows)
    with open(out_dir / "sweep.txt", "w") as f:
        f.write(table)
    _write_manifest(out_dir, "sweep", cfg, {"sweep": out_dir / "sweep.json"})
    print(table, end="")
    failed = [r for r in rows if r.error]
    for r in failed:
        log.warning("length %d failed: %s", r.length, r.error)
    return 0


def cmd_serve(args, cfg: RunConfig) -> int:
    import errno

    import uvicorn

    from .service import create_app

    _setup_logging(json_logs=True)
    instant = args.instant_sampling or cfg.serve.instant_sampling
    try:
        app = create_app(
            args.checkpoint,
            instant_sampling=instant,
            persistence_path=cfg.serve.persistence,
            sampling_delay_s=cfg.serve.sampling_delay_s,
        )
    except ValueError as exc:
        raise ConfigError(str(exc))
    port = args.port or cfg.serve.port
    log.info("serving on port %d (instant_sampling=%s)", port, instant)
    try:
        uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")
    except OSError as exc:
        if exc.errno in (errno.EADDRINUSE, errno.EACCES):
            log.error("port %d unavailable: %s", port, exc)
            return 2
        raise
    return 0


def cmd_map_demo(args, cfg: RunConfig) -> int:
    from .mapping import export_map
    from .mce import Recognizer
    from .service import MappingService

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    svc = MappingService(Recognizer.load(args.checkpoint), instant_sampling=True)
    session = svc.create_session()
    n_dips = args.dips
    xs = (np.arange(n_dips) + 0.5) * session.scene.width / n_dips
    for x in xs:
        event, _, _ = svc.dip(session.id, float(x))
        top = max(event.nodes, key=lambda n: n[1].max())
        log.info("dip at x=%.3f: top node class %d (p=%.2f)", x, int(np.argmax(top[1])), top[1].max())
    scene, agreement = svc.reveal(session.id)
    png = export_map(session.map, out_dir / "map.png", format="png")
    js = export_map(session.map, out_dir / "map.json", format="json")
    _write_manifest(out_dir, "map-demo", cfg, {"png": png, "json": js}, {"agreement": agreement})
    print(f"map written to {png}; agreement vs ground truth: {agreement:.3f}")
    return 0


def cmd_plot(args, cfg: RunConfig) -> int:
    counts = np.loadtxt(args.input, delimiter=",", dtype=int)
    _confusion_png(counts, args.output)
    print(f"wrote {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dipme", description="dip-probe granular media recognition toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, dataset=False, checkpoint=False, out=True):
        sp.add_argument("--config", type=str, default=None, help="JSON run config")
        sp.add_argument("--seed", type=int, default=None, help="master seed override")
        if out:
            sp.add_argument("--out", type=str, default="out", help="output directory")
        if dataset:
            sp.add_argument("--dataset", type=str, required=True, help="recordings JSONL")
        if checkpoint:
            sp.add_argument("--checkpoint", type=str, required=True, help="model checkpoint JSON")

    sp = sub.add_parser("simulate", help="generate a synthetic dip dataset")
    common(sp)
    sp.add_argument("--n-per-class", type=int, default=None)

    sp = sub.add_parser("preprocess", help="recordings JSONL -> processed windows JSONL")
    common(sp, dataset=True)

    sp = sub.add_parser("train", help="train the encoder model on a dataset")
    common(sp, dataset=True)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--resume", type=str, default=None, help="checkpoint to continue from")

    sp = sub.add_parser("eval", help="protocol evaluation with per-split retraining")
    common(sp, dataset=True, checkpoint=True)
    sp.add_argument("--protocol", choices=["kfold", "loo", "folder-holdout"], default=None)

    sp = sub.add_parser("sweep", help="recognition-length sweep")
    common(sp, dataset=True)
    sp.add_argument("--lengths", type=str, default=None, help="comma-separated lengths")

    sp = sub.add_parser("serve", help="run the interactive mapping service")
    common(sp, checkpoint=True, out=False)
    sp.add_argument("--port", type=int, default=None)
    sp.add_argument("--instant-sampling", action="store_true", help="skip the simulated 1.28 s sampling delay")

    sp = sub.add_parser("map-demo", help="scripted mapping session -> PNG/JSON")
    common(sp, checkpoint=True)
    sp.add_argument("--dips", type=int, default=8)

    sp = sub.add_parser("plot", help="render a confusion CSV as a PNG")
    sp.add_argument("--config", type=str, default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--input", type=str, required=True)
    sp.add_argument("--output", type=str, required=True)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging()
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if getattr(args, "n_per_class", None) is not None:
            cfg.simulator.n_per_class = args.n_per_class
        if getattr(args, "epochs", None) is not None:
            from dataclasses import replace

            cfg.train = replace(cfg.train, epochs=args.epochs)
        handler = {
            "simulate": cmd_simulate,
            "preprocess": cmd_preprocess,
            "train": cmd_train,
            "eval": cmd_eval,
            "sweep": cmd_sweep,
            "serve": cmd_serve,
            "map-demo": cmd_map_demo,
            "plot": cmd_plot,
        }[args.command]
        return handler(args, cfg)
    except (ConfigError, SceneError, ValueError) as exc:
        log.error("validation error: %s", exc)
        return 1
    except DipmeError as exc:
        log.error("failure: %s", exc)
        return 2
    except OSError as exc:
        log.error("I/O failure: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
