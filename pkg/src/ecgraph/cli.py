"""Command line entry point: `ecgraph digitize | render | train | eval`.

All randomness flows from `--seed`. Set ECGRAPH_LOG (DEBUG, INFO, WARNING,
...) for log output on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EcgraphError
from .records import SignalRecord, atomic_write, read_signal, write_signal

log = logging.getLogger("ecgraph")


@dataclass
class CommandOutcome:
    exit_code: int = 0
    paths: list[Path] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)

    def fail(self, message: str) -> None:
        self.exit_code = 1
        self.diagnostics.append(message)


def _map(fn, items: list, jobs: int) -> list:
    """Ordered map, optionally over worker processes."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _layout_and_cal(args):
    from .leadtrace import CalibrationConfig
    from .raster import load_layout, standard_layout

    cal = CalibrationConfig(args.gain, args.fs, args.pixels_per_sample)
    layout = load_layout(args.layout) if args.layout else standard_layout(
        n_samples=args.samples, pixels_per_sample=int(round(args.pixels_per_sample)))
    return layout, cal


# -- digitize ------------------------------------------------------------------

def overlay_image(img, rec: SignalRecord, layout, cal, color=(220, 0, 0)):
    """Copy of `img` with each extracted sample painted as a 3x3 dot."""
    from .leadtrace import detect_baseline
    from .raster import RasterImage, band_of, binarize

    bits = binarize(img, layout)
    px = img.pixels.copy()
    h, w = px.shape[:2]
    for lead, values in rec.leads.items():
        band = band_of(layout, lead)
        baseline = detect_baseline(bits, band)
        cols = band.x_start + cal.sample_columns(band.n_columns)[:values.size]
        rows = np.rint(baseline - values / cal.gain_mv_per_pixel).astype(int)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                y, x = np.clip(rows + dy, 0, h - 1), np.clip(cols + dx, 0, w - 1)
                px[y, x] = color
    return RasterImage(px)


def _truth_for(image: Path, verify: str | None) -> Path | None:
    if verify is None:
        return None
    base = image.parent if verify == "auto" else Path(verify)
    cand = base / f"{image.stem}.truth.json"
    return cand if cand.exists() else None


def verify_against_truth(rec: SignalRecord, truth_path: Path, tolerance_px: float = 2.0) -> dict:
    """Fraction of samples within tolerance of the renderer's ground truth."""
    truth = json.loads(truth_path.read_text())
    p = truth["gain_mv_per_pixel"]
    total = bad = 0
    for lead, rows in truth["sample_rows"].items():
        ref = (truth["baselines"][lead] - np.asarray(rows)) * p
        got = rec.leads[lead][:ref.size]
        n = min(ref.size, got.size)
        total += n
        bad += int(np.count_nonzero(np.abs(got[:n] - ref[:n]) > tolerance_px * p + 1e-9))
    return {"samples": total, "bad": bad, "bad_fraction": bad / max(total, 1)}


def _digitize_one(job: dict) -> dict:
    from .leadtrace import CalibrationConfig, digitize_page
    from .raster import load_image, parse_layout, save_image

    image = Path(job["image"])
    out = Path(job["out"])
    layout = parse_layout(job["layout"])
    cal = CalibrationConfig(*job["cal"])
    res = {"image": str(image), "paths": [], "error": None}
    try:
        img = load_image(image)
        rec = digitize_page(img, layout, cal, job["method"], job["strict_absolute"],
                            job["continuity"], source_image=image.name)
    except (EcgraphError, OSError) as exc:
        res["error"] = f"{image}: {exc}"
        return res
    csv_path, json_path = write_signal(rec, out / f"{image.stem}.csv")
    res["paths"] += [str(csv_path), str(json_path)]
    if job["overlay"]:
        ov = out / f"{image.stem}.overlay.png"
        save_image(overlay_image(img, rec, layout, cal), ov)
        res["paths"].append(str(ov))
    truth = _truth_for(image, job["verify"])
    if job["verify"] is not None:
        if truth is None:
            res["error"] = f"{image}: no ground-truth sidecar found"
        else:
            check = verify_against_truth(rec, truth)
            res["verify"] = check
            if check["bad_fraction"] > job["verify_max_bad"]:
                res["error"] = (f"{image}: {check['bad']} of {check['samples']} samples "
                                f"off by more than 2 pixels")
    return res


def cmd_digitize(args) -> CommandOutcome:
    from .raster import format_layout

    layout, cal = _layout_and_cal(args)
    images = []
    for p in args.images:
        p = Path(p)
        images += sorted(q for q in p.iterdir() if q.suffix.lower() in (".png", ".bmp")
                         and ".mask." not in q.name and ".overlay." not in q.name) if p.is_dir() else [p]
    jobs = [{"image": str(im), "out": args.out, "layout": format_layout(layout),
             "cal": (cal.gain_mv_per_pixel, cal.sample_rate_hz, cal.pixels_per_sample),
             "method": args.method, "strict_absolute": args.strict_absolute,
             "continuity": args.continuity, "overlay": args.overlay,
             "verify": args.verify_against, "verify_max_bad": args.verify_max_bad}
            for im in images]
    outcome = CommandOutcome()
    if not jobs:
        outcome.fail("no input images")
    for res in _map(_digitize_one, jobs, args.jobs):
        outcome.paths += [Path(p) for p in res["paths"]]
        if "verify" in res:
            v = res["verify"]
            print(f"{res['image']}: {v['bad']}/{v['samples']} samples outside 2 px")
        if res["error"]:
            outcome.fail(res["error"])
    return outcome


# -- render --------------------------------------------------------------------

def _render_one(job: dict) -> list[str]:
    from .leadtrace import CalibrationConfig
    from .raster import parse_layout
    from .render import RenderConfig, crossing_drift, render_record, synthetic_page, write_render

    layout = parse_layout(job["layout"])
    cal = CalibrationConfig(*job["cal"])
    seed = job["seed"]
    if job["source"]:
        rec = read_signal(job["source"])
    else:
        kind = "ecg" if job["crossings"] and job["kind"] == "mixed" else job["kind"]
        rec = synthetic_page(layout, cal, seed, kind)
    drift = crossing_drift(layout, cal, rec, seed, job["pairs"]) if job["crossings"] else {}
    cfg = RenderConfig(layout, cal, drift=drift, line_thickness=job["thickness"],
                       antialias=job["antialias"], rng_seed=seed,
                       allow_crossings=job["crossings"], noise=job["noise"])
    result = render_record(rec, cfg)
    return [str(p) for p in write_render(result, job["out"], job["stem"])]


def cmd_render(args) -> CommandOutcome:
    from .raster import format_layout

    layout, cal = _layout_and_cal(args)
    base = {"layout": format_layout(layout), "out": args.out, "kind": args.kind,
            "cal": (cal.gain_mv_per_pixel, cal.sample_rate_hz, cal.pixels_per_sample),
            "crossings": args.crossings, "pairs": args.pairs, "thickness": args.thickness,
            "antialias": args.antialias, "noise": args.noise}
    if args.source:
        jobs = [dict(base, source=s, seed=args.seed + i, stem=Path(s).stem)
                for i, s in enumerate(args.source)]
    else:
        jobs = [dict(base, source=None, seed=args.seed + i, stem=f"page_{args.seed + i:04d}")
                for i in range(args.count)]
    outcome = CommandOutcome()
    try:
        for paths in _map(_render_one, jobs, args.jobs):
            outcome.paths += [Path(p) for p in paths]
    except (EcgraphError, ValueError, OSError) as exc:
        outcome.fail(f"render: {exc}")
    return outcome


# -- train ---------------------------------------------------------------------

def _load_config(path: str | None, cls, overrides: dict):
    """Build a config dataclass from JSON plus CLI overrides, naming bad fields."""
    import dataclasses
    try:
        data = json.loads(Path(path).read_text()) if path else {}
    except (OSError, json.JSONDecodeError) as exc:
        raise EcgraphError(f"{cls.__name__} file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise EcgraphError(f"{cls.__name__} file {path}: expected a JSON object")
    data.update({k: v for k, v in overrides.items() if v is not None})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise EcgraphError(f"{cls.__name__}: unknown field(s) {', '.join(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise EcgraphError(f"{cls.__name__}: {exc}") from exc


def _load_xy(path: str) -> tuple[np.ndarray, np.ndarray]:
    with np.load(path) as z:
        return z["x"], z["y"]


def cmd_train(args) -> CommandOutcome:
    from .crtnet.checkpoint import save_checkpoint
    from .crtnet.model import ModelConfig, tiny_config
    from .crtnet.train import TrainConfig, evaluate, train, write_history
    from .datasets import synthetic_task, to_arrays

    outcome = CommandOutcome()
    try:
        if args.train_data:
            x, y = _load_xy(args.train_data)
            xv, yv = _load_xy(args.val_data) if args.val_data else (x, y)
        else:
            recs, _ = synthetic_task(args.synthetic, args.length, args.seed)
            x, y = to_arrays(recs)
            vrecs, _ = synthetic_task(max(1, args.synthetic // 5), args.length, args.seed + 1)
            xv, yv = to_arrays(vrecs)
        if x.ndim == 2:
            x, xv = x[..., None], xv[..., None]
        shape = {"input_length": int(x.shape[1]), "input_leads": int(x.shape[2])}
        if args.tiny and not args.model_config:
            cfg = tiny_config(n_classes=int(max(y.max(), yv.max()) + 1), **shape)
        else:
            cfg = _load_config(args.model_config, ModelConfig, shape)
        tc = _load_config(args.train_config, TrainConfig, {
            "max_epochs": args.epochs, "batch_size": args.batch_size, "lr0": args.lr0,
            "early_stop_patience": args.patience, "optimizer": args.optimizer,
            "rng_seed": args.seed})
        result = train(cfg, (x, y), (xv, yv), tc)
    except EcgraphError as exc:
        outcome.fail(str(exc))
        return outcome
    out = Path(args.out)
    ckpt = save_checkpoint(out / "model.crtn", cfg, result.params)
    hist = out / "history.csv"
    write_history(result.history, hist)
    outcome.paths += [ckpt, hist]
    _, acc = evaluate(result.params, cfg, x.astype(np.float32), y)
    print(f"epochs run: {len(result.history)}  best epoch: {result.best_epoch}  "
          f"train accuracy: {acc:.4f}")
    return outcome


# -- eval ----------------------------------------------------------------------

def _read_predictions(path: str) -> tuple[np.ndarray, np.ndarray]:
    import csv
    labels, preds = [], []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            labels.append(int(row["label"]))
            preds.append(int(row["pred"]))
    return np.array(preds), np.array(labels)


def cmd_eval(args) -> CommandOutcome:
    from .metrics import confusion, confusion_csv, report, save_heatmap

    outcome = CommandOutcome()
    try:
        if args.predictions:
            preds, labels = _read_predictions(args.predictions)
            n_classes = args.n_classes
        else:
            from .crtnet.checkpoint import load_checkpoint
            from .crtnet.model import predict_proba
            if not (args.checkpoint and args.data):
                raise EcgraphError("eval needs --predictions, or --checkpoint with --data")
            cfg, params = load_checkpoint(args.checkpoint)
            x, labels = _load_xy(args.data)
            if x.ndim == 2:
                x = x[..., None]
            preds = np.argmax(predict_proba(x, cfg, params), axis=-1)
            n_classes = cfg.n_classes
        cm = confusion(preds, labels, n_classes)
        names = args.class_names.split(",") if args.class_names else None
        rep = report(cm, names)
    except (EcgraphError, OSError, KeyError) as exc:
        outcome.fail(f"eval: {exc}")
        return outcome
    out = Path(args.out)
    paths = {"report.csv": rep.to_csv(), "report.txt": rep.to_text(),
             "confusion.csv": confusion_csv(cm, rep.class_names)}
    for name, text in paths.items():
        atomic_write(out / name, text)
        outcome.paths.append(out / name)
    save_heatmap(cm, out / "confusion.png", rep.class_names)
    outcome.paths.append(out / "confusion.png")
    print(rep.to_text(), end="")
    return outcome


# -- parser --------------------------------------------------------------------

def _add_page_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--layout", help="layout config file (default: the standard 6x2 page)")
    p.add_argument("--samples", type=int, default=625,
                   help="samples per lead for the standard layout (default 625)")
    p.add_argument("--gain", type=float, default=0.02, help="millivolts per pixel (default 0.02)")
    p.add_argument("--fs", type=float, default=250.0, help="sample rate in Hz (default 250)")
    p.add_argument("--pixels-per-sample", type=float, default=2.0,
                   help="horizontal pixels per sample (default 2)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ecgraph", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0, help="seed for every random choice")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes for per-file work")
    sub = parser.add_subparsers(dest="command", required=True)

    d = sub.add_parser("digitize", help="extract 12-lead signals from chart images")
    d.add_argument("images", nargs="+", help="image files or directories of PNG/BMP pages")
    d.add_argument("--out", required=True, help="output directory for CSV + JSON records")
    _add_page_args(d)
    d.add_argument("--method", choices=("crossed", "independent"), default="crossed")
    d.add_argument("--continuity", choices=("linear", "nearest"), default="linear")
    d.add_argument("--strict-absolute", action="store_true",
                   help="report |offset| from baseline instead of the signed offset")
    d.add_argument("--overlay", action="store_true", help="also write an overlay PNG per image")
    d.add_argument("--verify-against", nargs="?", const="auto", default=None, metavar="DIR",
                   help="compare with <stem>.truth.json sidecars (default: next to each image)")
    d.add_argument("--verify-max-bad", type=float, default=0.005,
                   help="largest tolerated fraction of samples off by more than 2 px")
    d.set_defaults(func=cmd_digitize)

    r = sub.add_parser("render", help="draw synthetic or given signals as chart pages")
    r.add_argument("--out", required=True)
    _add_page_args(r)
    r.add_argument("--count", type=int, default=1, help="number of synthetic pages")
    r.add_argument("--kind", choices=("mixed", "sine", "square", "ecg", "zeros"), default="mixed")
    r.add_argument("--source", nargs="*", help="signal CSV files to draw instead of synthetic ones")
    r.add_argument("--crossings", action="store_true", help="force traces of adjacent bands to cross")
    r.add_argument("--pairs", type=int, default=2, help="crossing pairs per page")
    r.add_argument("--thickness", type=int, default=1)
    r.add_argument("--antialias", action="store_true")
    r.add_argument("--noise", type=int, default=0, help="salt-and-pepper pixel count")
    r.set_defaults(func=cmd_render)

    t = sub.add_parser("train", help="train CRT-Net and write a checkpoint + history CSV")
    t.add_argument("--out", required=True)
    t.add_argument("--train-data", help="npz with arrays x (N, T[, leads]) and y (N,)")
    t.add_argument("--val-data", help="npz validation set (default: the training set)")
    t.add_argument("--synthetic", type=int, default=100,
                   help="records per class of the synthetic task when no data is given")
    t.add_argument("--length", type=int, default=200, help="synthetic record length")
    t.add_argument("--model-config", help="JSON file of ModelConfig fields")
    t.add_argument("--train-config", help="JSON file of TrainConfig fields")
    t.add_argument("--tiny", action="store_true", help="use the small test configuration")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr0", type=float)
    t.add_argument("--patience", type=int)
    t.add_argument("--optimizer", choices=("adam", "sgd"))
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score predictions: report CSV/text + confusion heatmap")
    e.add_argument("--out", required=True)
    e.add_argument("--predictions", help="CSV with columns label,pred")
    e.add_argument("--checkpoint", help="model checkpoint to run on --data")
    e.add_argument("--data", help="npz with arrays x and y")
    e.add_argument("--n-classes", type=int)
    e.add_argument("--class-names", help="comma-separated class names")
    e.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("ECGRAPH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        outcome = args.func(args)
    except EcgraphError as exc:
        outcome = CommandOutcome()
        outcome.fail(str(exc))
    for msg in outcome.diagnostics:
        print(f"error: {msg}", file=sys.stderr)
    for p in outcome.paths:
        log.info("wrote %s", p)
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
