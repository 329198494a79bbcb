"""Batch commands: explain a manifest, evaluate maps, sweep hyperparameters.

Per-entry randomness comes from ``(seed, entry index)``, so results do not
depend on the worker count or completion order.  Every file is written to a
temporary name first and renamed into place.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import metrics as M
from .attribution import AttributionMap, explain, load_map, save_map, write_json_atomic
from .foveation import FovexConfig
from .imaging import load_image, resize_bilinear, to_gray, to_rgb
from .manifest import DatasetManifest
from .plotting import plot_curves, plot_sweep, save_overlay
from .predictors import CountingPredictor
from .predictors.registry import build_predictor

logger = logging.getLogger(__name__)

ALL_METRICS = ("drop", "increase", "delete", "insert", "ebpg", "nss", "aucj")
SUMMARY_KEYS = {
    "drop": "avg_pct_drop",
    "increase": "avg_pct_increase",
    "delete": "delete",
    "insert": "insert",
    "ebpg": "ebpg",
    "nss": "nss",
    "aucj": "aucj",
}
PARAM_ALIASES = {
    "rr": "random_restarts",
    "sigma_f": "sigma_fovea",
    "beta": "forgetting",
    "N": "scanpath_length",
    "os": "optimization_steps",
    "sigma_b": "sigma_blur",
    "bfs": "blur_filter_size",
    "lambda": "step_size",
    "lr": "step_size",
}
SWEEP_PARAMS = (
    "random_restarts",
    "sigma_fovea",
    "forgetting",
    "scanpath_length",
    "optimization_steps",
    "sigma_blur",
    "blur_filter_size",
    "step_size",
)


def entry_rng(seed: int, index: int):
    return np.random.default_rng([int(seed) % 2**64, index])


def prepare_image(path, input_shape) -> np.ndarray:
    h, w, c = input_shape
    img = load_image(path)
    img = to_rgb(img) if c == 3 else to_gray(img)
    return resize_bilinear(img, h, w)


def _atomic_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


# -- worker plumbing ----------------------------------------------------------

_WORKER = {}


def _init_worker(spec, input_shape, options):
    _WORKER["predictor"] = build_predictor(spec, input_shape, options)


def _map_entries(fn, jobs, workers, spec, input_shape, options, predictor):
    """Run ``fn(predictor, job)`` over jobs, preserving order."""
    if workers <= 1 or len(jobs) <= 1:
        return [fn(predictor, job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(spec, input_shape, options)) as pool:
        return list(pool.map(_pool_call, [(fn, job) for job in jobs]))


def _pool_call(args):
    fn, job = args
    return fn(_WORKER["predictor"], job)


# -- explain --------------------------------------------------------------------


def _explain_one(predictor, job):
    index, entry_path, target, stem, config, out_dir = job
    row = {"index": index, "image": str(entry_path), "stem": stem}
    try:
        image = prepare_image(entry_path, predictor.descriptor.input_shape)
        counter = CountingPredictor(predictor)
        emap = explain(image, counter, config, target=target, rng=entry_rng(config.seed, index))
        out = Path(out_dir)
        map_path = out / "maps" / f"{stem}.png"
        save_map(emap, map_path, map_path.with_suffix(".json"))
        save_overlay(image, emap.field, emap.fixations, out / "overlays" / f"{stem}_overlay.png")
        row.update(
            status="ok",
            map=str(map_path.relative_to(out)),
            overlay=f"overlays/{stem}_overlay.png",
            target_class=emap.target_class,
            fixations=[[f.x, f.y] for f in emap.fixations],
            wall_clock_s=emap.provenance["wall_clock_s"],
            forward_passes=counter.forward_calls,
        )
    except Exception as exc:  # per-entry failures are recorded, never fatal
        logger.warning("entry %d (%s) failed: %s", index, entry_path, exc)
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    return row


def cmd_explain(manifest: DatasetManifest, config: FovexConfig, predictor_spec: str, out_dir, workers: int = 1,
                target_class=None, predictor_options=None) -> dict:
    """Explain every manifest entry; returns the run record (also written to ``run.json``)."""
    out = Path(out_dir)
    (out / "maps").mkdir(parents=True, exist_ok=True)
    (out / "overlays").mkdir(parents=True, exist_ok=True)
    predictor = build_predictor(predictor_spec, manifest.input_size, predictor_options)
    try:
        jobs = [
            (i, e.image_path, target_class if target_class is not None else e.target_class, manifest.entry_stem(i), config, str(out))
            for i, e in enumerate(manifest.entries)
        ]
        t0 = time.perf_counter()
        rows = _map_entries(_explain_one, jobs, workers, predictor_spec, manifest.input_size, predictor_options, predictor)
        descriptor = predictor.descriptor.to_dict()
    finally:
        predictor.close()
    ok = [r for r in rows if r["status"] == "ok"]
    record = {
        "command": "explain",
        "config": config.to_dict(),
        "predictor": {"spec": predictor_spec, "options": predictor_options, **descriptor},
        "seed": config.seed,
        "workers": workers,
        "entries": rows,
        "totals": {"entries": len(rows), "ok": len(ok), "failed": len(rows) - len(ok)},
        "mean_wall_clock_s": float(np.mean([r["wall_clock_s"] for r in ok])) if ok else None,
        "total_wall_clock_s": time.perf_counter() - t0,
    }
    write_json_atomic(record, out / "run.json")
    return record


# -- evaluate -------------------------------------------------------------------


def resolve_maps_dir(maps_dir) -> Path:
    p = Path(maps_dir)
    return p / "maps" if (p / "maps").is_dir() else p


def _evaluate_one(predictor, job):
    index, entry, stem, map_path, target_override, wanted, step_fraction, kernel_cfg = job
    row = {"index": index, "image": str(entry.image_path), "stem": stem}
    curves = {}
    try:
        if not Path(map_path).is_file():
            raise FileNotFoundError(f"no map at {map_path}")
        shape = predictor.descriptor.input_shape
        image = prepare_image(entry.image_path, shape)
        emap = load_map(map_path)
        field = emap.field
        if field.shape != shape[:2]:
            field = resize_bilinear(field, shape[0], shape[1])[:, :, 0]
        if target_override is not None:
            target = target_override
        elif entry.target_class is not None:
            target = entry.target_class
        elif emap.target_class is not None:
            target = int(emap.target_class)
        else:
            target = int(np.argmax(predictor.predict(image).scores))
        row["target_class"] = int(target)
        sy, sx = shape[0] / entry.stored_size[0], shape[1] / entry.stored_size[1]
        if "drop" in wanted or "increase" in wanted:
            p_full, p_masked = M.drop_and_increase(predictor, image, field, target)
            row["p_full"], row["p_masked"] = p_full, p_masked
            if "drop" in wanted:
                row["pct_drop"] = M.pct_drop(p_full, p_masked) if p_full > 0 else None
            if "increase" in wanted:
                row["increase"] = int(p_masked > p_full)
        if "delete" in wanted:
            curve, row["delete_auc"] = M.deletion_curve(predictor, image, field, target, step_fraction)
            curves["delete"] = curve
        if "insert" in wanted:
            kernel = FovexConfig(**kernel_cfg).blur_kernel()
            curve, row["insert_auc"] = M.insertion_curve(predictor, image, field, target, step_fraction, kernel)
            curves["insert"] = curve
        if "ebpg" in wanted:
            row["ebpg"] = M.ebpg(field, entry.bbox.scaled(sy, sx)) if entry.bbox is not None else None
        if "nss" in wanted or "aucj" in wanted:
            gaze = None
            if entry.gaze_fixations:
                pts = [(min(x * sx, shape[1] - 1), min(y * sy, shape[0] - 1)) for x, y in entry.gaze_fixations]
                gaze = M.GazeData(pts)
            if "nss" in wanted:
                row["nss"] = M.nss(field, gaze) if gaze else None
            if "aucj" in wanted:
                row["aucj"] = M.aucj(field, gaze) if gaze else None
        row["status"] = "ok"
    except Exception as exc:
        logger.warning("evaluation of entry %d failed: %s", index, exc)
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    return row, {k: (c.fractions.tolist(), c.probabilities.tolist()) for k, c in curves.items()}


ROW_COLUMNS = {
    "drop": ["p_full", "p_masked", "pct_drop"],
    "increase": ["increase"],
    "delete": ["delete_auc"],
    "insert": ["insert_auc"],
    "ebpg": ["ebpg"],
    "nss": ["nss"],
    "aucj": ["aucj"],
}


def summarize(rows, wanted) -> tuple[dict, dict]:
    """Aggregate means and the number of entries excluded from each metric."""
    ok = [r for r in rows if r["status"] == "ok"]
    column = {"drop": "pct_drop", "increase": "increase", "delete": "delete_auc", "insert": "insert_auc",
              "ebpg": "ebpg", "nss": "nss", "aucj": "aucj"}
    summary, excluded = {}, {}
    for m in wanted:
        vals = [r.get(column[m]) for r in ok]
        present = [v for v in vals if v is not None]
        excluded[SUMMARY_KEYS[m]] = len(rows) - len(present)
        if not present:
            summary[SUMMARY_KEYS[m]] = None
        elif m == "increase":
            summary[SUMMARY_KEYS[m]] = 100.0 * float(np.mean(present))
        else:
            summary[SUMMARY_KEYS[m]] = float(np.mean(present))
    return summary, excluded


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def metrics_csv(rows, summary, wanted) -> str:
    cols = ["index", "image", "target_class", "status"]
    for m in wanted:
        cols += ROW_COLUMNS[m]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    for r in rows:
        writer.writerow([_fmt(r.get(c)) for c in cols])
    mean_row = {"index": "mean", "status": "summary"}
    for m in wanted:
        mean_row[ROW_COLUMNS[m][-1]] = summary[SUMMARY_KEYS[m]]
    writer.writerow([_fmt(mean_row.get(c)) for c in cols])
    return buf.getvalue()


def cmd_evaluate(manifest: DatasetManifest, maps_dir, predictor_spec: str, out_dir, metric_set=ALL_METRICS,
                 step_fraction: float = M.DEFAULT_STEP_FRACTION, config: FovexConfig | None = None, workers: int = 1,
                 target_class=None, predictor_options=None, dump_curves: bool = False, figures: bool = True) -> dict:
    """Score saved maps; writes ``metrics.csv``, ``metrics.json`` and figures."""
    wanted = [m for m in ALL_METRICS if m in set(metric_set)]
    unknown = set(metric_set) - set(ALL_METRICS)
    if unknown:
        raise ValueError(f"unknown metrics {sorted(unknown)}")
    if not 0 < step_fraction <= 1:
        raise ValueError("step_fraction must lie in (0, 1]")
    config = config or FovexConfig()
    kernel_cfg = {"sigma_blur": config.sigma_blur, "blur_filter_size": config.blur_filter_size}
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mdir = resolve_maps_dir(maps_dir)
    predictor = build_predictor(predictor_spec, manifest.input_size, predictor_options)
    try:
        jobs = [
            (i, e, manifest.entry_stem(i), str(mdir / f"{manifest.entry_stem(i)}.png"), target_class, wanted,
             step_fraction, kernel_cfg)
            for i, e in enumerate(manifest.entries)
        ]
        results = _map_entries(_evaluate_one, jobs, workers, predictor_spec, manifest.input_size, predictor_options, predictor)
    finally:
        predictor.close()
    rows = [r for r, _ in results]
    summary, excluded = summarize(rows, wanted)
    report = {
        "command": "evaluate",
        "metrics": wanted,
        "step_fraction": step_fraction,
        "summary": summary,
        "excluded": excluded,
        "rows": rows,
        "totals": {"entries": len(rows), "ok": sum(r["status"] == "ok" for r in rows)},
    }
    _atomic_text(out / "metrics.csv", metrics_csv(rows, summary, wanted))
    write_json_atomic(report, out / "metrics.json")
    curve_sets = {}
    for (row, curves) in results:
        for name, (xs, ys) in curves.items():
            curve_sets.setdefault(name, []).append((xs, ys))
            if dump_curves:
                (out / "curves").mkdir(exist_ok=True)
                text = "fraction,probability\n" + "".join(f"{x!r},{y!r}\n" for x, y in zip(xs, ys))
                _atomic_text(out / "curves" / f"{row['stem']}_{name}.csv", text)
    if figures and curve_sets:
        means = {}
        for name, items in curve_sets.items():
            lengths = {len(xs) for xs, _ in items}
            if len(lengths) == 1:
                means[name] = (items[0][0], np.mean([ys for _, ys in items], axis=0))
        if means:
            (out / "figures").mkdir(exist_ok=True)
            plot_curves(means, out / "figures" / "curves.png", title="mean deletion / insertion curves")
    return report


# -- sweep ----------------------------------------------------------------------


def parse_grid(grid: dict, base: FovexConfig):
    """Expand a sweep grid into ``(label, value, config)`` points.

    Raises ``ValueError`` for unknown parameters or invalid values before
    anything runs.
    """
    mode = grid.get("mode", "one-at-a-time")
    params = grid.get("parameters", {k: v for k, v in grid.items() if k != "mode"})
    if not params:
        raise ValueError("sweep grid names no parameters")
    resolved = {}
    for name, values in params.items():
        key = PARAM_ALIASES.get(name, name)
        if key not in SWEEP_PARAMS:
            raise ValueError(f"cannot sweep {name!r}; allowed: {sorted(SWEEP_PARAMS + tuple(PARAM_ALIASES))}")
        if not isinstance(values, list) or not values:
            raise ValueError(f"sweep values for {name!r} must be a non-empty list")
        resolved[key] = values
    points = []
    if mode == "one-at-a-time":
        for key, values in resolved.items():
            for v in values:
                points.append((key, v, replace(base, **{key: v})))
    elif mode == "cross":
        keys = list(resolved)
        for combo in itertools.product(*(resolved[k] for k in keys)):
            points.append(("|".join(keys), "|".join(map(str, combo)), replace(base, **dict(zip(keys, combo)))))
    else:
        raise ValueError(f"unknown sweep mode {mode!r}")
    return points


def cmd_sweep(manifest: DatasetManifest, base_config: FovexConfig, grid: dict, predictor_spec: str, out_dir,
              metric_set=ALL_METRICS, step_fraction: float = M.DEFAULT_STEP_FRACTION, workers: int = 1,
              target_class=None, predictor_options=None) -> dict:
    try:
        points = parse_grid(grid, base_config)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"invalid sweep grid: {exc}") from exc
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, runs = [], []
    for k, (param, value, cfg) in enumerate(points):
        point_dir = out / "points" / f"{k:03d}_{param}={value}".replace("|", "+")
        record = cmd_explain(manifest, cfg, predictor_spec, point_dir, workers, target_class, predictor_options)
        report = cmd_evaluate(manifest, point_dir, predictor_spec, point_dir, metric_set, step_fraction, cfg, workers,
                              target_class, predictor_options, figures=False)
        runs.append({"parameter": param, "value": value, "dir": str(point_dir.relative_to(out)),
                     "ok": record["totals"]["ok"], "summary": report["summary"]})
        for metric, mean in report["summary"].items():
            rows.append({"parameter": param, "value": value, "metric": metric, "mean": mean})
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["parameter", "value", "metric", "mean"])
    for r in rows:
        writer.writerow([r["parameter"], r["value"], r["metric"], _fmt(r["mean"])])
    _atomic_text(out / "sweep.csv", buf.getvalue())
    result = {"command": "sweep", "base_config": base_config.to_dict(), "grid": grid, "runs": runs, "rows": rows}
    write_json_atomic(result, out / "sweep.json")
    (out / "figures").mkdir(exist_ok=True)
    plot_sweep(rows, out / "figures" / "sweep.png")
    return result


def write_benchmark(bench, out_dir, name: str = "img") -> Path:
    """Write a desk benchmark as PNGs plus ``manifest.json`` and ``predictor.json``."""
    from .imaging import save_image
    from .manifest import write_manifest

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, case in enumerate(bench.cases):
        rel = f"images/{name}_{i:03d}.png"
        save_image(case.image, out / rel)
        entries.append({"image": rel, "target_class": case.target, "bbox": case.bbox.to_dict()})
    d = bench.predictor.descriptor
    write_manifest(out / "manifest.json", entries, (d.input_height, d.input_width, d.input_channels))
    write_json_atomic(bench.predictor_spec(), out / "predictor.json")
    return out / "manifest.json"
