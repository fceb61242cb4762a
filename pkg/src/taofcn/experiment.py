"""End-to-end string evaluation, the desk-scale experiment runner and the
dense-vs-patch inference benchmark."""
from __future__ import annotations

import csv
import json
import logging
import statistics
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import GenParams, generate_dataset, load_dataset, read_manifest
from .decoder import BeamConfig, DecodeResult, decode_dense
from .metrics import corpus_cr_ar
from .network import (
    DECIMATE,
    Checkpoint,
    NetworkSpec,
    build_spec,
    center_pixel_classify,
    dense_by_patches,
    extract_patch_cnn,
    forward_dense,
    forward_patch,
    init_params,
    pad_for_dense,
    patch_at,
)
from .training import TrainConfig, predict_dense, train

log = logging.getLogger(__name__)


def beam_for(spec: NetworkSpec, beam: BeamConfig) -> BeamConfig:
    """Express ``min_char_width`` (pixels) in columns of the model's output grid."""
    s = spec.output_stride
    if s == 1:
        return beam
    return BeamConfig(beam.beam_width, max(1, round(beam.min_char_width / s)))


def decode_sample(checkpoint: Checkpoint, sample, beam: BeamConfig | None = None) -> DecodeResult:
    beam = beam_for(checkpoint.spec, beam or BeamConfig())
    dense = predict_dense(checkpoint.spec, checkpoint.params, sample)
    return decode_dense(dense, checkpoint.classes, beam)


def evaluate_strings(checkpoint: Checkpoint, samples, beam: BeamConfig | None = None) -> dict:
    """Isolated centre-pixel accuracy and pooled string CR/AR (all in percent)."""
    beam = beam_for(checkpoint.spec, beam or BeamConfig())
    truth, pred, pairs = [], [], []
    for s in samples:
        dense = predict_dense(checkpoint.spec, checkpoint.params, s)
        for cls, box in zip(s.labels(), s.boxes):
            truth.append(cls)
            pred.append(center_pixel_classify(dense, box))
        pairs.append((s.transcript, decode_dense(dense, checkpoint.classes, beam).transcript))
    cr, ar, counts = corpus_cr_ar(pairs)
    iso = 100.0 * float(np.mean(np.asarray(truth) == np.asarray(pred))) if truth else 0.0
    return {"isolated_accuracy": iso, "cr": 100.0 * cr, "ar": 100.0 * ar,
            "n": counts.n, "sub": counts.sub, "del": counts.dele, "ins": counts.ins,
            "strings": len(samples), "string_exact": 100.0 * float(np.mean([t == p for t, p in pairs])) if pairs else 0.0}


def patch_oracle_isolated(checkpoint: Checkpoint, samples) -> float:
    """Isolated accuracy of the single-patch CNN applied at each ground-truth box centre."""
    spec = checkpoint.spec
    pspec = extract_patch_cnn(spec)
    hits = total = 0
    for s in samples:
        padded = pad_for_dense(s.image, spec)
        for cls, (x0, y0, x1, y1) in zip(s.labels(), s.boxes):
            cy, cx = (y0 + y1 - 1) // 2, (x0 + x1 - 1) // 2
            probs = forward_patch(pspec, checkpoint.params,
                                  patch_at(padded, cy // padded.stride, cx // padded.stride, pspec.r))
            hits += int(np.argmax(probs[:-1])) == cls
            total += 1
    return 100.0 * hits / total if total else 0.0


# ---------------------------------------------------------------------------
# experiment runner

DEFAULT_EXPERIMENT = {
    "data": "data/synthetic",
    "out": "runs/default",
    "generate": True,
    "n_train": 2000,
    "n_test": 400,
    "gen_seed": 0,
    "branch_mode": DECIMATE,
    "models": ["taofcn", "fcn"],
    "epochs": 6,
    "learning_rate": 0.05,
    "momentum": 0.9,
    "batch_size": 8,
    "seed": 0,
    "core_fraction": 0.6,
    "background_weight": 0.25,
    "beam_width": 16,
    "min_char_width": 2,
}

MODEL_LABELS = {"taofcn": "TAO-FCN", "fcn": "normal FCN (single branch)"}


class StageError(RuntimeError):
    """An experiment stage failed; the message names the stage."""


def load_config(path) -> dict:
    cfg = dict(DEFAULT_EXPERIMENT)
    cfg.update(json.loads(Path(path).read_text()))
    return cfg


def run_experiment(config: dict | str | Path) -> list[dict]:
    """Train and evaluate every configured model; write ``metrics.csv`` and ``report.json``.

    Returns the metric rows ``{"model", "metric", "value"}``.
    """
    cfg = load_config(config) if isinstance(config, (str, Path)) else {**DEFAULT_EXPERIMENT, **config}
    data, out = Path(cfg["data"]), Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    try:
        if cfg["generate"] and not (data / "manifest.json").exists():
            generate_dataset(data, cfg["n_train"], cfg["n_test"], GenParams(seed=cfg["gen_seed"]))
        read_manifest(data)
        train_set, test_set = load_dataset(data, "train"), load_dataset(data, "test")
    except Exception as exc:
        raise StageError(f"data stage failed: {exc}") from exc

    tcfg = TrainConfig(cfg["learning_rate"], cfg["momentum"], cfg["epochs"], cfg["batch_size"], cfg["seed"],
                       cfg["core_fraction"], cfg["background_weight"])
    beam = BeamConfig(cfg["beam_width"], cfg["min_char_width"])
    rows, report = [], {"config": cfg, "models": {}}
    for name in cfg["models"]:
        spec = build_spec(name, cfg["branch_mode"], seed=cfg["seed"])
        t0 = time.perf_counter()
        try:
            ckpt, tlog = train(spec, train_set, tcfg)
        except Exception as exc:
            raise StageError(f"training stage failed for {name}: {exc}") from exc
        train_seconds = time.perf_counter() - t0
        ckpt.save(out / f"{name}.ckpt")
        tlog.write_csv(out / f"{name}.train.csv")
        try:
            metrics = evaluate_strings(ckpt, test_set, beam)
        except Exception as exc:
            raise StageError(f"evaluation stage failed for {name}: {exc}") from exc
        metrics["train_seconds"] = train_seconds
        report["models"][name] = metrics
        label = MODEL_LABELS.get(name, name)
        for metric in ("isolated_accuracy", "cr", "ar"):
            rows.append({"model": label, "metric": metric, "value": metrics[metric]})
        if name == "taofcn":
            iso = patch_oracle_isolated(ckpt, test_set)
            report["models"]["patch-oracle analogue"] = {"isolated_accuracy": iso}
            rows.append({"model": "patch-oracle analogue", "metric": "isolated_accuracy", "value": iso})
        log.info("%s: %s", name, metrics)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["model", "metric", "value"])
        w.writeheader()
        for r in rows:
            w.writerow({**r, "value": f"{r['value']:.4f}"})
    (out / "report.json").write_text(json.dumps(report, indent=1, default=str) + "\n")
    return rows


# ---------------------------------------------------------------------------
# benchmark


@dataclass
class BenchReport:
    spec: str
    height: int
    width: int
    dense_seconds: float
    patch_seconds: float
    speedup: float
    max_abs_diff: float

    @property
    def valid(self) -> bool:
        return self.max_abs_diff <= 1e-5


class BenchMismatch(AssertionError):
    """Dense and per-patch outputs disagree; timings would be meaningless."""


def _median_time(fn, reps: int) -> tuple[float, object]:
    times, result = [], None
    for _ in range(reps):
        t0 = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times), result


def bench_dense_vs_patch(spec: NetworkSpec, sizes, reps: int = 3, seed: int = 0, params=None) -> list[BenchReport]:
    """Median wall time of dense inference vs looping the patch CNN over every pixel."""
    if spec.output_stride != 1:
        raise ValueError("benchmark needs a spec without strided pools")
    params = params if params is not None else init_params(spec, seed)
    rng = np.random.default_rng(seed)
    reports = []
    for h, w in sizes:
        image = rng.random((spec.input_channels, h, w), dtype=np.float32)
        padded = pad_for_dense(image, spec)
        dense_t, dense = _median_time(lambda: forward_dense(spec, params, padded), reps)
        patch_t, naive = _median_time(lambda: dense_by_patches(spec, params, padded), reps)
        diff = float(np.abs(dense.probs - naive.probs).max())
        if diff > 1e-5:
            raise BenchMismatch(f"{spec.name} {h}x{w}: dense and patch outputs differ by {diff:.3g}")
        reports.append(BenchReport(spec.name, h, w, dense_t, patch_t, patch_t / dense_t, diff))
    return reports


def write_bench_csv(reports, fh) -> None:
    w = csv.writer(fh)
    w.writerow(["spec", "height", "width", "dense_seconds", "patch_seconds", "speedup", "max_abs_diff"])
    for r in reports:
        w.writerow([r.spec, r.height, r.width, f"{r.dense_seconds:.6f}", f"{r.patch_seconds:.6f}",
                    f"{r.speedup:.3f}", f"{r.max_abs_diff:.3g}"])
