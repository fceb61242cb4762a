"""Per-pixel supervision, momentum-SGD training through the branch tree,
and isolated-character evaluation."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .dataset import CLASSES, StringSample
from .network import (
    Checkpoint,
    DenseCache,
    DenseOutput,
    NetworkSpec,
    backward_dense,
    center_pixel_classify,
    flat_params,
    forward_dense,
    init_params,
    pad_for_dense,
)
from .tensor_core import DTYPE, TrainingDivergence, sgd_update, softmax_xent_bwd

log = logging.getLogger(__name__)

BACKGROUND = len(CLASSES)


@dataclass
class PixelLabelMap:
    labels: np.ndarray
    weight_mask: np.ndarray


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 6
    batch_size: int = 8
    seed: int = 0
    core_fraction: float = 0.6
    background_weight: float = 0.25
    ignore_column_band: bool = True

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0 < self.core_fraction <= 1:
            raise ValueError("core_fraction must lie in (0, 1]")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class TrainLog:
    loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "val_accuracy", "seconds"])
            for i, row in enumerate(zip(self.loss, self.val_accuracy, self.seconds), start=1):
                w.writerow([i, f"{row[0]:.6f}", f"{row[1]:.4f}", f"{row[2]:.2f}"])


def core_box(box, core_fraction: float) -> tuple[int, int, int, int]:
    """Centred sub-box covering ``core_fraction`` of each side (at least one pixel)."""
    x0, y0, x1, y1 = box
    cw = max(1, int(round((x1 - x0) * core_fraction)))
    ch = max(1, int(round((y1 - y0) * core_fraction)))
    cx0 = x0 + (x1 - x0 - cw) // 2
    cy0 = y0 + (y1 - y0 - ch) // 2
    return cx0, cy0, cx0 + cw, cy0 + ch


def make_label_map(sample: StringSample, core_fraction: float = 0.6, background_weight: float = 0.25,
                   ignore_column_band: bool = True) -> PixelLabelMap:
    """Character class inside each box core, background elsewhere.

    With ``ignore_column_band`` the pixels above and below a core, within its
    columns, get zero weight: they see the character but are not it, and
    labelling them background would drown the character in the column average
    the decoder uses.
    """
    h, w = sample.height, sample.width
    labels = np.full((h, w), BACKGROUND, dtype=np.int64)
    weights = np.full((h, w), background_weight, dtype=DTYPE)
    for cls, box in zip(sample.labels(), sample.boxes):
        cx0, cy0, cx1, cy1 = core_box(box, core_fraction)
        if ignore_column_band:
            weights[:, cx0:cx1] = 0.0
        labels[cy0:cy1, cx0:cx1] = cls
        weights[cy0:cy1, cx0:cx1] = 1.0
    return PixelLabelMap(labels, weights)


def _grid_labels(dense: DenseOutput, labels: PixelLabelMap) -> PixelLabelMap:
    _, gh, gw = dense.probs.shape
    s, (oy, ox) = dense.stride, dense.offset
    lab = labels.labels[oy::s, ox::s][:gh, :gw]
    wt = labels.weight_mask[oy::s, ox::s][:gh, :gw]
    if lab.shape != (gh, gw):
        raise ValueError(f"label grid {lab.shape} does not cover the dense grid {(gh, gw)}")
    return PixelLabelMap(lab, wt)


def pixel_cross_entropy(dense: DenseOutput, labels: PixelLabelMap) -> tuple[float, np.ndarray]:
    """Weighted mean of ``-log p(label)`` and its gradient w.r.t. the head logits."""
    grid = _grid_labels(dense, labels)
    total = float(grid.weight_mask.sum(dtype=np.float64))
    if total <= 0:
        raise ValueError("every position is masked; the weighted mean is undefined")
    rows, cols = np.indices(grid.labels.shape)
    p = dense.probs[grid.labels, rows, cols].astype(np.float64)
    nll = -np.log(np.maximum(p, 1e-30))
    loss = float((nll * grid.weight_mask).sum() / total)
    return loss, softmax_xent_bwd(dense.probs, grid.labels, grid.weight_mask)


def sample_gradient(spec: NetworkSpec, params, sample: StringSample, label_map: PixelLabelMap):
    """Loss and parameter gradients for one image."""
    cache = DenseCache()
    dense = forward_dense(spec, params, pad_for_dense(sample.image, spec), cache=cache)
    loss, g = pixel_cross_entropy(dense, label_map)
    return loss, backward_dense(spec, cache, g)


def validation_split(n: int) -> int:
    """Index where the validation tail (last 10%) starts."""
    return n - n // 10


def train(spec: NetworkSpec, dataset: list[StringSample], config: TrainConfig | None = None,
          params=None, validation: list[StringSample] | None = None):
    """Minibatch momentum SGD over whole images; returns ``(Checkpoint, TrainLog)``.

    Without an explicit ``validation`` list the last 10% of ``dataset`` is held
    out. A non-finite loss raises :class:`TrainingDivergence` carrying the last
    good checkpoint as ``.checkpoint``.
    """
    config = config or TrainConfig()
    if not dataset:
        raise ValueError("empty training set")
    if validation is None:
        cut = validation_split(len(dataset))
        dataset, validation = dataset[:cut], dataset[cut:]
    params = [p.copy() for p in params] if params is not None else init_params(spec, config.seed)
    flat = flat_params(params)
    velocity = [np.zeros_like(a) for a in flat]
    labels = [make_label_map(s, config.core_fraction, config.background_weight, config.ignore_column_band)
              for s in dataset]
    rng = np.random.default_rng(config.seed)
    tlog = TrainLog()

    def snapshot():
        return Checkpoint(spec, [p.copy() for p in params], CLASSES, config.seed,
                          {"epochs_done": len(tlog.loss)})

    good = snapshot()
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(dataset))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            acc = [np.zeros_like(a) for a in flat]
            for i in batch:
                loss, grads = sample_gradient(spec, params, dataset[i], labels[i])
                if not np.isfinite(loss):
                    err = TrainingDivergence(f"non-finite loss on sample {dataset[i].sample_id!r} in epoch {epoch + 1}")
                    err.checkpoint = good
                    raise err
                losses.append(loss)
                for a, g in zip(acc, flat_params(grads)):
                    a += g
            for a in acc:
                a /= DTYPE(len(batch))
            try:
                sgd_update(flat, acc, config.learning_rate, config.momentum, velocity)
            except TrainingDivergence as err:
                err.checkpoint = good
                raise
        tlog.loss.append(float(np.mean(losses)))
        tlog.val_accuracy.append(isolated_accuracy(spec, params, validation) if validation else float("nan"))
        tlog.seconds.append(time.perf_counter() - t0)
        good = snapshot()
        log.info("epoch %d loss %.4f val %.2f%% (%.1fs)", epoch + 1, tlog.loss[-1], tlog.val_accuracy[-1],
                 tlog.seconds[-1])
    return good, tlog


def predict_dense(spec: NetworkSpec, params, sample: StringSample) -> DenseOutput:
    return forward_dense(spec, params, pad_for_dense(sample.image, spec))


def isolated_predictions(spec: NetworkSpec, params, samples) -> tuple[list[int], list[int]]:
    truth, pred = [], []
    for s in samples:
        dense = predict_dense(spec, params, s)
        for cls, box in zip(s.labels(), s.boxes):
            truth.append(cls)
            pred.append(center_pixel_classify(dense, box))
    return truth, pred


def isolated_accuracy(spec: NetworkSpec, params, samples) -> float:
    """Percentage of characters whose box-centre prediction is correct."""
    truth, pred = isolated_predictions(spec, params, samples)
    if not truth:
        return 0.0
    return 100.0 * float(np.mean(np.asarray(truth) == np.asarray(pred)))


def evaluate_isolated(checkpoint: Checkpoint, testset) -> float:
    return isolated_accuracy(checkpoint.spec, checkpoint.params, testset)
