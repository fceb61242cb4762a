import numpy as np
import pytest

from taofcn.dataset import CLASSES, GenParams, StringSample, generate_samples
from taofcn.network import Checkpoint, DenseOutput, init_params, taofcn_spec
from taofcn.selftest import GRAD_TOL, gradient_check
from taofcn.tensor_core import TrainingDivergence, interleave_phases, softmax_channels
from taofcn.training import (
    BACKGROUND,
    PixelLabelMap,
    TrainConfig,
    TrainLog,
    core_box,
    evaluate_isolated,
    isolated_accuracy,
    make_label_map,
    pixel_cross_entropy,
    predict_dense,
    train,
    validation_split,
)


def _sample(boxes, transcript, h=12, w=12):
    return StringSample(np.zeros((1, h, w), np.float32), boxes, transcript)


# -- label maps ------------------------------------------------------------------

def test_full_core_labels_whole_box():
    lm = make_label_map(_sample([(2, 1, 6, 9)], "7"), core_fraction=1.0)
    assert (lm.labels[1:9, 2:6] == 7).all()
    assert (lm.labels != 7).sum() == 144 - 32
    assert (lm.weight_mask[1:9, 2:6] == 1).all()


def test_half_core_on_10x10_box():
    lm = make_label_map(_sample([(1, 1, 11, 11)], "3"), core_fraction=0.5)
    assert core_box((1, 1, 11, 11), 0.5) == (3, 3, 8, 8)
    assert (lm.labels == 3).sum() == 25
    assert (lm.labels[3:8, 3:8] == 3).all()


def test_background_weight_and_column_band():
    s = _sample([(2, 2, 6, 10)], "1")
    lm = make_label_map(s, core_fraction=0.5, background_weight=0.25)
    cx0, cy0, cx1, cy1 = core_box(s.boxes[0], 0.5)
    assert lm.weight_mask[0, 0] == pytest.approx(0.25)
    assert (lm.weight_mask[:cy0, cx0:cx1] == 0).all() and (lm.weight_mask[cy1:, cx0:cx1] == 0).all()
    plain = make_label_map(s, 0.5, 0.25, ignore_column_band=False)
    assert (plain.weight_mask[:cy0, cx0:cx1] == 0.25).all()
    np.testing.assert_array_equal(plain.labels, lm.labels)


def test_tiny_box_still_labelled():
    lm = make_label_map(_sample([(4, 4, 5, 5)], "."), core_fraction=0.1)
    assert lm.labels[4, 4] == CLASSES.index(".")


def test_label_histogram_matches_core_areas():
    samples = generate_samples(60, GenParams(seed=4))
    hist = np.zeros(len(CLASSES) + 1, np.int64)
    expect = np.zeros(len(CLASSES), np.int64)
    for s in samples:
        lm = make_label_map(s)
        assert lm.labels.shape == (s.height, s.width)
        hist += np.bincount(lm.labels.ravel(), minlength=len(CLASSES) + 1)
        for cls, box in zip(s.labels(), s.boxes):
            x0, y0, x1, y1 = core_box(box, 0.6)
            expect[cls] += (x1 - x0) * (y1 - y0)
    np.testing.assert_array_equal(hist[:-1], expect)


# -- loss --------------------------------------------------------------------------

def test_uniform_loss_is_log13():
    dense = DenseOutput(np.full((13, 4, 5), 1 / 13, np.float32))
    labels = PixelLabelMap(np.random.default_rng(0).integers(0, 13, (4, 5)), np.ones((4, 5)))
    loss, _ = pixel_cross_entropy(dense, labels)
    assert loss == pytest.approx(np.log(13), rel=1e-6)


def test_perfect_prediction_loss():
    lab = np.random.default_rng(1).integers(0, 13, (3, 7))
    probs = np.zeros((13, 3, 7), np.float32)
    np.put_along_axis(probs, lab[None], 1.0, axis=0)
    loss, grad = pixel_cross_entropy(DenseOutput(probs), PixelLabelMap(lab, np.ones((3, 7))))
    assert loss <= 1e-6
    assert np.abs(grad).max() == 0


def test_loss_gradient_finite_differences():
    rng = np.random.default_rng(2)
    z = rng.normal(size=(5, 3, 4))
    labels = PixelLabelMap(rng.integers(0, 5, (3, 4)), rng.random((3, 4)))

    def loss(zz):
        return pixel_cross_entropy(DenseOutput(softmax_channels(zz)), labels)

    _, g = loss(z)
    worst = 0.0
    for idx in np.ndindex(z.shape):
        zp, zm = z.copy(), z.copy()
        zp[idx] += 1e-3
        zm[idx] -= 1e-3
        num = (loss(zp)[0] - loss(zm)[0]) / 2e-3
        worst = max(worst, abs(num - g[idx]) / max(abs(num), abs(g[idx]), 1e-8))
    assert worst <= 1e-4


def test_fully_masked_loss_rejected():
    with pytest.raises(ValueError):
        pixel_cross_entropy(DenseOutput(np.full((2, 2, 2), 0.5)), PixelLabelMap(np.zeros((2, 2), int), np.zeros((2, 2))))


@pytest.mark.parametrize("mode", ["decimate", "shiftedmax"])
def test_end_to_end_gradient(mode):
    errors, n_params = gradient_check(3, mode, seed=1)
    assert n_params <= 500
    assert max(errors) <= GRAD_TOL


# -- training loop -----------------------------------------------------------------

@pytest.fixture(scope="module")
def five_strings():
    return generate_samples(5, GenParams(length_range=(3, 4), seed=3))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1)
    with pytest.raises(ValueError):
        TrainConfig(core_fraction=0)


def test_validation_split():
    assert validation_split(100) == 90
    assert validation_split(5) == 5


def test_zero_learning_rate_leaves_params(five_strings):
    spec = taofcn_spec(seed=1)
    start = Checkpoint(spec, init_params(spec, 1))
    ck, log = train(spec, five_strings, TrainConfig(learning_rate=0.0, epochs=1, seed=1), params=start.params)
    for a, b in zip(ck.params, start.params):
        assert a.weights.tobytes() == b.weights.tobytes() and a.bias.tobytes() == b.bias.tobytes()
    assert len(log.loss) == 1


def test_training_is_deterministic(five_strings):
    spec = taofcn_spec()
    cfg = TrainConfig(epochs=2, batch_size=2, seed=5)
    a, _ = train(spec, five_strings, cfg, validation=[])
    b, _ = train(spec, five_strings, cfg, validation=[])
    assert a.to_bytes() == b.to_bytes()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_carries_last_good_checkpoint(five_strings):
    with pytest.raises(TrainingDivergence) as info:
        train(taofcn_spec(), five_strings, TrainConfig(learning_rate=1e30, epochs=3, batch_size=5), validation=[])
    assert isinstance(info.value.checkpoint, Checkpoint)


def test_overfit_five_strings(five_strings, tmp_path):
    spec = taofcn_spec()
    ck, log = train(spec, five_strings, TrainConfig(epochs=80, batch_size=1), validation=[])
    assert log.loss[0] > log.loss[1] > log.loss[2]
    correct = total = 0
    for s in five_strings:
        lm = make_label_map(s)
        pred = predict_dense(spec, ck.params, s).probs.argmax(axis=0)
        m = lm.weight_mask > 0
        correct += int((pred[m] == lm.labels[m]).sum())
        total += int(m.sum())
    assert correct / total >= 0.99
    assert evaluate_isolated(ck, five_strings) == 100.0
    log.write_csv(tmp_path / "log.csv")
    assert (tmp_path / "log.csv").read_text().splitlines()[0] == "epoch,loss,val_accuracy,seconds"


def test_background_dominated_map_falls_back_to_lowest_id():
    spec = taofcn_spec()
    params = init_params(spec, 0)
    for p in params:
        p.weights[:] = 0
        p.bias[:] = 0
    params[-1].bias[BACKGROUND] = 10.0
    samples = generate_samples(3, GenParams(seed=1))
    # centre-pixel classification excludes background, so a flat map falls back to class 0
    ties = sum(s.labels().count(0) for s in samples)
    assert isolated_accuracy(spec, params, samples) == pytest.approx(100 * ties / sum(len(s.labels()) for s in samples))


def test_empty_training_set():
    with pytest.raises(ValueError):
        train(taofcn_spec(), [], TrainConfig())


def test_train_log_defaults():
    assert TrainLog().loss == []


@pytest.mark.parametrize("seed", range(3))
def test_branch_gradient_conservation(seed):
    # backward through a decimate split is a bijective scatter of the leaf gradients
    g = np.random.default_rng(seed).normal(size=(8, 3, 5, 6))
    back = interleave_phases(g)
    assert back.shape == (2, 3, 10, 12)
    assert np.abs(back).sum() == pytest.approx(np.abs(g).sum(), rel=1e-12)
    np.testing.assert_array_equal(np.sort(back.ravel()), np.sort(g.ravel()))
