import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taofcn.decoder import (
    BeamConfig,
    ColumnSeries,
    DecodePath,
    EnumerationRefused,
    beam_search,
    check_tiling,
    count_paths,
    decode_dense,
    exhaustive_decode,
    integrate_columns,
    score_path,
)
from taofcn.network import DenseOutput
from taofcn.selftest import SCORE_TOL, beam_equivalence, random_series

DIGITS = "0123456789-."


def peaked(labels, peak, classes=13):
    """Series whose column ``t`` puts ``peak`` on ``labels[t]`` and spreads the rest."""
    p = np.full((len(labels), classes), (1 - peak) / (classes - 1))
    p[np.arange(len(labels)), labels] = peak
    return p


# -- integration -------------------------------------------------------------------

def test_integrate_two_rows():
    probs = np.concatenate([np.array([1.0, 0.0]).reshape(2, 1, 1), np.array([0.0, 1.0]).reshape(2, 1, 1)], axis=1)
    s = integrate_columns(DenseOutput(probs), "a")
    np.testing.assert_allclose(s.probs, [[0.5, 0.5]])


def test_integrate_single_row_is_identity():
    probs = np.random.default_rng(0).dirichlet(np.ones(4), size=6).T.reshape(4, 1, 6)
    np.testing.assert_allclose(integrate_columns(DenseOutput(probs), "abc").probs, probs[:, 0, :].T)


def test_integrated_columns_sum_to_one():
    rng = np.random.default_rng(1)
    probs = rng.dirichlet(np.ones(13), size=(9, 20)).transpose(2, 0, 1).astype(np.float32)
    s = integrate_columns(DenseOutput(probs), DIGITS)
    assert np.abs(s.probs.sum(axis=1) - 1).max() <= 1e-5
    np.testing.assert_allclose(s.probs, probs.astype(np.float64).mean(axis=1).T)


def test_series_keeps_stride():
    s = integrate_columns(DenseOutput(np.full((2, 3, 4), 0.5), stride=4), "a")
    assert s.stride == 4 and s.width == 4


# -- scoring -----------------------------------------------------------------------

def test_score_two_columns():
    s = ColumnSeries([[0.9, 0.1], [0.2, 0.8]], "a")
    assert score_path(DecodePath([(0, 1, 0), (1, 2, 1)]), s) == pytest.approx(0.85)


def test_score_all_background():
    s = ColumnSeries(peaked([2] * 5, 0.7, 3), "ab")
    assert score_path(DecodePath([(0, 5, 2)]), s) == pytest.approx(0.7)


def test_score_matches_direct_sum():
    rng = np.random.default_rng(3)
    s = random_series(rng, 8)
    cuts = sorted({0, s.width, *rng.integers(1, s.width + 1, 3).tolist()})
    segs = [(a, b, int(rng.integers(s.probs.shape[1]))) for a, b in zip(cuts, cuts[1:])]
    direct = sum(s.probs[t, l] for a, b, l in segs for t in range(a, b)) / s.width
    assert score_path(DecodePath(segs), s) == pytest.approx(direct, abs=1e-12)


@pytest.mark.parametrize("segs", [[(0, 2, 0)], [(0, 2, 0), (3, 4, 0)], [(0, 2, 0), (2, 2, 1), (2, 4, 0)]])
def test_non_tiling_path_rejected(segs):
    with pytest.raises(ValueError):
        check_tiling(DecodePath(segs), 4)


# -- beam search -------------------------------------------------------------------

def test_confident_background_decodes_empty():
    res = beam_search(ColumnSeries(peaked([12] * 10, 0.995), DIGITS))
    assert res.transcript == ""


def test_single_seven():
    series = ColumnSeries(peaked([12, 12, 7, 7, 7, 12], 0.95), DIGITS)
    res = beam_search(series, BeamConfig(16, 2))
    assert res.transcript == "7"
    oracle = exhaustive_decode(series, 2)
    assert oracle.transcript == "7" and abs(oracle.score - res.score) <= SCORE_TOL


def test_adjacent_characters_allowed():
    res = beam_search(ColumnSeries(peaked([1, 1, 2, 2], 0.9), DIGITS), BeamConfig(16, 2))
    assert res.transcript == "12"
    assert res.path.segments == [(0, 2, 1), (2, 4, 2)]


def test_repeated_character_needs_two_segments():
    res = beam_search(ColumnSeries(peaked([3, 3, 12, 3, 3], 0.9), DIGITS))
    assert res.transcript == "33"


def test_beam_matches_exhaustive_oracle():
    for series, beam, oracle in beam_equivalence(100, seed=3):
        assert beam.transcript == oracle.transcript
        assert abs(beam.score - oracle.score) <= SCORE_TOL


@pytest.mark.parametrize("mw", [1, 3])
def test_beam_matches_oracle_other_min_widths(mw):
    for series, beam, oracle in beam_equivalence(40, seed=mw, min_char_width=mw):
        assert beam.transcript == oracle.transcript
        assert abs(beam.score - oracle.score) <= SCORE_TOL


def test_decoded_path_is_valid():
    rng = np.random.default_rng(7)
    for _ in range(50):
        s = random_series(rng, 12)
        res = beam_search(s, BeamConfig(4, 2))
        check_tiling(res.path, s.width)
        assert all(e - b >= 2 for b, e, l in res.path.segments if l != s.background)
        assert res.score == pytest.approx(score_path(res.path, s), abs=1e-12)


@given(seed=st.integers(0, 2 ** 32 - 1))
@settings(max_examples=60, deadline=None)
def test_beam_monotone_in_width_single_column_chars(seed):
    s = random_series(np.random.default_rng(seed), 10)
    scores = [beam_search(s, BeamConfig(b, 1)).score for b in (1, 2, 3, 5, 8, 100)]
    assert all(b >= a - 1e-12 for a, b in zip(scores, scores[1:]))


def test_beam_not_monotone_with_min_width_two():
    # a wider beam can keep an unfinished run alive that displaces a closable hypothesis
    p = [[0.46, 0.30, 0.24], [0.50, 0.15, 0.35], [0.16, 0.69, 0.15]]
    s = ColumnSeries(p, "ab")
    assert beam_search(s, BeamConfig(3, 2)).score < beam_search(s, BeamConfig(2, 2)).score
    assert beam_search(s, BeamConfig(100, 2)).score == pytest.approx(exhaustive_decode(s, 2).score)


def test_beam_scale_invariance_of_ranking():
    # multiplying every probability by a constant scales every path score alike
    s = random_series(np.random.default_rng(4), 8)
    a = beam_search(s, BeamConfig(8, 2))
    b = beam_search(ColumnSeries(s.probs * 3.0, s.charset), BeamConfig(8, 2))
    assert a.transcript == b.transcript and b.score == pytest.approx(3 * a.score)


def test_unclosable_series_falls_back_to_background():
    s = ColumnSeries([[0.9, 0.1]], "a")
    res = beam_search(s, BeamConfig(1, 2))
    assert res.transcript == "" and res.score == pytest.approx(0.1)


def test_beam_config_validation():
    with pytest.raises(ValueError):
        BeamConfig(0, 2)
    with pytest.raises(ValueError):
        BeamConfig(4, 0)


# -- exhaustive oracle -------------------------------------------------------------

def test_exhaustive_single_column():
    s = ColumnSeries([[0.6, 0.1, 0.3]], "ab")
    assert exhaustive_decode(s, 1).transcript == "a"
    assert exhaustive_decode(s, 2).transcript == ""


def test_uniform_columns_tie_to_empty():
    s = ColumnSeries(np.full((2, 13), 1 / 13), DIGITS)
    res = exhaustive_decode(s, 2)
    assert res.score == pytest.approx(1 / 13) and res.transcript == ""
    assert beam_search(s).transcript == ""


def test_exhaustive_w6_matches_beam():
    s = ColumnSeries(np.random.default_rng(11).dirichlet(np.ones(4), size=6), "abc")
    a, b = exhaustive_decode(s, 2), beam_search(s, BeamConfig(10_000, 2))
    assert a.transcript == b.transcript and abs(a.score - b.score) <= SCORE_TOL


def test_count_paths_small_cases():
    # W=2, labels {a, bg}, min width 2: [bg][bg], [bg bg], [a a]
    assert count_paths(2, 2, 2) == 3
    # min width 1 allows every label on every column plus any cut pattern
    assert count_paths(2, 3, 1) == 3 * 3 + 3
    assert count_paths(1, 13, 2) == 1


def test_enumeration_guard():
    s = ColumnSeries(np.full((12, 13), 1 / 13), DIGITS)
    with pytest.raises(EnumerationRefused):
        exhaustive_decode(s, 2)


# -- end to end --------------------------------------------------------------------

def test_decode_dense_and_json():
    probs = np.zeros((3, 4, 6), np.float32)
    probs[2] = 1.0
    probs[:, :, 2:5] = 0
    probs[0, :, 2:5] = 1.0
    res = decode_dense(DenseOutput(probs), "ab")
    assert res.transcript == "a"
    doc = json.loads(res.to_json("s1", "ab", 2))
    assert doc["sample_id"] == "s1" and doc["transcript"] == "a"
    assert [seg[2] for seg in doc["segments"]] == [None, "a", None]
    assert doc["segments"][1][:2] == [2, 5]
