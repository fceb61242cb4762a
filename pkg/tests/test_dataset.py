import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taofcn.dataset import (
    CLASSES,
    GLYPHS,
    DataFormatError,
    GenParams,
    MissingEntryError,
    generate_dataset,
    generate_samples,
    load_dataset,
    load_sample,
    make_sample,
    normalize_transcript,
    read_manifest,
    read_pgm,
    render_string,
    save_sample,
    scale_glyph,
    write_pgm,
)
from taofcn.training import BACKGROUND, make_label_map


def test_inventory():
    assert len(CLASSES) == 12 and set(GLYPHS) == set(CLASSES)
    assert all(g.shape[0] == 7 for g in GLYPHS.values())


def test_normalize_transcript():
    assert normalize_transcript("1−2") == "1-2"
    with pytest.raises(ValueError):
        normalize_transcript("1a")


def test_params_validation():
    with pytest.raises(ValueError):
        GenParams(gap_range=(3, 1))
    with pytest.raises(ValueError):
        GenParams(noise=1.5)
    with pytest.raises(ValueError):
        GenParams(height=16)
    assert GenParams.from_dict(GenParams().to_dict()) == GenParams()


# -- rendering ---------------------------------------------------------------------

def test_empty_transcript_renders_background():
    s = render_string("", GenParams.no_jitter(), seed=1)
    assert s.boxes == [] and s.transcript == "" and s.image.max() == 0


def test_single_glyph_placement():
    s = render_string("7", GenParams.no_jitter(), seed=2)
    (x0, y0, x1, y1), = s.boxes
    glyph = scale_glyph("7", y1 - y0, x1 - x0)
    expected = np.zeros(s.image.shape[1:], np.float32)
    expected[y0:y1, x0:x1] = glyph
    np.testing.assert_allclose(s.image[0], expected, atol=0.5 / 255)


def test_render_determinism():
    p = GenParams(seed=0)
    a = render_string("12.-9", p, seed=77)
    b = render_string("12.-9", p, seed=77)
    assert a == b and a.image.tobytes() == b.image.tobytes()
    assert render_string("12.-9", p, seed=78).image.tobytes() != a.image.tobytes()


def test_values_quantised_unit_range():
    s = make_sample(GenParams(seed=3), "train", 0)
    assert s.image.dtype == np.float32 and 0 <= s.image.min() and s.image.max() <= 1
    assert np.allclose(s.image * 255, np.round(s.image * 255), atol=1e-4)


def test_slant_shears_columns():
    upright = scale_glyph("1", 14, 6)
    slanted = scale_glyph("1", 14, 6, slant=0.5)
    assert slanted.shape == (14, 6 + 6)  # round(0.5 * 13) == 6
    np.testing.assert_array_equal(slanted[-1, :6], upright[-1])
    np.testing.assert_array_equal(slanted[0, 6:12], upright[0])


@given(seed=st.integers(0, 10 ** 6))
@settings(max_examples=40, deadline=None)
def test_sample_invariants(seed):
    p = GenParams(seed=seed)
    s = make_sample(p, "train", seed % 97)
    assert len(s.boxes) == len(s.transcript)
    assert p.length_range[0] <= len(s.transcript) <= p.length_range[1]
    max_overlap = -p.touch_gap_range[0]
    for a, b in zip(s.boxes, s.boxes[1:]):
        assert a[0] < b[0]
        assert a[2] - b[0] <= max_overlap
    for x0, y0, x1, y1 in s.boxes:
        assert 0 <= x0 < x1 <= s.width and 0 <= y0 < y1 <= s.height


def test_label_soundness_without_noise():
    for s in generate_samples(100, GenParams(noise=0.0, seed=5)):
        lm = make_label_map(s)
        ys, xs = np.nonzero(lm.labels != BACKGROUND)
        for y, x in zip(ys, xs):
            cls = lm.labels[y, x]
            assert any(CLASSES[cls] == ch and x0 <= x < x1 and y0 <= y < y1
                       for ch, (x0, y0, x1, y1) in zip(s.transcript, s.boxes))


def test_class_coverage():
    counts = Counter()
    for s in generate_samples(1000, GenParams(seed=0)):
        counts.update(s.transcript)
    assert set(counts) == set(CLASSES)
    assert min(counts.values()) >= 20


def test_splits_are_independent():
    p = GenParams(seed=1)
    assert make_sample(p, "train", 0).image.tobytes() != make_sample(p, "test", 0).image.tobytes()


# -- files -------------------------------------------------------------------------

def test_save_load_round_trip(tmp_path):
    s = make_sample(GenParams(seed=2), "test", 4)
    img, side = save_sample(s, tmp_path)
    assert load_sample(img, side) == s


def test_pgm_round_trip_with_comment(tmp_path):
    raw = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
    (tmp_path / "c.pgm").write_bytes(b"P5\n# note\n4 3\n255\n" + raw.tobytes())
    np.testing.assert_array_equal(np.round(read_pgm(tmp_path / "c.pgm")[0] * 255), raw)
    write_pgm(tmp_path / "d.pgm", raw / 255)
    assert (tmp_path / "d.pgm").read_bytes() == b"P5\n4 3\n255\n" + raw.tobytes()


def test_truncated_pgm_reports_offset(tmp_path):
    s = make_sample(GenParams(seed=2), "test", 1)
    img, _ = save_sample(s, tmp_path)
    blob = img.read_bytes()
    img.write_bytes(blob[:-10])
    with pytest.raises(DataFormatError) as info:
        read_pgm(img)
    assert info.value.offset == len(blob) - 10
    img.write_bytes(blob[:5])
    with pytest.raises(DataFormatError):
        read_pgm(img)


def test_bad_sidecar(tmp_path):
    s = make_sample(GenParams(seed=2), "test", 1)
    img, side = save_sample(s, tmp_path)
    side.write_text('{"transcript": "12", "boxes": [[0,0,1,1]]')
    with pytest.raises(DataFormatError):
        load_sample(img, side)
    side.write_text(json.dumps({"transcript": "12", "boxes": [[0, 0, 1, 1]]}))
    with pytest.raises(DataFormatError):
        load_sample(img, side)


def test_empty_corpus(tmp_path):
    manifest = generate_dataset(tmp_path / "d", 0, 0)
    assert manifest["entries"] == []
    assert read_manifest(tmp_path / "d")["version"] == 1
    assert load_dataset(tmp_path / "d") == []


def test_corpus_round_trip_and_determinism(tmp_path):
    p = GenParams(seed=9)
    generate_dataset(tmp_path / "a", 6, 3, p)
    generate_dataset(tmp_path / "b", 6, 3, p)
    files_a = sorted(q.relative_to(tmp_path / "a") for q in (tmp_path / "a").rglob("*") if q.is_file())
    files_b = sorted(q.relative_to(tmp_path / "b") for q in (tmp_path / "b").rglob("*") if q.is_file())
    assert files_a == files_b and len(files_a) == 1 + 2 * 9
    for f in files_a:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert load_dataset(tmp_path / "a", "train") == generate_samples(6, p, "train")
    assert len(load_dataset(tmp_path / "a", "test")) == 3


def test_missing_entry_names_id(tmp_path):
    generate_dataset(tmp_path, 2, 0, GenParams(seed=1))
    (tmp_path / "train" / "train_00001.pgm").unlink()
    with pytest.raises(MissingEntryError, match="train_00001"):
        load_dataset(tmp_path)


def test_missing_manifest(tmp_path):
    with pytest.raises(MissingEntryError):
        read_manifest(tmp_path)
