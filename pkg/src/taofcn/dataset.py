"""Seeded synthetic digit-string corpus with per-character boxes.

Glyphs are 7-row bitmaps, resampled, slanted and placed left to right.
Samples are stored as binary PGM plus a JSON sidecar; a corpus directory
holds one ``manifest.json`` listing every sample of both splits.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .tensor_core import DTYPE

CLASSES = "0123456789-."
ALIASES = {"−": "-"}
MANIFEST_VERSION = 1

_GLYPH_ROWS = {
    "0": [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."],
    "1": ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."],
    "2": [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"],
    "3": ["####.", "....#", "....#", ".###.", "....#", "....#", "####."],
    "4": ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."],
    "5": ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."],
    "6": ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."],
    "7": ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."],
    "8": [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."],
    "9": [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."],
    "-": ["....", "....", "....", "####", "....", "....", "...."],
    ".": ["..", "..", "..", "..", "..", "##", "##"],
}

GLYPHS = {c: np.array([[ch == "#" for ch in row] for row in rows], dtype=DTYPE)
          for c, rows in _GLYPH_ROWS.items()}


class DataFormatError(ValueError):
    """A sample or manifest file is malformed."""

    def __init__(self, message: str, offset: int | None = None, path=None):
        where = f" at byte {offset}" if offset is not None else ""
        src = f"{path}: " if path is not None else ""
        super().__init__(f"{src}{message}{where}")
        self.offset = offset


class MissingEntryError(FileNotFoundError):
    """A manifest entry points at a file that does not exist."""


@dataclass
class GenParams:
    height: int = 32
    length_range: tuple[int, int] = (3, 8)
    glyph_height: int = 22
    scale_jitter: tuple[float, float] = (0.85, 1.15)
    aspect_jitter: tuple[float, float] = (0.8, 1.25)
    slant_range: tuple[float, float] = (-0.25, 0.25)
    vertical_jitter: int = 2
    gap_range: tuple[int, int] = (1, 4)
    touch_frac: float = 0.1
    touch_gap_range: tuple[int, int] = (-1, 0)
    ink_range: tuple[float, float] = (0.7, 1.0)
    margin_range: tuple[int, int] = (2, 6)
    noise: float = 0.02
    seed: int = 0

    def __post_init__(self):
        for name in ("length_range", "scale_jitter", "aspect_jitter", "slant_range", "gap_range",
                     "touch_gap_range", "ink_range", "margin_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is empty: {lo} > {hi}")
            setattr(self, name, (lo, hi))
        for name in ("noise", "touch_frac"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.length_range[0] < 0 or self.vertical_jitter < 0:
            raise ValueError("negative length or jitter")
        if round(self.glyph_height * self.scale_jitter[1]) > self.height:
            raise ValueError("glyphs can be taller than the image")

    @classmethod
    def no_jitter(cls, **kw) -> "GenParams":
        base = dict(scale_jitter=(1.0, 1.0), aspect_jitter=(1.0, 1.0), slant_range=(0.0, 0.0),
                    vertical_jitter=0, ink_range=(1.0, 1.0), noise=0.0, touch_frac=0.0)
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "GenParams":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class StringSample:
    image: np.ndarray
    boxes: list[tuple[int, int, int, int]]
    transcript: str
    sample_id: str = ""
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def height(self) -> int:
        return self.image.shape[-2]

    @property
    def width(self) -> int:
        return self.image.shape[-1]

    def labels(self) -> list[int]:
        return [CLASSES.index(c) for c in self.transcript]

    def __eq__(self, other):
        if not isinstance(other, StringSample):
            return NotImplemented
        return (np.array_equal(self.image, other.image) and self.boxes == other.boxes
                and self.transcript == other.transcript and self.sample_id == other.sample_id
                and self.seed == other.seed)


def normalize_transcript(text: str) -> str:
    text = "".join(ALIASES.get(c, c) for c in text)
    bad = sorted(set(text) - set(CLASSES))
    if bad:
        raise ValueError(f"unknown characters {bad!r}; the inventory is {CLASSES!r}")
    return text


def scale_glyph(char: str, height: int, width: int, slant: float = 0.0) -> np.ndarray:
    """Resample a glyph bitmap to ``height x width`` and shear it by ``slant`` px per row."""
    g = GLYPHS[char]
    z = ndimage.zoom(g, (height / g.shape[0], width / g.shape[1]), order=1, grid_mode=True, mode="nearest")
    z = np.clip(z[:height, :width], 0.0, 1.0)
    shifts = [int(round(slant * (height - 1 - r))) for r in range(height)]
    lo = min(shifts)
    span = max(shifts) - lo
    out = np.zeros((height, width + span), dtype=DTYPE)
    for r, s in enumerate(shifts):
        out[r, s - lo:s - lo + width] = z[r]
    return out


def _quantize(img: np.ndarray) -> np.ndarray:
    return (np.round(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8) / DTYPE(255)).astype(DTYPE)


def _rng(*keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


def render_string(transcript: str, params: GenParams | None = None, seed: int = 0,
                  sample_id: str = "") -> StringSample:
    """Render ``transcript`` with draws from ``seed``; boxes are recorded before noise."""
    params = params or GenParams()
    transcript = normalize_transcript(transcript)
    rng = _rng(seed, 0)
    glyphs, sizes = [], []
    for ch in transcript:
        s = rng.uniform(*params.scale_jitter)
        a = rng.uniform(*params.aspect_jitter)
        gh = max(3, min(params.height, int(round(params.glyph_height * s))))
        gw = max(1, int(round(GLYPHS[ch].shape[1] * gh / 7 * a)))
        slant = rng.uniform(*params.slant_range)
        ink = rng.uniform(*params.ink_range)
        glyphs.append(scale_glyph(ch, gh, gw, slant) * DTYPE(ink))
        jitter = int(rng.integers(-params.vertical_jitter, params.vertical_jitter + 1))
        top = int(np.clip((params.height - gh) // 2 + jitter, 0, params.height - gh))
        sizes.append(top)
    gaps = []
    for _ in range(max(len(transcript) - 1, 0)):
        if rng.random() < params.touch_frac:
            gaps.append(int(rng.integers(params.touch_gap_range[0], params.touch_gap_range[1] + 1)))
        else:
            gaps.append(int(rng.integers(params.gap_range[0], params.gap_range[1] + 1)))
    left = int(rng.integers(params.margin_range[0], params.margin_range[1] + 1))
    right = int(rng.integers(params.margin_range[0], params.margin_range[1] + 1))
    width = left + right + sum(g.shape[1] for g in glyphs) + sum(gaps)
    image = np.zeros((params.height, max(width, 1)), dtype=DTYPE)
    boxes = []
    x = left
    for i, (g, top) in enumerate(zip(glyphs, sizes)):
        h, w = g.shape
        region = image[top:top + h, x:x + w]
        np.maximum(region, g, out=region)
        boxes.append((x, top, x + w, top + h))
        x += w + (gaps[i] if i < len(gaps) else 0)
    if params.noise > 0:
        flip = rng.random(image.shape) < params.noise
        image = np.where(flip, 1.0 - image, image).astype(DTYPE)
    return StringSample(_quantize(image)[None], boxes, transcript, sample_id, int(seed))


def random_transcript(rng: np.random.Generator, params: GenParams) -> str:
    n = int(rng.integers(params.length_range[0], params.length_range[1] + 1))
    return "".join(CLASSES[i] for i in rng.integers(0, len(CLASSES), size=n))


_SPLIT_CODES = {"train": 1, "test": 2}


def sample_seed(master_seed: int, split: str, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, _SPLIT_CODES[split], index]).generate_state(1)[0])


def make_sample(params: GenParams, split: str, index: int) -> StringSample:
    seed = sample_seed(params.seed, split, index)
    transcript = random_transcript(_rng(seed, 1), params)
    return render_string(transcript, params, seed, f"{split}_{index:05d}")


def generate_samples(n: int, params: GenParams, split: str = "train") -> list[StringSample]:
    return [make_sample(params, split, i) for i in range(n)]


# ---------------------------------------------------------------------------
# file formats


def write_pgm(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim == 3:
        img = img[0]
    data = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
    h, w = data.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + data.tobytes())


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    pos = 0
    tokens = []
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataFormatError("truncated PGM header", start, path)
        tokens.append((blob[start:pos], start))
    magic, (wtok, wpos), (htok, hpos), (mtok, mpos) = tokens[0][0], tokens[1], tokens[2], tokens[3]
    if magic != b"P5":
        raise DataFormatError(f"bad PGM magic {magic!r}", 0, path)
    try:
        w, h, maxval = int(wtok), int(htok), int(mtok)
    except ValueError:
        raise DataFormatError("non-numeric PGM header field", wpos, path) from None
    if maxval != 255 or w < 1 or h < 1:
        raise DataFormatError(f"unsupported PGM geometry {w}x{h} maxval {maxval}", mpos, path)
    pos += 1  # single whitespace after maxval
    need = w * h
    if len(blob) - pos < need:
        raise DataFormatError(f"truncated PGM raster: expected {need} bytes, found {len(blob) - pos}", len(blob), path)
    raster = np.frombuffer(blob, np.uint8, need, pos).reshape(h, w)
    return (raster / DTYPE(255)).astype(DTYPE)[None]


def save_sample(sample: StringSample, directory, stem: str | None = None) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = stem or sample.sample_id or "sample"
    image_path, sidecar_path = directory / f"{stem}.pgm", directory / f"{stem}.json"
    write_pgm(image_path, sample.image)
    sidecar = {"id": sample.sample_id, "transcript": sample.transcript,
               "boxes": [list(b) for b in sample.boxes], "seed": sample.seed,
               "height": sample.height, "width": sample.width}
    sidecar_path.write_text(json.dumps(sidecar, sort_keys=True) + "\n")
    return image_path, sidecar_path


def load_sample(image_path, sidecar_path) -> StringSample:
    image = read_pgm(image_path)
    text = Path(sidecar_path).read_bytes()
    try:
        meta = json.loads(text.decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"malformed sidecar JSON ({exc.msg})", exc.pos, sidecar_path) from None
    except UnicodeDecodeError as exc:
        raise DataFormatError("sidecar is not UTF-8", exc.start, sidecar_path) from None
    try:
        boxes = [tuple(int(v) for v in b) for b in meta["boxes"]]
        sample = StringSample(image, boxes, normalize_transcript(meta["transcript"]),
                              meta.get("id", ""), int(meta.get("seed", 0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"bad sidecar content: {exc}", None, sidecar_path) from None
    if len(sample.boxes) != len(sample.transcript):
        raise DataFormatError("box count differs from transcript length", None, sidecar_path)
    return sample


def generate_dataset(out_dir, n_train: int, n_test: int, params: GenParams | None = None) -> dict:
    """Write both splits and ``manifest.json`` under ``out_dir``; returns the manifest."""
    params = params or GenParams()
    if n_train < 0 or n_test < 0:
        raise ValueError("sample counts must be non-negative")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for split, n in (("train", n_train), ("test", n_test)):
        for i in range(n):
            s = make_sample(params, split, i)
            img, side = save_sample(s, out / split)
            entries.append({"id": s.sample_id, "split": split,
                            "image_path": str(img.relative_to(out)),
                            "sidecar_path": str(side.relative_to(out))})
    manifest = {"version": MANIFEST_VERSION, "params": params.to_dict(), "entries": entries}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def read_manifest(data_dir) -> dict:
    path = Path(data_dir) / "manifest.json"
    if not path.exists():
        raise MissingEntryError(f"no manifest.json in {data_dir}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"malformed manifest ({exc.msg})", exc.pos, path) from None
    if not isinstance(manifest, dict) or "entries" not in manifest:
        raise DataFormatError("manifest lacks an entries list", None, path)
    return manifest


def load_dataset(data_dir, split: str | None = None) -> list[StringSample]:
    data_dir = Path(data_dir)
    out = []
    for e in read_manifest(data_dir)["entries"]:
        if split is not None and e.get("split") != split:
            continue
        img, side = data_dir / e["image_path"], data_dir / e["sidecar_path"]
        for p in (img, side):
            if not p.exists():
                raise MissingEntryError(f"manifest entry {e['id']!r}: missing file {p}")
        out.append(load_sample(img, side))
    return out
