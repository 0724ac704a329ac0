"""Synthetic pair generation, manifest IO, and image codecs.

Images travel as binary P6 portable pixmaps (8-bit) or as the package's
raw float64 tensor format; both decoders are dependency-free and
bit-exact.  Manifests are UTF-8 JSON lines, one record per pair, with
unknown fields preserved verbatim on rewrite.

The generator stands in for a scraped corpus: each class renders a
distinctive glyph pattern over a class-tinted background, the ground
truth caption names the class and the per-sample glyph count and color,
and the machine-generated descriptions mix those signal words with
deliberate noise keywords for the cleaning stage to filter.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from promptclip.errors import ImageFormatError, ManifestError

RAW_MAGIC = b"AQT1"


# ---------------------------------------------------------------------------
# image codecs


def write_ppm(path, img_uint8):
    arr = np.asarray(img_uint8)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise ImageFormatError(f"P6 writer needs HxWx3 uint8, got {arr.shape} {arr.dtype}")
    h, w, _ = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_ppm(path):
    """Binary P6 to float64 HxWx3 in [0, 1] (values k/255 exactly)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P6"):
        raise ImageFormatError(f"{path}: not a P6 pixmap")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(f"{path}: truncated P6 header")
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ImageFormatError(f"{path}: only maxval 255 supported, got {maxval}")
    need = w * h * 3
    raw = data[pos:pos + need]
    if len(raw) < need:
        raise ImageFormatError(f"{path}: truncated P6 payload")
    img = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
    return img.astype(np.float64) / 255.0


def write_raw_tensor(path, arr):
    arr = np.asarray(arr, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC)
        fh.write(struct.pack("<Q", arr.ndim))
        for d in arr.shape:
            fh.write(struct.pack("<Q", d))
        fh.write(arr.astype("<f8").tobytes(order="C"))


def read_raw_tensor(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(RAW_MAGIC):
        raise ImageFormatError(f"{path}: bad magic bytes")
    pos = len(RAW_MAGIC)
    if len(data) < pos + 8:
        raise ImageFormatError(f"{path}: truncated dimension header")
    (ndim,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    if len(data) < pos + 8 * ndim:
        raise ImageFormatError(f"{path}: truncated dimension list")
    dims = struct.unpack_from(f"<{ndim}Q", data, pos)
    pos += 8 * ndim
    need = int(np.prod(dims, dtype=np.int64)) * 8 if ndim else 8
    if len(data) < pos + need:
        raise ImageFormatError(f"{path}: truncated payload")
    return np.frombuffer(data, dtype="<f8", count=need // 8, offset=pos).reshape(dims).copy()


def nearest_resize(img, side):
    """Nearest-neighbor resize; index mapping floor(i * H / side)."""
    h, w = img.shape[:2]
    rows = (np.arange(side) * h) // side
    cols = (np.arange(side) * w) // side
    return img[rows][:, cols]


def center_crop(img, side):
    h, w = img.shape[:2]
    if side > h or side > w:
        raise ImageFormatError(f"cannot crop {h}x{w} to {side}")
    top, left = (h - side) // 2, (w - side) // 2
    return img[top:top + side, left:left + side]


def load_image(path, side=None):
    """Decode P6 or raw-tensor image; optionally crop square and resize."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic[:2] == b"P6":
        img = read_ppm(path)
    elif magic == RAW_MAGIC:
        img = read_raw_tensor(path)
        if img.ndim != 3:
            raise ImageFormatError(f"{path}: raw tensor is not an HxWxC image")
    else:
        raise ImageFormatError(f"{path}: unsupported magic bytes {magic!r}")
    if side is not None and img.shape[:2] != (side, side):
        img = center_crop(img, min(img.shape[0], img.shape[1]))
        img = nearest_resize(img, side)
    return img


def flip_horizontal(img):
    return img[:, ::-1].copy()


def flip_vertical(img):
    return img[::-1].copy()


# ---------------------------------------------------------------------------
# manifest IO

REQUIRED_FIELDS = ("id", "image", "caption_gt")


def _check_record(rec, line):
    if not isinstance(rec, dict):
        raise ManifestError("record is not an object", line)
    for key in REQUIRED_FIELDS:
        if key not in rec:
            raise ManifestError(f"missing field {key!r}", line)
    if not isinstance(rec["caption_gt"], str) or not rec["caption_gt"]:
        raise ManifestError("caption_gt must be a non-empty string", line)
    if not isinstance(rec["id"], str) or not rec["id"]:
        raise ManifestError("id must be a non-empty string", line)
    if "captions_gen" in rec and not isinstance(rec["captions_gen"], list):
        raise ManifestError("captions_gen must be a list of strings", line)


def load_manifest(path):
    """Strict JSONL parse; blank lines are skipped, anything else must parse."""
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"invalid JSON ({e.msg})", line_no) from e
            _check_record(rec, line_no)
            if rec["id"] in seen:
                raise ManifestError(f"duplicate id {rec['id']!r}", line_no)
            seen.add(rec["id"])
            records.append(rec)
    return records


def save_manifest(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def resolve_image_path(manifest_path, record):
    p = Path(record["image"])
    return p if p.is_absolute() else Path(manifest_path).parent / p


# ---------------------------------------------------------------------------
# synthetic corpus

COLOR_WORDS = {
    "red": (224, 48, 48),
    "green": (48, 208, 64),
    "blue": (64, 96, 240),
    "white": (236, 236, 236),
}

COUNT_WORDS = {"two": 2, "three": 3, "four": 4, "five": 5}

NOISE_KEYWORDS = (
    "keyboard", "violin", "nebula", "tractor", "biscuit", "lantern",
    "cactus", "staircase", "helmet", "puddle", "saxophone", "umbrella",
    "typewriter", "chimney", "walrus", "parchment",
)


@dataclass
class GlyphClass:
    name: str                      # plural noun used in captions and labels
    glyph: str                     # ring | bar | cross | dot
    background: tuple[int, int, int]
    templates: tuple[str, ...]     # may use {count}, {color}, {name} slots


DEFAULT_CLASSES = (
    GlyphClass("rings", "ring", (12, 20, 64),
               ("a photo of {count} {color} rings",
                "{count} {color} rings drifting on a deep field")),
    GlyphClass("bars", "bar", (12, 52, 22),
               ("a photo of {count} {color} bars",
                "{count} {color} bars stacked over a mossy field")),
    GlyphClass("crosses", "cross", (64, 14, 18),
               ("a photo of {count} {color} crosses",
                "{count} {color} crosses scattered on an ember field")),
    GlyphClass("dots", "dot", (42, 42, 52),
               ("a photo of {count} {color} dots",
                "{count} {color} dots sprinkled across a slate field")),
)


@dataclass
class SyntheticSpec:
    pairs: int = 64
    classes: tuple[GlyphClass, ...] = DEFAULT_CLASSES
    image_side: int = 64
    seed: int = 0
    noise_keywords: tuple[str, ...] = NOISE_KEYWORDS
    noise_per_caption: int = 3
    image_format: str = "ppm"      # ppm | raw

    def validate(self):
        if self.pairs < 1:
            raise ValueError("pairs must be >= 1")
        if not self.classes:
            raise ValueError("at least one class required")
        if self.image_side < 8:
            raise ValueError("image_side too small to draw glyphs")
        if self.image_format not in ("ppm", "raw"):
            raise ValueError(f"image_format must be ppm or raw, got {self.image_format}")
        for c in self.classes:
            if not c.templates:
                raise ValueError(f"class {c.name} has no caption template")
        return self


def _draw_glyph(canvas, glyph, cy, cx, radius, rgb):
    side = canvas.shape[0]
    yy, xx = np.ogrid[:side, :side]
    if glyph == "ring":
        dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        mask = np.abs(dist - radius) <= max(1.5, radius * 0.28)
    elif glyph == "bar":
        mask = (np.abs(yy - cy) <= max(1, radius // 3)) & (np.abs(xx - cx) <= radius)
    elif glyph == "cross":
        arm = max(1, radius // 3)
        mask = ((np.abs(yy - cy) <= arm) & (np.abs(xx - cx) <= radius)) | \
               ((np.abs(xx - cx) <= arm) & (np.abs(yy - cy) <= radius))
    elif glyph == "dot":
        dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        mask = dist <= max(2, radius // 2)
    else:
        raise ValueError(f"unknown glyph kind {glyph!r}")
    canvas[mask] = rgb


def render_sample(cls, count_word, color_word, side, rng):
    """Draw one uint8 image: tinted noisy background plus glyphs."""
    base = np.array(cls.background, dtype=np.float64)
    canvas = np.tile(base, (side, side, 1))
    canvas += rng.integers(0, 18, size=(side, side, 1)).astype(np.float64)
    canvas = np.clip(canvas, 0, 255).astype(np.uint8)
    rgb = np.array(COLOR_WORDS[color_word], dtype=np.uint8)
    margin = side // 6
    for _ in range(COUNT_WORDS[count_word]):
        cy = int(rng.integers(margin, side - margin))
        cx = int(rng.integers(margin, side - margin))
        radius = int(rng.integers(side // 10, side // 6))
        _draw_glyph(canvas, cls.glyph, cy, cx, radius, rgb)
    return canvas


_POSITIONS = ("top", "bottom", "left edge", "right edge", "center")


def _generated_descriptions(cls, count_word, color_word, rng, spec):
    """Image- and instance-level machine descriptions, noise included."""
    noise = list(rng.choice(spec.noise_keywords, size=spec.noise_per_caption,
                            replace=False))
    image_level = (
        f"the frame shows {count_word} {color_word} {cls.name} "
        f"beside {' and '.join(noise)}"
    )
    singular = cls.glyph
    pos = _POSITIONS[int(rng.integers(0, len(_POSITIONS)))]
    instance_level = f"a {color_word} {singular} near the {pos}"
    return [image_level, instance_level]


def generate_synthetic(spec, out_dir):
    """Write images plus manifest.jsonl; byte-identical for identical seeds.

    Returns the manifest path.  Within each class the (count, color)
    attribute pairs are dealt from a shuffled deck without replacement,
    so ground-truth captions stay distinct while the deck lasts.
    """
    spec.validate()
    out = Path(out_dir)
    images = out / "images"
    images.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    combos = [(cw, kw) for cw in COUNT_WORDS for kw in COLOR_WORDS]
    decks = {}
    for ci, cls in enumerate(spec.classes):
        deck = list(combos)
        deck_rng = np.random.default_rng(spec.seed * 1009 + ci)
        deck_rng.shuffle(deck)
        decks[cls.name] = deck

    records = []
    ext = "ppm" if spec.image_format == "ppm" else "aqt"
    for i in range(spec.pairs):
        cls = spec.classes[i % len(spec.classes)]
        deck = decks[cls.name]
        count_word, color_word = deck[(i // len(spec.classes)) % len(deck)]
        img = render_sample(cls, count_word, color_word, spec.image_side, rng)
        name = f"pair-{i:04d}.{ext}"
        if spec.image_format == "ppm":
            write_ppm(images / name, img)
        else:
            write_raw_tensor(images / name, img.astype(np.float64) / 255.0)
        template = cls.templates[(i // len(spec.classes)) % len(cls.templates)]
        caption = template.format(count=count_word, color=color_word, name=cls.name)
        records.append({
            "id": f"pair-{i:04d}",
            "image": f"images/{name}",
            "caption_gt": caption,
            "captions_gen": _generated_descriptions(cls, count_word, color_word, rng, spec),
            "label": cls.name,
        })
    manifest = out / "manifest.jsonl"
    save_manifest(records, manifest)
    return manifest
