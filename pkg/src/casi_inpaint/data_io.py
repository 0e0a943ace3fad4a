"""Netpbm codecs, dataset manifests, the toy shape dataset, mean-fill and
the nearest-neighbour inpainting baseline."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import SeededRng
from .tensor import ContractError, DimensionError


class NetpbmError(ValueError):
    pass


class BadMagicError(NetpbmError):
    pass


class MaxvalError(NetpbmError):
    pass


class TruncatedError(NetpbmError):
    pass


class ManifestError(ValueError):
    pass


# --------------------------------------------------------------------- netpbm


@dataclass
class ImageRecord:
    pixels: np.ndarray  # H, W, 3 floats in [0, 1]
    path: str | None = None
    label: int | None = None


def _read_header(buf: bytes) -> tuple[bytes, list[int], int]:
    """Returns magic, [width, height, maxval] and payload offset."""
    if len(buf) < 2 or buf[:2] not in (b"P5", b"P6"):
        raise BadMagicError(f"not a binary PGM/PPM (magic {buf[:2]!r})")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        if pos >= len(buf):
            raise TruncatedError("header ends early")
        ch = buf[pos : pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            end = buf.find(b"\n", pos)
            if end < 0:
                raise TruncatedError("header ends inside a comment")
            pos = end + 1
        elif ch.isdigit():
            start = pos
            while pos < len(buf) and buf[pos : pos + 1].isdigit():
                pos += 1
            fields.append(int(buf[start:pos]))
        else:
            raise NetpbmError(f"unexpected byte {ch!r} in header")
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise TruncatedError("missing whitespace after maxval")
    return buf[:2], fields, pos + 1


def read_pnm(path) -> np.ndarray:
    """Raw uint8 pixels: (H, W) for P5, (H, W, 3) for P6."""
    buf = Path(path).read_bytes()
    magic, (width, height, maxval), off = _read_header(buf)
    if maxval != 255:
        raise MaxvalError(f"maxval must be 255, got {maxval}")
    chans = 3 if magic == b"P6" else 1
    need = width * height * chans
    payload = buf[off : off + need]
    if len(payload) < need:
        raise TruncatedError(f"payload has {len(payload)} of {need} bytes")
    arr = np.frombuffer(payload, dtype=np.uint8)
    return arr.reshape((height, width, 3) if chans == 3 else (height, width)).copy()


def write_pnm(arr: np.ndarray, path) -> None:
    arr = np.asarray(arr, dtype=np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    elif arr.ndim == 2:
        magic = b"P5"
    else:
        raise DimensionError(f"cannot encode array of shape {arr.shape}")
    h, w = arr.shape[:2]
    data = magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(arr).tobytes()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def quantize(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def read_image(path) -> ImageRecord:
    raw = read_pnm(path)
    if raw.ndim == 2:
        raw = np.repeat(raw[:, :, None], 3, axis=2)
    return ImageRecord(raw.astype(np.float64) / 255.0, str(path))


def write_image(img, path) -> None:
    pixels = img.pixels if isinstance(img, ImageRecord) else img
    write_pnm(quantize(pixels), path)


def read_mask(path) -> np.ndarray:
    raw = read_pnm(path)
    if raw.ndim != 2:
        raise NetpbmError("masks must be single-channel PGM (P5)")
    return (raw >= 128).astype(np.float64)


def write_mask(mask: np.ndarray, path) -> None:
    write_pnm(np.where(np.asarray(mask) > 0, 255, 0).astype(np.uint8), path)


# ------------------------------------------------------------------- manifest


@dataclass
class Manifest:
    entries: list[tuple[str, int]]
    split: str = "train"
    categories: list[str] = field(default_factory=list)
    root: Path | None = None

    def __len__(self) -> int:
        return len(self.entries)

    def paths(self) -> list[Path]:
        base = self.root or Path(".")
        return [base / p for p, _ in self.entries]

    def labels(self) -> np.ndarray:
        return np.array([lab for _, lab in self.entries], dtype=np.int64)

    def load_images(self) -> np.ndarray:
        """Stack of H, W, 3 images in manifest order."""
        imgs = [read_image(p).pixels for p in self.paths()]
        if len({im.shape for im in imgs}) > 1:
            raise DimensionError("manifest images differ in size")
        return np.stack(imgs)


def load_manifest(path) -> Manifest:
    path = Path(path)
    entries: list[tuple[str, int]] = []
    categories: list[str] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("categories:"):
                categories = [c.strip() for c in body.split(":", 1)[1].split(",") if c.strip()]
            continue
        parts = raw.rstrip("\r\n").split("\t")
        if len(parts) != 2 or not parts[0]:
            raise ManifestError(f"{path}:{lineno}: malformed line, expected 'path<TAB>label_id'")
        rel, lab = parts
        try:
            label = int(lab)
        except ValueError:
            raise ManifestError(f"{path}:{lineno}: malformed label {lab!r}") from None
        if label < 0:
            raise ManifestError(f"{path}:{lineno}: negative label {label}")
        if rel in seen:
            raise ManifestError(f"duplicate path {rel!r} at line {lineno}")
        seen.add(rel)
        entries.append((rel, label))
    labels = {lab for _, lab in entries}
    if labels and labels != set(range(max(labels) + 1)):
        raise ManifestError(f"non-dense labels: {sorted(labels)}")
    split = path.stem
    return Manifest(entries, split=split, categories=categories, root=path.parent)


def write_manifest(manifest: Manifest, path) -> None:
    lines = []
    if manifest.categories:
        lines.append("# categories: " + ",".join(manifest.categories))
    lines += [f"{p}\t{lab}" for p, lab in manifest.entries]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -------------------------------------------------------------- toy dataset

DEFAULT_CLASSES = ("circle", "square", "stripes", "radial")


@dataclass(frozen=True)
class SynthConfig:
    per_class: int = 16
    size: int = 32
    seed: int = 0
    classes: tuple[str, ...] = DEFAULT_CLASSES
    test_per_class: int = 4
    grain: float = 0.0  # std of per-pixel Gaussian noise added after rendering

    def __post_init__(self):
        if self.grain < 0:
            raise ContractError("grain must be >= 0")
        if self.size % 8:
            raise ContractError("image size must be divisible by 8")
        if len(self.classes) < 2:
            raise ContractError("need at least two classes")
        unknown = set(self.classes) - set(DEFAULT_CLASSES)
        if unknown:
            raise ContractError(f"unknown classes {sorted(unknown)}")


def _two_colors(rng: SeededRng) -> tuple[np.ndarray, np.ndarray]:
    while True:
        a, b = rng.uniform(3), rng.uniform(3)
        if np.abs(a - b).sum() > 0.9:
            return a, b


def render_shape(kind: str, size: int, rng: SeededRng, grain: float = 0.0) -> np.ndarray:
    """One H, W, 3 image of ``kind`` with random colours and placement.

    ``grain`` adds clipped per-pixel, per-channel Gaussian noise.
    """
    img = _render_clean(kind, size, rng)
    if grain > 0:
        img = np.clip(img + rng.normal(img.shape, 0.0, grain), 0.0, 1.0)
    return img


def _render_clean(kind: str, size: int, rng: SeededRng) -> np.ndarray:
    bg, fg = _two_colors(rng)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    cy, cx, scale, phase = rng.uniform(4)
    cy = size * (0.3 + 0.4 * cy)
    cx = size * (0.3 + 0.4 * cx)
    if kind == "circle":
        r = size * (0.2 + 0.15 * scale)
        inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    elif kind == "square":
        half = size * (0.18 + 0.14 * scale)
        inside = (np.abs(yy - cy) <= half) & (np.abs(xx - cx) <= half)
    elif kind == "stripes":
        period = size * (0.15 + 0.15 * scale)
        inside = np.sin(2 * math.pi * (yy / period + phase)) > 0
    elif kind == "radial":
        radius = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2) / (size * (0.5 + 0.3 * scale))
        t = np.clip(radius, 0.0, 1.0)[:, :, None]
        return fg * (1.0 - t) + bg * t
    else:
        raise ContractError(f"unknown class {kind!r}")
    return np.where(inside[:, :, None], fg, bg)


def synth_dataset(cfg: SynthConfig, root) -> dict[str, Manifest]:
    """Render train/test splits under ``root/<split>/<class>/<index>.ppm``.

    Labels follow ``cfg.classes`` order; images interleave classes so every
    prefix of the manifest is near-balanced.
    """
    root = Path(root)
    rng = SeededRng(cfg.seed)
    out = {}
    for split, count in (("train", cfg.per_class), ("test", cfg.test_per_class)):
        if count == 0:
            continue
        entries = []
        for i in range(count):
            for label, kind in enumerate(cfg.classes):
                rel = f"{split}/{kind}/{i:04d}.ppm"
                write_image(render_shape(kind, cfg.size, rng, cfg.grain), root / rel)
                entries.append((rel, label))
        manifest = Manifest(entries, split=split, categories=list(cfg.classes), root=root)
        write_manifest(manifest, root / f"{split}.tsv")
        out[split] = manifest
    return out


# ------------------------------------------------------------------ baselines


def _check_mask(x: np.ndarray, mask: np.ndarray) -> None:
    if x.shape[:2] != mask.shape:
        raise DimensionError(f"mask {mask.shape} does not match image {x.shape[:2]}")


def mean_fill(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Replace masked pixels of an H, W, C image by the per-channel context mean."""
    x = np.asarray(x, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    _check_mask(x, m)
    ctx = m == 0
    if not ctx.any():
        raise ContractError("mask covers the whole image; no context to average")
    out = x.copy()
    out[m == 1] = x[ctx].mean(axis=0)
    return out


def nn_inpaint(query: np.ndarray, mask: np.ndarray, training) -> tuple[np.ndarray, int]:
    """Paste the hole from the training image whose context is closest in L2.

    ``training`` is a Manifest or an (N, H, W, C) array. Returns the
    composite and the chosen index (ties go to the lowest index).
    """
    imgs = training.load_images() if isinstance(training, Manifest) else np.asarray(training, dtype=np.float64)
    if len(imgs) == 0:
        raise ContractError("training set is empty")
    query = np.asarray(query, dtype=np.float64)
    if imgs.shape[1:] != query.shape:
        raise DimensionError(f"training images {imgs.shape[1:]} differ from query {query.shape}")
    _check_mask(query, mask)
    ctx = (np.asarray(mask) == 0)[None, :, :, None]
    dist = (((imgs - query[None]) ** 2) * ctx).sum(axis=(1, 2, 3))
    best = int(np.argmin(dist))
    m = np.asarray(mask, dtype=np.float64)[:, :, None]
    return (1.0 - m) * query + m * imgs[best], best
