"""Inpainting evaluation: masked pixel errors, SSIM, FSIM/FSIMc, local
entropy errors and the semantic error."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .phasecong import phase_congruency
from .tensor import ContractError, DimensionError

PSNR_CAP = 99.0
METRIC_FIELDS = ("l1_pct", "l2_pct", "psnr_db", "ssim", "fsim", "fsimc", "lemse", "lemae", "sme")

# SSIM
SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03

# FSIM, on a 0..255 intensity scale
FSIM_T1 = 0.85
FSIM_T2 = 160.0
FSIM_T3 = 200.0
FSIM_T4 = 200.0
FSIM_LAMBDA = 0.03

ENTROPY_WIN = 9


def _as_hwc(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 3 and a.shape[0] == 3 and a.shape[-1] != 3:
        a = a.transpose(1, 2, 0)
    return a


def luma(img) -> np.ndarray:
    """H, W gray image in [0, 1]; 2-D input passes through (clamped)."""
    a = _as_hwc(img)
    if a.ndim == 2:
        return np.clip(a, 0.0, 1.0)
    return np.clip(0.299 * a[..., 0] + 0.587 * a[..., 1] + 0.114 * a[..., 2], 0.0, 1.0)


def _mask_bool(mask, shape) -> np.ndarray:
    m = np.asarray(mask) > 0
    if m.shape != shape:
        raise DimensionError(f"mask {m.shape} does not match image {shape}")
    if not m.any():
        raise ContractError("mask is empty")
    return m


# --------------------------------------------------------------- pixel errors


def psnr_from_mse(mse: float) -> float:
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def pixel_error_report(x, z, mask, full_image: bool = False) -> tuple[float, float, float]:
    """(mean L1 %, mean L2 %, PSNR dB) over the masked pixels, all channels."""
    x, z = _as_hwc(x), _as_hwc(z)
    if x.shape != z.shape:
        raise DimensionError(f"shapes differ: {x.shape} vs {z.shape}")
    m = _mask_bool(mask, x.shape[:2])
    if full_image:
        m = np.ones_like(m)
    d = (x - z)[m]
    mse = float(np.mean(d * d))
    return 100.0 * float(np.mean(np.abs(d))), 100.0 * mse, psnr_from_mse(mse)


# ----------------------------------------------------------------------- SSIM


def _gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r * r) / (2 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def _filter_valid(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.einsum("ijkl,kl->ij", sliding_window_view(a, w.shape), w)


def ssim(x, z) -> float:
    """Mean SSIM over all 11x11 windows of the luma images (L = 1)."""
    gx, gz = luma(x), luma(z)
    if gx.shape != gz.shape:
        raise DimensionError(f"shapes differ: {gx.shape} vs {gz.shape}")
    if min(gx.shape) < SSIM_WIN:
        raise ContractError(f"image {gx.shape} is smaller than the {SSIM_WIN}x{SSIM_WIN} window")
    w = _gaussian_window()
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    mu_x, mu_z = _filter_valid(gx, w), _filter_valid(gz, w)
    sxx = _filter_valid(gx * gx, w) - mu_x * mu_x
    szz = _filter_valid(gz * gz, w) - mu_z * mu_z
    sxz = _filter_valid(gx * gz, w) - mu_x * mu_z
    num = (2 * mu_x * mu_z + c1) * (2 * sxz + c2)
    den = (mu_x * mu_x + mu_z * mu_z + c1) * (sxx + szz + c2)
    return float(np.mean(num / den))


# ----------------------------------------------------------------------- FSIM


def _correlate3_same(a: np.ndarray, k: np.ndarray) -> np.ndarray:
    p = np.pad(a, 1)
    h, w = a.shape
    out = np.zeros_like(a)
    for i in range(3):
        for j in range(3):
            out += k[i, j] * p[i : i + h, j : j + w]
    return out


_SCHARR_X = np.array([[3.0, 0.0, -3.0], [10.0, 0.0, -10.0], [3.0, 0.0, -3.0]]) / 16.0


def gradient_magnitude(gray255: np.ndarray) -> np.ndarray:
    gx = _correlate3_same(gray255, _SCHARR_X)
    gy = _correlate3_same(gray255, _SCHARR_X.T)
    return np.sqrt(gx * gx + gy * gy)


def _yiq255(img) -> np.ndarray:
    a = _as_hwc(img)
    if a.ndim == 2:
        a = np.repeat(a[:, :, None], 3, axis=2)
    a = np.clip(a, 0.0, 1.0) * 255.0
    r, g, b = a[..., 0], a[..., 1], a[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    i = 0.596 * r - 0.274 * g - 0.322 * b
    q = 0.211 * r - 0.523 * g + 0.312 * b
    return np.stack([y, i, q])


def _downsample(a: np.ndarray, f: int) -> np.ndarray:
    if f == 1:
        return a
    h, w = (a.shape[0] // f) * f, (a.shape[1] // f) * f
    return a[:h, :w].reshape(h // f, f, w // f, f).mean(axis=(1, 3))


@dataclass
class PCMaps:
    pc1: np.ndarray
    pc2: np.ndarray
    s_pc: np.ndarray
    s_g: np.ndarray

    @property
    def pc_m(self) -> np.ndarray:
        return np.maximum(self.pc1, self.pc2)


def _sim(a, b, t):
    return (2 * a * b + t) / (a * a + b * b + t)


def fsim_maps(x, z) -> tuple[PCMaps, np.ndarray, np.ndarray]:
    """PC/gradient similarity maps plus the I and Q chroma similarity maps."""
    yx, yz = _yiq255(x), _yiq255(z)
    if yx.shape != yz.shape:
        raise DimensionError(f"shapes differ: {yx.shape[1:]} vs {yz.shape[1:]}")
    f = max(1, round(min(yx.shape[1:]) / 256))
    yx = np.stack([_downsample(c, f) for c in yx])
    yz = np.stack([_downsample(c, f) for c in yz])
    pc1, pc2 = phase_congruency(yx[0]), phase_congruency(yz[0])
    g1, g2 = gradient_magnitude(yx[0]), gradient_magnitude(yz[0])
    maps = PCMaps(pc1, pc2, _sim(pc1, pc2, FSIM_T1), _sim(g1, g2, FSIM_T2))
    return maps, _sim(yx[1], yz[1], FSIM_T3), _sim(yx[2], yz[2], FSIM_T4)


def fsim(x, z, color: bool = False) -> float:
    maps, s_i, s_q = fsim_maps(x, z)
    sl = maps.s_pc * maps.s_g
    if color:
        sl = sl * np.real(np.power((s_i * s_q).astype(np.complex128), FSIM_LAMBDA))
    pcm = maps.pc_m
    total = pcm.sum()
    if total <= 0:
        # no phase structure anywhere: weight pixels uniformly
        return float(sl.mean())
    return float((sl * pcm).sum() / total)


# -------------------------------------------------------------- local entropy


def entropy_table(n: int) -> np.ndarray:
    """-(c/n) log2(c/n) for c = 0..n, computed with ``math.log2``."""
    t = np.zeros(n + 1)
    for c in range(1, n + 1):
        p = c / n
        t[c] = -p * math.log2(p)
    return t


_TABLE = entropy_table(ENTROPY_WIN * ENTROPY_WIN)


def quantize_gray(gray: np.ndarray) -> np.ndarray:
    return np.round(np.clip(gray, 0.0, 1.0) * 255.0).astype(np.uint8)


def local_entropy_map(img) -> np.ndarray:
    """Entropy (bits) of the 256-bin histogram in each reflect-padded 9x9 window."""
    q = quantize_gray(luma(img))
    r = ENTROPY_WIN // 2
    padded = np.ascontiguousarray(np.pad(q, r, mode="reflect"))
    h, w = q.shape
    return kernels.entropy_map(padded, h, w, ENTROPY_WIN, _TABLE)


def entropy_errors(x, z, mask) -> tuple[float, float]:
    """(LEMSE, LEMAE) of the local entropy maps over the masked pixels."""
    ex, ez = local_entropy_map(x), local_entropy_map(z)
    if ex.shape != ez.shape:
        raise DimensionError(f"shapes differ: {ex.shape} vs {ez.shape}")
    m = _mask_bool(mask, ex.shape)
    d = (ex - ez)[m]
    return float(np.mean(d * d)), float(np.mean(np.abs(d)))


# --------------------------------------------------------------- semantic err


@dataclass(frozen=True)
class ClassifierProbs:
    p_x: float
    p_z: float
    sample_id: str = ""
    source: str = "builtin"

    def __post_init__(self):
        for v in (self.p_x, self.p_z):
            if not 0.0 <= v <= 1.0:
                raise ContractError(f"probability {v} outside [0, 1]")


def sme_term(p: ClassifierProbs) -> float:
    return max(0.0, p.p_x - p.p_z)


def sme(samples) -> float:
    samples = [s if isinstance(s, ClassifierProbs) else ClassifierProbs(*s) for s in samples]
    if not samples:
        raise ContractError("SME needs at least one sample")
    total = 0.0
    for s in samples:
        total += sme_term(s)
    return total / len(samples)


def read_probs_csv(path) -> dict[str, ClassifierProbs]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["sample_id", "p_x", "p_z"]:
            raise ValueError(f"{path}: header must be 'sample_id,p_x,p_z', got {header}")
        out = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 fields")
            out[row[0]] = ClassifierProbs(float(row[1]), float(row[2]), row[0], "external")
    return out


# -------------------------------------------------------------------- reports


def _bbox_crop(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return img[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]


def evaluate_pair(x, z, mask, full_image: bool = False, similarity_on_crop: bool = False) -> dict[str, float]:
    """Every metric except SME for one ground-truth / result pair."""
    x, z = _as_hwc(x), _as_hwc(z)
    m = np.asarray(mask) > 0
    l1, l2, psnr = pixel_error_report(x, z, m, full_image=full_image)
    sx, sz = (_bbox_crop(x, m), _bbox_crop(z, m)) if similarity_on_crop else (x, z)
    lemse, lemae = entropy_errors(x, z, m)
    return {
        "l1_pct": l1,
        "l2_pct": l2,
        "psnr_db": psnr,
        "ssim": ssim(sx, sz),
        "fsim": fsim(sx, sz, color=False),
        "fsimc": fsim(sx, sz, color=True),
        "lemse": lemse,
        "lemae": lemae,
    }


@dataclass
class MetricReport:
    rows: list[dict] = field(default_factory=list)  # each has "sample_id" + METRIC_FIELDS

    def aggregate(self) -> dict[str, float | None]:
        out: dict[str, float | None] = {}
        for k in METRIC_FIELDS:
            vals = [r[k] for r in self.rows if r.get(k) is not None]
            out[k] = float(np.mean(vals)) if vals else None
        return out

    def to_json_obj(self, config: dict | None = None) -> dict:
        return {"config": config or {}, "fields": list(METRIC_FIELDS), "rows": self.rows, "mean": self.aggregate()}

    def write_csv(self, path) -> None:
        def fmt(v):
            return "" if v is None else repr(float(v))

        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", *METRIC_FIELDS])
            for r in self.rows:
                w.writerow([r["sample_id"], *(fmt(r.get(k)) for k in METRIC_FIELDS)])
            agg = self.aggregate()
            w.writerow(["mean", *(fmt(agg[k]) for k in METRIC_FIELDS)])


def write_probs_csv(samples, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "p_x", "p_z"])
        for s in samples:
            w.writerow([s.sample_id, repr(s.p_x), repr(s.p_z)])


def load_report_csv(path) -> list[dict]:
    with open(Path(path), newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
