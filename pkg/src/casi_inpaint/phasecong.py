"""Phase congruency from a log-Gabor filter bank, computed in the frequency
domain (Kovesi's formulation, with the parameter set used by FSIM)."""

from __future__ import annotations

import math

import numpy as np

NSCALE = 4
NORIENT = 4
MIN_WAVELENGTH = 6
MULT = 2.0
SIGMA_ONF = 0.55
D_THETA_ON_SIGMA = 1.2
NOISE_K = 2.0
EPS = 1e-4


def fft2(a: np.ndarray) -> np.ndarray:
    return np.fft.fft2(a)


def ifft2(a: np.ndarray) -> np.ndarray:
    return np.fft.ifft2(a)


def _next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def _freq_grid(rows: int, cols: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalized radius and angle, already ifftshifted (DC at [0, 0])."""

    def axis(n):
        if n % 2:
            return np.arange(-(n - 1) / 2, (n - 1) / 2 + 1) / (n - 1)
        return np.arange(-n / 2, n / 2) / n

    x, y = np.meshgrid(axis(cols), axis(rows))
    radius = np.fft.ifftshift(np.sqrt(x * x + y * y))
    theta = np.fft.ifftshift(np.arctan2(-y, x))
    radius[0, 0] = 1.0
    return radius, theta


def _lowpass(radius: np.ndarray, cutoff: float = 0.45, order: int = 15) -> np.ndarray:
    return 1.0 / (1.0 + (radius / cutoff) ** (2 * order))


def _pc_core(im: np.ndarray) -> np.ndarray:
    rows, cols = im.shape
    imagefft = fft2(im)
    radius, theta = _freq_grid(rows, cols)
    sintheta, costheta = np.sin(theta), np.cos(theta)
    lp = _lowpass(radius)
    log_gabor = []
    for s in range(NSCALE):
        fo = 1.0 / (MIN_WAVELENGTH * MULT**s)
        lg = np.exp(-(np.log(radius / fo) ** 2) / (2 * math.log(SIGMA_ONF) ** 2)) * lp
        lg[0, 0] = 0.0
        log_gabor.append(lg)
    theta_sigma = math.pi / NORIENT / D_THETA_ON_SIGMA

    energy_all = np.zeros((rows, cols))
    an_all = np.zeros((rows, cols))
    for o in range(NORIENT):
        angl = o * math.pi / NORIENT
        ds = sintheta * math.cos(angl) - costheta * math.sin(angl)
        dc = costheta * math.cos(angl) + sintheta * math.sin(angl)
        spread = np.exp(-np.arctan2(ds, dc) ** 2 / (2 * theta_sigma**2))

        sum_e = np.zeros((rows, cols))
        sum_o = np.zeros((rows, cols))
        sum_an = np.zeros((rows, cols))
        eo_list = []
        ifft_filters = []
        em_n = 0.0
        for s in range(NSCALE):
            filt = log_gabor[s] * spread
            ifft_filters.append(np.real(ifft2(filt)) * math.sqrt(rows * cols))
            eo = ifft2(imagefft * filt)
            eo_list.append(eo)
            sum_an += np.abs(eo)
            sum_e += eo.real
            sum_o += eo.imag
            if s == 0:
                em_n = float((filt**2).sum())
        x_energy = np.sqrt(sum_e**2 + sum_o**2) + EPS
        mean_e = sum_e / x_energy
        mean_o = sum_o / x_energy
        energy = np.zeros((rows, cols))
        for eo in eo_list:
            e, od = eo.real, eo.imag
            energy += e * mean_e + od * mean_o - np.abs(e * mean_o - od * mean_e)

        # noise from the median response of the smallest scale (Rayleigh assumption)
        median_e2n = float(np.median(np.abs(eo_list[0]) ** 2))
        mean_e2n = -median_e2n / math.log(0.5)
        noise_power = mean_e2n / em_n if em_n > 0 else 0.0
        est_sum_an2 = sum(f**2 for f in ifft_filters).sum()
        est_sum_aiaj = 0.0
        for i in range(NSCALE - 1):
            for j in range(i + 1, NSCALE):
                est_sum_aiaj += float((ifft_filters[i] * ifft_filters[j]).sum())
        noise_energy2 = 2 * noise_power * est_sum_an2 + 4 * noise_power * est_sum_aiaj
        tau = math.sqrt(max(noise_energy2, 0.0) / 2)
        noise_mean = tau * math.sqrt(math.pi / 2)
        noise_sigma = math.sqrt((2 - math.pi / 2) * tau**2)
        threshold = (noise_mean + NOISE_K * noise_sigma) / 1.7

        energy_all += np.maximum(energy - threshold, 0.0)
        an_all += sum_an
    return energy_all / (an_all + EPS)


def phase_congruency(gray: np.ndarray) -> np.ndarray:
    """PC map in [0, 1] for a 2-D image.

    The image is reflect-padded (centred) to power-of-two sides at least
    twice its size so the FFT's wrap-around seam stays away from it.
    """
    g = np.asarray(gray, dtype=np.float64)
    h, w = g.shape
    ph, pw = _next_pow2(2 * h), _next_pow2(2 * w)
    top, left = (ph - h) // 2, (pw - w) // 2
    padded = np.pad(g, ((top, ph - h - top), (left, pw - w - left)), mode="reflect" if min(h, w) > 1 else "edge")
    pc = _pc_core(padded)[top : top + h, left : left + w]
    return np.clip(pc, 0.0, 1.0)
