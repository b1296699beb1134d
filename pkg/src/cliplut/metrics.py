"""Image quality metrics: PSNR, SSIM and CIE76 color difference.

Images are ``(H, W, 3)`` (or ``(B, H, W, 3)``) float arrays in ``[0, 1]``. The
``*_index``/tensor variants keep autograd intact so the training loss can reuse them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# IEC 61966-2-1 primaries, D65 white
_RGB_TO_XYZ = np.array([
    [0.4124, 0.3576, 0.1805],
    [0.2126, 0.7152, 0.0722],
    [0.0193, 0.1192, 0.9505],
])
_WHITE = _RGB_TO_XYZ.sum(axis=1)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
_DELTA = 6.0 / 29.0


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    delta_e: float


def _as_tensor(x, dtype=torch.float64) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x if x.dtype == dtype else x.to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def _check_pair(a, b):
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def mse(a, b) -> float:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair(a, b)
    return float(((a - b) ** 2).mean())


def psnr(a, b) -> float:
    """PSNR in dB for unit dynamic range; ``inf`` for identical inputs."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / err)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA, dtype=torch.float64) -> torch.Tensor:
    x = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    g = torch.exp(-(x ** 2) / (2 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g).to(dtype)


def ssim_index(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean SSIM as a differentiable scalar tensor.

    Local statistics come from an 11x11 Gaussian window (sigma 1.5) evaluated only where
    it fits inside the image; channels are scored independently and averaged, as is
    the batch.
    """
    _check_pair(a, b)
    if a.ndim == 3:
        a, b = a.unsqueeze(0), b.unsqueeze(0)
    h, w = a.shape[1], a.shape[2]
    if min(h, w) < SSIM_WINDOW:
        raise ValueError(f"image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    c = a.shape[-1]
    x = a.permute(0, 3, 1, 2)
    y = b.permute(0, 3, 1, 2)
    win = gaussian_window(dtype=x.dtype).expand(c, 1, SSIM_WINDOW, SSIM_WINDOW)

    def filt(t):
        return F.conv2d(t, win, groups=c)

    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x ** 2
    syy = filt(y * y) - mu_y ** 2
    sxy = filt(x * y) - mu_x * mu_y
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    smap = ((2 * mu_x * mu_y + c1) * (2 * sxy + c2)) / ((mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2))
    return smap.mean()


def ssim(a, b) -> float:
    return float(ssim_index(_as_tensor(a), _as_tensor(b)))


def _srgb_to_linear(c):
    return torch.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(c):
    return torch.where(c <= 0.0031308, c * 12.92, 1.055 * c.clamp(min=0) ** (1 / 2.4) - 0.055)


def _f(t):
    return torch.where(t > _DELTA ** 3, t.clamp(min=0) ** (1.0 / 3.0), t / (3 * _DELTA ** 2) + 4.0 / 29.0)


def _f_inv(t):
    return torch.where(t > _DELTA, t ** 3, 3 * _DELTA ** 2 * (t - 4.0 / 29.0))


def rgb_to_lab(img) -> torch.Tensor:
    """sRGB in ``[0, 1]`` to CIELab (D65). Returns float64 with Lab in the last axis."""
    rgb = _as_tensor(img)
    lin = _srgb_to_linear(rgb)
    xyz = lin @ torch.as_tensor(_RGB_TO_XYZ.T)
    t = xyz / torch.as_tensor(_WHITE)
    fx, fy, fz = _f(t).unbind(-1)
    return torch.stack([116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)], dim=-1)


def lab_to_rgb(lab) -> torch.Tensor:
    lab = _as_tensor(lab)
    L, a, b = lab.unbind(-1)
    fy = (L + 16) / 116
    f = torch.stack([fy + a / 500, fy, fy - b / 200], dim=-1)
    xyz = _f_inv(f) * torch.as_tensor(_WHITE)
    lin = xyz @ torch.as_tensor(_XYZ_TO_RGB.T)
    return _linear_to_srgb(lin)


def lab_distance(lab_a, lab_b) -> torch.Tensor:
    """Per-pixel CIE76 distance between two Lab arrays."""
    return torch.linalg.vector_norm(_as_tensor(lab_a) - _as_tensor(lab_b), dim=-1)


def delta_e(a, b) -> float:
    """Mean CIE76 difference between two sRGB images."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair(a, b)
    return float(lab_distance(rgb_to_lab(a), rgb_to_lab(b)).mean())


def evaluate_pair(output, target) -> MetricReport:
    return MetricReport(psnr=psnr(output, target), ssim=ssim(output, target), delta_e=delta_e(output, target))
