"""Seeded synthetic image tasks for desk-scale runs and tests."""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .lut import Lut3D, apply_lut, identity_grid


def smooth_images(n: int, size: int = 64, seed: int = 0, low: float = 0.0, high: float = 1.0,
                  grid: int = 6, noise: float = 0.02) -> torch.Tensor:
    """``(n, size, size, 3)`` images: upsampled coarse random colors plus light noise."""
    gen = torch.Generator().manual_seed(seed)
    coarse = torch.rand(n, 3, grid, grid, generator=gen, dtype=torch.float64)
    x = F.interpolate(coarse, size=(size, size), mode="bicubic", align_corners=True).clamp(0, 1)
    x = x + noise * torch.randn(x.shape, generator=gen, dtype=torch.float64)
    x = low + (high - low) * x.clamp(0, 1)
    return x.permute(0, 2, 3, 1).to(torch.float32).contiguous()


def brightness_pairs(n: int, size: int = 64, shift: float = 0.3, seed: int = 0):
    """Originals in ``[0, 1 - shift]`` and the same images brightened by ``shift``."""
    originals = smooth_images(n, size, seed, 0.0, 1.0 - shift)
    return originals, originals + shift


def grading_lut(dim: int = 33, dtype=torch.float64) -> Lut3D:
    """A smooth, clearly non-identity grade: gamma lift, a warm tint and mild desaturation."""
    c = identity_grid(dim, dtype=torch.float64)
    luma = (c * torch.tensor([0.299, 0.587, 0.114], dtype=torch.float64)).sum(-1, keepdim=True)
    lifted = c ** 0.6
    mixed = 0.85 * lifted + 0.15 * luma ** 0.6
    tint = torch.tensor([1.0, 0.96, 0.88], dtype=torch.float64)
    return Lut3D((mixed * tint).clamp(0, 1).to(dtype))


def lut_task(n: int = 8, size: int = 64, seed: int = 0, dim: int = 33):
    """Inputs, targets ``= grading_lut(dim)`` applied to the inputs, and that oracle lattice."""
    oracle = grading_lut(dim)
    inputs = smooth_images(n, size, seed, 0.0, 0.75)
    targets = apply_lut(oracle, inputs.double()).to(torch.float32)
    return inputs, targets, oracle
