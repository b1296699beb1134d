"""3D lookup tables: lattice type, trilinear application, blending and ``.cube`` I/O.

Lattices are stored as ``(D, D, D, 3)`` tensors indexed ``[r, g, b]``. Everything
here is written with plain tensor ops so gradients reach both the lattice entries
and whatever produced them (e.g. blend weights).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
import torch

from .errors import CubeParseError

PathLike = Union[str, os.PathLike]

DEFAULT_DIM = 33


@dataclass(frozen=True, eq=False)
class Lut3D:
    """A ``dim x dim x dim`` lattice of RGB outputs over the cube ``[0, domain_max]^3``."""

    entries: torch.Tensor
    domain_max: float = 1.0

    def __post_init__(self):
        e = self.entries
        if not isinstance(e, torch.Tensor):
            e = torch.as_tensor(np.asarray(e, dtype=np.float64))
            object.__setattr__(self, "entries", e)
        if e.ndim != 4 or e.shape[-1] != 3 or not (e.shape[0] == e.shape[1] == e.shape[2]):
            raise ValueError(f"LUT entries must have shape (D, D, D, 3), got {tuple(e.shape)}")
        if e.shape[0] < 2:
            raise ValueError(f"LUT dim must be >= 2, got {e.shape[0]}")
        if not torch.isfinite(e.detach()).all():
            raise ValueError("LUT entries must be finite")
        if not (self.domain_max > 0 and math.isfinite(self.domain_max)):
            raise ValueError(f"domain_max must be positive and finite, got {self.domain_max}")

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def step(self) -> float:
        """Lattice spacing in color units (``domain_max / (dim - 1)``)."""
        return self.domain_max / (self.dim - 1)

    def detach(self) -> "Lut3D":
        return Lut3D(self.entries.detach(), self.domain_max)

    def equals(self, other: "Lut3D") -> bool:
        return (
            self.domain_max == other.domain_max
            and self.entries.shape == other.entries.shape
            and torch.equal(self.entries.detach().double(), other.entries.detach().double())
        )


def identity_grid(dim: int, domain_max: float = 1.0, dtype=torch.float64) -> torch.Tensor:
    if dim < 2:
        raise ValueError(f"LUT dim must be >= 2, got {dim}")
    axis = torch.arange(dim, dtype=torch.float64) * domain_max / (dim - 1)
    r, g, b = torch.meshgrid(axis, axis, axis, indexing="ij")
    return torch.stack([r, g, b], dim=-1).to(dtype)


def identity_lut(dim: int = DEFAULT_DIM, domain_max: float = 1.0, dtype=torch.float64) -> Lut3D:
    return Lut3D(identity_grid(dim, domain_max, dtype), domain_max)


def map_coordinates(color, lut: Lut3D) -> torch.Tensor:
    """Continuous lattice coordinates of colors ``(..., 3)``; each component lands in ``[0, dim-1]``."""
    c = torch.as_tensor(color, dtype=lut.entries.dtype)
    return _coordinates(c, lut.dim, lut.domain_max)


def _coordinates(color: torch.Tensor, dim: int, domain_max: float) -> torch.Tensor:
    s = domain_max / (dim - 1)
    c = color.clamp(0.0, domain_max)
    return (c / s).clamp(0.0, dim - 1)


def apply_lattice(entries: torch.Tensor, image: torch.Tensor, domain_max: float = 1.0,
                  clamp: bool = True) -> torch.Tensor:
    """Trilinear lookup of ``image`` through ``entries``.

    ``entries`` is ``(D, D, D, 3)`` shared by every pixel, or ``(B, D, D, D, 3)`` with
    ``image`` shaped ``(B, ..., 3)`` so each batch item uses its own lattice.
    """
    if image.shape[-1] != 3:
        raise ValueError(f"image must have 3 channels in the last axis, got shape {tuple(image.shape)}")
    if not torch.isfinite(image.detach()).all():
        raise ValueError("image contains non-finite values")
    batched = entries.ndim == 5
    dim = entries.shape[-2]
    image = image.to(entries.dtype)
    out_shape = image.shape

    if batched:
        b = entries.shape[0]
        if image.shape[0] != b:
            raise ValueError(f"batch size mismatch: {b} lattices for {image.shape[0]} images")
        table = entries.reshape(b, dim ** 3, 3)
        coords = _coordinates(image.reshape(b, -1, 3), dim, domain_max)
    else:
        table = entries.reshape(1, dim ** 3, 3)
        coords = _coordinates(image.reshape(1, -1, 3), dim, domain_max)

    base = coords.floor().clamp(0, dim - 2)
    frac = coords - base
    base = base.long()
    ir, ig, ib = base.unbind(-1)

    def corner(dr, dg, db):
        idx = ((ir + dr) * dim + (ig + dg)) * dim + (ib + db)
        return torch.gather(table, 1, idx.unsqueeze(-1).expand(-1, -1, 3))

    # nested lerps reproduce node values and constant lattices exactly
    fr, fg, fb = (f.unsqueeze(-1) for f in frac.unbind(-1))
    c00 = torch.lerp(corner(0, 0, 0), corner(1, 0, 0), fr)
    c10 = torch.lerp(corner(0, 1, 0), corner(1, 1, 0), fr)
    c01 = torch.lerp(corner(0, 0, 1), corner(1, 0, 1), fr)
    c11 = torch.lerp(corner(0, 1, 1), corner(1, 1, 1), fr)
    c0 = torch.lerp(c00, c10, fg)
    c1 = torch.lerp(c01, c11, fg)
    out = torch.lerp(c0, c1, fb)

    out = out.reshape(out_shape)
    if clamp:
        out = out.clamp(0.0, 1.0)
    return out


def apply_lut(lut: Lut3D, image, clamp: bool = True) -> torch.Tensor:
    """Apply ``lut`` to an image (or batch of images) with RGB in the last axis."""
    img = torch.as_tensor(image)
    return apply_lattice(lut.entries, img, lut.domain_max, clamp=clamp)


def blend_lattices(stack: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Weighted sum of ``stack`` ``(K, D, D, D, 3)``; ``weights`` is ``(K,)`` or ``(B, K)``."""
    if weights.shape[-1] != stack.shape[0]:
        raise ValueError(f"{weights.shape[-1]} weights for {stack.shape[0]} lattices")
    return torch.tensordot(weights.to(stack.dtype), stack, dims=([weights.ndim - 1], [0]))


def blend_luts(luts: Sequence[Lut3D], weights) -> Lut3D:
    """``sum_k weights[k] * luts[k]`` entrywise."""
    if len(luts) == 0:
        raise ValueError("need at least one LUT to blend")
    w = weights if isinstance(weights, torch.Tensor) else torch.as_tensor(weights, dtype=torch.float64)
    if w.ndim != 1 or w.shape[0] != len(luts):
        raise ValueError(f"expected {len(luts)} weights, got shape {tuple(w.shape)}")
    first = luts[0]
    for lut in luts[1:]:
        if lut.dim != first.dim or lut.domain_max != first.domain_max:
            raise ValueError(
                f"cannot blend LUTs with different lattices: dim {lut.dim} vs {first.dim}, "
                f"domain_max {lut.domain_max} vs {first.domain_max}")
    out = None
    for wk, lut in zip(w.unbind(0), luts):
        term = wk.to(lut.entries.dtype) * lut.entries
        out = term if out is None else out + term
    return Lut3D(out, first.domain_max)


# --------------------------------------------------------------------------- .cube


def write_cube(lut: Lut3D, path: PathLike, title: str | None = None) -> None:
    """Write ``lut`` as ``.cube`` text, red index varying fastest.

    Values use the shortest repr that round-trips a double, so ``read_cube`` returns
    the written lattice bit for bit.
    """
    arr = lut.entries.detach().cpu().double().numpy()
    rows = arr.transpose(2, 1, 0, 3).reshape(-1, 3)
    dm = repr(float(lut.domain_max))
    lines = []
    if title:
        lines.append(f'TITLE "{title}"')
    lines.append(f"LUT_3D_SIZE {lut.dim}")
    lines.append("DOMAIN_MIN 0.0 0.0 0.0")
    lines.append(f"DOMAIN_MAX {dm} {dm} {dm}")
    lines.extend(" ".join(repr(v) for v in row) for row in rows.tolist())
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _floats(tokens, n, lineno, path, what):
    if len(tokens) != n:
        raise CubeParseError(f"{what} expects {n} values, got {len(tokens)}", lineno, path)
    try:
        vals = [float(t) for t in tokens]
    except ValueError:
        raise CubeParseError(f"non-numeric value in {what}: {' '.join(tokens)!r}", lineno, path) from None
    if not all(math.isfinite(v) for v in vals):
        raise CubeParseError(f"non-finite value in {what}", lineno, path)
    return vals


def read_cube(path: PathLike) -> Lut3D:
    size = None
    domain_min = None
    domain_max = None
    rows: list[list[float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split()
            head = tokens[0].upper()
            if head[0].isalpha():
                if rows:
                    raise CubeParseError(f"keyword {tokens[0]} after table data", lineno, path)
                if head == "TITLE":
                    continue
                if head == "LUT_3D_SIZE":
                    if len(tokens) != 2:
                        raise CubeParseError("LUT_3D_SIZE expects one integer", lineno, path)
                    try:
                        size = int(tokens[1])
                    except ValueError:
                        raise CubeParseError(f"non-numeric LUT_3D_SIZE {tokens[1]!r}", lineno, path) from None
                    if size < 2:
                        raise CubeParseError(f"LUT_3D_SIZE must be >= 2, got {size}", lineno, path)
                elif head == "DOMAIN_MIN":
                    domain_min = (_floats(tokens[1:], 3, lineno, path, "DOMAIN_MIN"), lineno)
                elif head == "DOMAIN_MAX":
                    domain_max = (_floats(tokens[1:], 3, lineno, path, "DOMAIN_MAX"), lineno)
                elif head == "LUT_1D_SIZE":
                    raise CubeParseError("1D LUTs are not supported", lineno, path)
                else:
                    raise CubeParseError(f"unknown keyword {tokens[0]}", lineno, path)
                continue
            rows.append(_floats(tokens, 3, lineno, path, "table row"))

    if size is None:
        raise CubeParseError("missing LUT_3D_SIZE", None, path)
    if domain_min is not None and any(v != 0.0 for v in domain_min[0]):
        raise CubeParseError("only DOMAIN_MIN 0 0 0 is supported", domain_min[1], path)
    dmax = 1.0
    if domain_max is not None:
        vals, lineno = domain_max
        if not (vals[0] == vals[1] == vals[2]) or vals[0] <= 0:
            raise CubeParseError("DOMAIN_MAX must be one positive value repeated", lineno, path)
        dmax = vals[0]
    expected = size ** 3
    if len(rows) != expected:
        short = expected - len(rows)
        detail = f"short by {short}" if short > 0 else f"{-short} too many"
        raise CubeParseError(
            f"LUT_3D_SIZE {size} needs {expected} data lines, found {len(rows)} ({detail})", None, path)
    arr = np.asarray(rows, dtype=np.float64).reshape(size, size, size, 3).transpose(2, 1, 0, 3)
    return Lut3D(torch.from_numpy(np.ascontiguousarray(arr)), dmax)
