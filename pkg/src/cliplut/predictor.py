"""Colour-weights predictor and the three-LUT enhancer built on it."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .lut import DEFAULT_DIM, Lut3D, apply_lattice, blend_lattices, identity_grid

MIN_SIDE = 32
N_LUTS = 3


def simple_gate(x: torch.Tensor) -> torch.Tensor:
    """Split ``(B, 2C, H, W)`` into channel halves and multiply them."""
    if x.shape[1] % 2:
        raise ValueError(f"simple_gate needs an even channel count, got {x.shape[1]}")
    a, b = x.chunk(2, dim=1)
    return a * b


def sca(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    """Scale each channel of ``(B, C, H, W)`` by ``weight @ mean_hw(x) (+ bias)``."""
    c = x.shape[1]
    if weight.shape != (c, c):
        raise ValueError(f"SCA weight must be ({c}, {c}), got {tuple(weight.shape)}")
    if bias is not None and bias.shape != (c,):
        raise ValueError(f"SCA bias must be ({c},), got {tuple(bias.shape)}")
    pooled = x.mean(dim=(2, 3))
    attn = pooled @ weight.t()
    if bias is not None:
        attn = attn + bias
    return x * attn[:, :, None, None]


class SimpleGate(nn.Module):
    def forward(self, x):
        return simple_gate(x)


class SimplifiedChannelAttention(nn.Module):
    """Affine channel attention, initialized to the identity (``W = 0``, bias 1)."""

    def __init__(self, channels: int):
        super().__init__()
        self.weight = nn.Parameter(torch.zeros(channels, channels))
        self.bias = nn.Parameter(torch.ones(channels))

    def forward(self, x):
        return sca(x, self.weight, self.bias)


class DownStage(nn.Module):
    """Strided 3x3 conv (C -> 2C), 1x1 expansion to 4C, SimpleGate back to 2C, then SCA.

    Gate and attention are both products, so a default init shrinks activations by
    roughly an order of magnitude per stage. Biasing the gating half of the expansion
    to 1 and starting SCA at the identity keeps each stage close to linear at init.
    """

    def __init__(self, c_in: int):
        super().__init__()
        c = 2 * c_in
        self.down = nn.Conv2d(c_in, c, 3, stride=2, padding=1)
        self.expand = nn.Conv2d(c, 2 * c, 1)
        with torch.no_grad():
            self.expand.bias[c:] += 1.0
        self.gate = SimpleGate()
        self.sca = SimplifiedChannelAttention(c)

    def forward(self, x):
        return self.sca(self.gate(self.expand(self.down(x))))


class WeightPredictor(nn.Module):
    """Maps ``(B, H, W, 3)`` images to ``(B, 3)`` unconstrained LUT weights.

    The head starts at zero weight and bias ``1/3``, so a fresh predictor returns
    ``(1/3, 1/3, 1/3)`` for every input. There is no output nonlinearity.
    """

    def __init__(self, base_width: int = 16, stages: int = 3, n_outputs: int = N_LUTS):
        super().__init__()
        self.stem = nn.Conv2d(3, base_width, 3, padding=1)
        blocks = []
        c = base_width
        for _ in range(stages):
            blocks.append(DownStage(c))
            c *= 2
        self.stages = nn.Sequential(*blocks)
        self.head = nn.Linear(c, n_outputs)
        nn.init.zeros_(self.head.weight)
        nn.init.constant_(self.head.bias, 1.0 / n_outputs)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.shape[-3] < MIN_SIDE or images.shape[-2] < MIN_SIDE:
            raise ValueError(
                f"predictor needs images of at least {MIN_SIDE}x{MIN_SIDE}, got "
                f"{images.shape[-3]}x{images.shape[-2]}")
        x = images.permute(0, 3, 1, 2).to(self.stem.weight.dtype)
        x = self.stages(self.stem(x))
        return self.head(x.mean(dim=(2, 3)))


class Enhancer(nn.Module):
    """Predictor plus three learnable lattices, each initialized to the identity."""

    def __init__(self, lut_dim: int = DEFAULT_DIM, base_width: int = 16, stages: int = 3,
                 learn_luts: bool = True):
        super().__init__()
        self.lut_dim = lut_dim
        self.predictor = WeightPredictor(base_width, stages)
        grid = identity_grid(lut_dim, dtype=torch.float32)
        self.luts = nn.Parameter(grid.expand(N_LUTS, *grid.shape).clone(), requires_grad=learn_luts)

    def weights(self, images: torch.Tensor) -> torch.Tensor:
        return self.predictor(images)

    def lattices(self, images: torch.Tensor) -> torch.Tensor:
        """Per-image blended lattices ``(B, D, D, D, 3)``."""
        return blend_lattices(self.luts, self.weights(images))

    def forward(self, images: torch.Tensor, clamp: bool = True) -> torch.Tensor:
        squeeze = images.ndim == 3
        if squeeze:
            images = images.unsqueeze(0)
        images = images.to(self.luts.dtype)
        out = apply_lattice(self.lattices(images), images, clamp=clamp)
        return out[0] if squeeze else out

    def base_luts(self) -> list[Lut3D]:
        return [Lut3D(t.detach().clone()) for t in self.luts]


def predict_weights(image: torch.Tensor, model: Enhancer | WeightPredictor) -> torch.Tensor:
    """Weights for a single ``(H, W, 3)`` image or a ``(B, H, W, 3)`` batch."""
    net = model.predictor if isinstance(model, Enhancer) else model
    image = torch.as_tensor(image)
    if image.ndim == 3:
        return net(image.unsqueeze(0))[0]
    return net(image)


def enhance(image, model: Enhancer, clamp: bool = True) -> torch.Tensor:
    return model(torch.as_tensor(image), clamp=clamp)


def export_lut(image, model: Enhancer) -> Lut3D:
    """The blended lattice the model would apply to ``image``."""
    image = torch.as_tensor(image)
    if image.ndim == 3:
        image = image.unsqueeze(0)
    with torch.no_grad():
        lattice = model.lattices(image.to(model.luts.dtype))[0]
    return Lut3D(lattice.clone())
