"""Stage-2 objective: MSE + prompt perceptual loss + SSIM loss."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .encoders import EncoderPair
from .metrics import ssim_index
from .prompts import PromptPair, score_from_embeddings, text_embeddings

DEFAULT_WEIGHTS = (1.0, 0.4, 0.4)  # mse, perceptual, ssim


@dataclass
class LossBreakdown:
    mse: torch.Tensor
    ssim_loss: torch.Tensor
    perceptual: torch.Tensor | None  # None when training without prompts
    total: torch.Tensor

    def as_floats(self) -> dict:
        return {
            "mse": float(self.mse.detach()),
            "ssim_loss": float(self.ssim_loss.detach()),
            "perceptual": None if self.perceptual is None else float(self.perceptual.detach()),
            "total": float(self.total.detach()),
        }


def _check(out, target):
    if out.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(out.shape)} vs {tuple(target.shape)}")


def mse_loss(out: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    _check(out, target)
    return ((out - target) ** 2).mean()


def ssim_loss(out: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return 1.0 - ssim_index(out, target)


def perceptual_from_embeddings(image_emb, text_original, text_enhanced, temperature=1.0) -> torch.Tensor:
    return 1.0 - score_from_embeddings(image_emb, text_original, text_enhanced, temperature)


def perceptual_prompt_loss(out: torch.Tensor, prompts: PromptPair, enc: EncoderPair,
                           temperature: float = 1.0, text=None) -> torch.Tensor:
    """Softmax probability of the *original* prompt, averaged over a batch.

    ``text`` may carry precomputed ``(original, enhanced)`` text embeddings, since
    prompts stay frozen during enhancer training.
    """
    t_o, t_e = text if text is not None else text_embeddings(prompts, enc)
    return perceptual_from_embeddings(enc.encode_image(out), t_o, t_e, temperature).mean()


def total_loss(out: torch.Tensor, target: torch.Tensor, prompts: PromptPair | None,
               enc: EncoderPair | None, weights=DEFAULT_WEIGHTS, temperature: float = 1.0,
               text=None) -> LossBreakdown:
    w_mse, w_perc, w_ssim = weights
    m = mse_loss(out, target)
    s = ssim_loss(out, target)
    total = w_mse * m + w_ssim * s
    perc = None
    if prompts is not None or text is not None:
        perc = perceptual_prompt_loss(out, prompts, enc, temperature, text=text)
        total = total + w_perc * perc
    return LossBreakdown(mse=m, ssim_loss=s, perceptual=perc, total=total)
