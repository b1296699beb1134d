"""Stage 1: learning a pair of "original"/"enhanced" prompts in the encoder's text space."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .encoders import EncoderPair, cosine_similarity

log = logging.getLogger(__name__)

EPS = 1e-7
DEFAULT_TOKENS = 16


@dataclass(eq=False)
class PromptPair:
    original: torch.Tensor  # (N, 512), label 0
    enhanced: torch.Tensor  # (N, 512), label 1

    def __post_init__(self):
        if self.original.shape != self.enhanced.shape or self.original.ndim != 2:
            raise ValueError(
                f"prompt matrices must share an (N, D) shape, got {tuple(self.original.shape)} "
                f"and {tuple(self.enhanced.shape)}")
        for t in (self.original, self.enhanced):
            if not torch.isfinite(t.detach()).all():
                raise ValueError("prompt tokens must be finite")

    @property
    def token_count(self) -> int:
        return self.original.shape[0]

    def swapped(self) -> "PromptPair":
        return PromptPair(self.enhanced, self.original)

    def detach(self) -> "PromptPair":
        return PromptPair(self.original.detach().clone(), self.enhanced.detach().clone())


@dataclass
class LabeledImage:
    image: torch.Tensor
    label: int  # 0 original, 1 enhanced

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")


def random_prompts(n_tokens: int = DEFAULT_TOKENS, seed: int = 0, dim: int = 512,
                   dtype=torch.float32) -> PromptPair:
    """Standard-normal prompt initialization; original first, then enhanced."""
    gen = torch.Generator().manual_seed(int(seed))
    original = torch.randn(n_tokens, dim, generator=gen, dtype=dtype)
    enhanced = torch.randn(n_tokens, dim, generator=gen, dtype=dtype)
    return PromptPair(original, enhanced)


def text_embeddings(prompts: PromptPair, enc: EncoderPair) -> tuple[torch.Tensor, torch.Tensor]:
    return enc.encode_prompt(prompts.original), enc.encode_prompt(prompts.enhanced)


def score_from_embeddings(image_emb, text_original, text_enhanced, temperature: float = 1.0) -> torch.Tensor:
    """Probability of the enhanced prompt: softmax over the two cosine similarities."""
    logits = torch.stack([
        cosine_similarity(image_emb, text_original.to(image_emb.dtype)),
        cosine_similarity(image_emb, text_enhanced.to(image_emb.dtype)),
    ], dim=-1) * temperature
    return torch.softmax(logits, dim=-1)[..., 1]


def score(image, prompts: PromptPair, enc: EncoderPair, temperature: float = 1.0) -> torch.Tensor:
    t_o, t_e = text_embeddings(prompts, enc)
    return score_from_embeddings(enc.encode_image(torch.as_tensor(image)), t_o, t_e, temperature)


def bce_from_scores(scores: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    y = labels.to(scores.dtype)
    p = scores.clamp(EPS, 1 - EPS)
    return -(y * torch.log(p) + (1 - y) * torch.log(1 - p)).mean()


def prompt_loss(batch: Sequence[LabeledImage], prompts: PromptPair, enc: EncoderPair,
                temperature: float = 1.0) -> torch.Tensor:
    """Mean binary cross-entropy of the enhanced-prompt score against the labels."""
    if len(batch) == 0:
        raise ValueError("prompt_loss needs a non-empty batch")
    images = torch.stack([torch.as_tensor(item.image) for item in batch])
    labels = torch.tensor([item.label for item in batch])
    return bce_from_scores(score(images, prompts, enc, temperature), labels)


def classify_accuracy(images, labels, prompts: PromptPair, enc: EncoderPair,
                      temperature: float = 1.0) -> float:
    """Fraction of images where ``score >= 0.5`` agrees with the label."""
    labels = torch.as_tensor(labels)
    if labels.numel() == 0:
        raise ValueError("classify_accuracy needs a non-empty dataset")
    with torch.no_grad():
        s = score(images, prompts, enc, temperature)
    return float(((s >= 0.5).long() == labels.long()).double().mean())


@dataclass
class PromptTrainConfig:
    epochs: int = 100
    batch_size: int = 16  # labeled images per step, i.e. batch_size // 2 pairs
    lr: float = 1e-3
    seed: int = 0
    n_tokens: int = DEFAULT_TOKENS
    temperature: float = 1.0


@dataclass
class PromptHistory:
    epoch_loss: list[float] = field(default_factory=list)
    epoch_accuracy: list[float] = field(default_factory=list)
    initial_loss: float = float("nan")
    initial_accuracy: float = float("nan")


def pair_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([int(seed), int(epoch)]).permutation(n)


def train_prompts(originals, enhanced, enc: EncoderPair,
                  config: PromptTrainConfig | None = None) -> tuple[PromptPair, PromptHistory]:
    """Fit prompts so originals score near 0 and enhanced images near 1.

    ``originals`` and ``enhanced`` are aligned ``(P, H, W, 3)`` stacks. Each step draws
    ``batch_size // 2`` pairs (both images of a pair go in the same step). The
    encoders are frozen, so image embeddings are computed once up front.
    """
    cfg = config or PromptTrainConfig()
    originals = torch.as_tensor(originals)
    enhanced = torch.as_tensor(enhanced)
    n_pairs = originals.shape[0]
    if n_pairs == 0:
        raise ValueError("train_prompts needs at least one image pair")
    if enhanced.shape != originals.shape:
        raise ValueError(f"pair stacks differ in shape: {tuple(originals.shape)} vs {tuple(enhanced.shape)}")

    init = random_prompts(cfg.n_tokens, cfg.seed, enc.embed_dim)
    p_o = init.original.clone().requires_grad_(True)
    p_e = init.enhanced.clone().requires_grad_(True)
    opt = torch.optim.Adam([p_o, p_e], lr=cfg.lr)

    with torch.no_grad():
        emb_o = enc.encode_image(originals).to(torch.float32)
        emb_e = enc.encode_image(enhanced).to(torch.float32)
    all_emb = torch.cat([emb_o, emb_e])
    all_lab = torch.cat([torch.zeros(n_pairs), torch.ones(n_pairs)])

    def full_eval():
        with torch.no_grad():
            s = score_from_embeddings(all_emb, enc.encode_prompt(p_o), enc.encode_prompt(p_e), cfg.temperature)
            return float(bce_from_scores(s, all_lab)), float(((s >= 0.5).float() == all_lab).double().mean())

    history = PromptHistory()
    history.initial_loss, history.initial_accuracy = full_eval()
    pairs_per_step = max(1, cfg.batch_size // 2)
    for epoch in range(cfg.epochs):
        order = torch.from_numpy(pair_permutation(n_pairs, cfg.seed, epoch))
        for start in range(0, n_pairs, pairs_per_step):
            idx = order[start:start + pairs_per_step]
            emb = torch.cat([emb_o[idx], emb_e[idx]])
            lab = torch.cat([torch.zeros(len(idx)), torch.ones(len(idx))])
            s = score_from_embeddings(emb, enc.encode_prompt(p_o), enc.encode_prompt(p_e), cfg.temperature)
            loss = bce_from_scores(s, lab)
            opt.zero_grad()
            loss.backward()
            opt.step()
        loss_val, acc = full_eval()
        history.epoch_loss.append(loss_val)
        history.epoch_accuracy.append(acc)
        log.debug("prompt epoch %d: loss %.6f acc %.4f", epoch, loss_val, acc)

    return PromptPair(p_o.detach(), p_e.detach()), history
