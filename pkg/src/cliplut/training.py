"""Two-stage training orchestration and checkpoint (de)serialization of its products."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import torch

from . import checkpoint
from .config import RunConfig
from .data import batch_indices
from .encoders import EncoderPair, external_clip_adapter, mock_encoder
from .errors import CheckpointError, ConfigError
from .losses import total_loss
from .predictor import Enhancer
from .prompts import PromptHistory, PromptPair, PromptTrainConfig, random_prompts, text_embeddings, train_prompts

log = logging.getLogger(__name__)

# keeps "random" ablation prompts off the stream used for learned-prompt initialization
RANDOM_PROMPT_SEED_OFFSET = 104_729


def build_encoder(cfg: RunConfig) -> EncoderPair:
    if cfg.encoder == "mock":
        return mock_encoder(cfg.encoder_seed)
    return external_clip_adapter({
        "backend": cfg.encoder_backend,
        "model": cfg.encoder_model,
        "device": cfg.encoder_device,
    })


def prompt_train_config(cfg: RunConfig) -> PromptTrainConfig:
    return PromptTrainConfig(epochs=cfg.prompt_epochs, batch_size=cfg.prompt_batch, lr=cfg.prompt_lr,
                             seed=cfg.seed, n_tokens=cfg.prompt_tokens, temperature=cfg.temperature)


def run_prompt_stage(cfg: RunConfig, originals, enhanced, enc: EncoderPair | None = None
                     ) -> tuple[PromptPair, PromptHistory]:
    enc = enc or build_encoder(cfg)
    return train_prompts(originals, enhanced, enc, prompt_train_config(cfg))


@dataclass
class EnhancerHistory:
    epochs: list[dict] = field(default_factory=list)
    steps: int = 0
    initial_psnr: float = float("nan")
    final_psnr: float = float("nan")


def _psnr_tensor(out: torch.Tensor, target: torch.Tensor) -> float:
    err = float(((out.double() - target.double()) ** 2).mean())
    return math.inf if err == 0 else 10 * math.log10(1 / err)


def evaluate_psnr(model: Enhancer, inputs: torch.Tensor, targets: torch.Tensor, batch_size: int = 8) -> float:
    """Train-set PSNR of clamped outputs over a whole stack, in float64."""
    outs = []
    with torch.no_grad():
        for i in range(0, inputs.shape[0], batch_size):
            outs.append(model(inputs[i:i + batch_size], clamp=True))
    return _psnr_tensor(torch.cat(outs), targets)


def resolve_prompts(cfg: RunConfig, prompts: PromptPair | None) -> PromptPair | None:
    if cfg.prompt_mode == "none":
        return None
    if cfg.prompt_mode == "random":
        return random_prompts(cfg.prompt_tokens, cfg.seed + RANDOM_PROMPT_SEED_OFFSET)
    if prompts is None:
        raise ConfigError("prompt_mode 'learned' needs a prompt checkpoint")
    return prompts


def new_enhancer(cfg: RunConfig) -> Enhancer:
    with torch.random.fork_rng():
        torch.manual_seed(cfg.seed)
        return Enhancer(cfg.lut_dim, cfg.base_width, cfg.stages, learn_luts=cfg.learn_luts)


def train_enhancer(inputs: torch.Tensor, targets: torch.Tensor, cfg: RunConfig,
                   prompts: PromptPair | None = None, enc: EncoderPair | None = None,
                   model: Enhancer | None = None, stop_at_psnr: float | None = None
                   ) -> tuple[Enhancer, EnhancerHistory]:
    """Optimize predictor and lattices on MSE + SSIM (+ prompt perceptual) loss.

    The loss sees un-clamped outputs; reported PSNR uses clamped ones. Training stops
    after ``cfg.enhancer_epochs`` epochs, ``cfg.max_steps`` optimizer steps (if > 0), or
    once an end-of-epoch train PSNR reaches ``stop_at_psnr``.
    """
    prompts = resolve_prompts(cfg, prompts)
    if prompts is not None and enc is None:
        enc = build_encoder(cfg)
    model = model or new_enhancer(cfg)
    inputs = torch.as_tensor(inputs, dtype=torch.float32)
    targets = torch.as_tensor(targets, dtype=torch.float32)
    n = inputs.shape[0]
    if n == 0:
        raise ValueError("train_enhancer needs at least one image pair")

    text = None
    if prompts is not None:
        with torch.no_grad():
            text = tuple(t.to(torch.float32) for t in text_embeddings(prompts, enc))

    groups = [{"params": list(model.predictor.parameters()), "lr": cfg.predictor_lr}]
    if model.luts.requires_grad:
        groups.append({"params": [model.luts], "lr": cfg.lut_lr})
    opt = torch.optim.Adam(groups)

    history = EnhancerHistory()
    history.initial_psnr = evaluate_psnr(model, inputs, targets, cfg.image_batch)
    done = False
    for epoch in range(cfg.enhancer_epochs):
        sums = {"mse": 0.0, "ssim_loss": 0.0, "perceptual": 0.0, "total": 0.0}
        count = 0
        for idx in batch_indices(n, cfg.image_batch, cfg.seed, epoch):
            idx = torch.from_numpy(idx)
            out = model(inputs[idx], clamp=False)
            parts = total_loss(out, targets[idx], prompts, enc, cfg.loss_weights, cfg.temperature, text=text)
            opt.zero_grad()
            parts.total.backward()
            opt.step()
            for k, v in parts.as_floats().items():
                if v is not None:
                    sums[k] += v
            count += 1
            history.steps += 1
            if cfg.max_steps and history.steps >= cfg.max_steps:
                done = True
                break
        row = {"epoch": epoch, **{k: v / count for k, v in sums.items()}}
        if prompts is None:
            row["perceptual"] = None
        history.epochs.append(row)
        log.debug("enhancer epoch %d: %s", epoch, row)
        if stop_at_psnr is not None:
            row["psnr"] = evaluate_psnr(model, inputs, targets, cfg.image_batch)
            done = done or row["psnr"] >= stop_at_psnr
        if done:
            break
    history.final_psnr = evaluate_psnr(model, inputs, targets, cfg.image_batch)
    return model, history


# --------------------------------------------------------------------------- checkpoints


def save_prompts(path, prompts: PromptPair, cfg: RunConfig, epoch: int) -> None:
    checkpoint.save(path, {"prompts.original": prompts.original, "prompts.enhanced": prompts.enhanced},
                    {"kind": "prompts", "stage": 1, "epoch": epoch, "seed": cfg.seed, "config": cfg.to_dict()})


def load_prompts(path) -> tuple[PromptPair, dict]:
    tensors, meta = checkpoint.load(path)
    try:
        return PromptPair(tensors["prompts.original"], tensors["prompts.enhanced"]), meta
    except KeyError as exc:
        raise CheckpointError(f"{path} holds no prompts (missing {exc.args[0]})") from None


def save_enhancer(path, model: Enhancer, cfg: RunConfig, epoch: int, prompts: PromptPair | None = None) -> None:
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    if prompts is not None:
        tensors["prompts.original"] = prompts.original
        tensors["prompts.enhanced"] = prompts.enhanced
    checkpoint.save(path, tensors, {"kind": "enhancer", "stage": 2, "epoch": epoch, "seed": cfg.seed,
                                    "prompt_mode": cfg.prompt_mode, "config": cfg.to_dict()})


def load_enhancer(path) -> tuple[Enhancer, RunConfig, dict]:
    tensors, meta = checkpoint.load(path)
    if meta.get("kind") != "enhancer":
        raise CheckpointError(f"{path} is not an enhancer checkpoint (kind={meta.get('kind')!r})")
    cfg = RunConfig.from_dict(meta["config"])
    model = Enhancer(cfg.lut_dim, cfg.base_width, cfg.stages, learn_luts=cfg.learn_luts)
    state = {k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")}
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"{path} does not match the recorded architecture: {exc}") from None
    model.eval()
    return model, cfg, meta
