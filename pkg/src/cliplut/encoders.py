"""Frozen text/image encoders producing unit-norm 512-d embeddings.

``MockEncoder`` is a seeded linear stand-in used for every desk-scale run. The
external adapter wraps a real CLIP backend behind the same interface.
"""

from __future__ import annotations

import importlib
import threading
from typing import Any, Mapping

import torch
import torch.nn.functional as F

from .errors import ConfigError

EMBED_DIM = 512
MOCK_GRID = 8


def _normalize(x: torch.Tensor) -> torch.Tensor:
    return x / torch.linalg.vector_norm(x, dim=-1, keepdim=True)


def cosine_similarity(a, b) -> torch.Tensor:
    """Dot product over the last axis. Inputs are assumed unit-norm."""
    return (torch.as_tensor(a) * torch.as_tensor(b)).sum(dim=-1)


class EncoderPair:
    """Interface shared by all encoders.

    ``encode_image`` takes ``(..., H, W, 3)`` images in ``[0, 1]``; ``encode_prompt``
    takes ``(..., N, 512)`` continuous prompt tokens. Both return unit-norm
    ``(..., 512)`` tensors and must be differentiable in their inputs.
    """

    name = "abstract"
    deterministic = True
    embed_dim = EMBED_DIM

    def encode_image(self, images: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def encode_prompt(self, tokens: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def parameters(self):
        # frozen by contract: nothing here is trainable
        return iter(())


class MockEncoder(EncoderPair):
    """Linear random-projection encoder.

    Images are area-averaged to an 8x8x3 grid, centred on mid-gray, flattened and
    projected to 512 dims. Prompt tokens are mean-pooled and projected. The
    projections depend only on ``seed``.
    """

    deterministic = True

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.name = f"mock({self.seed})"
        gen = torch.Generator().manual_seed(self.seed)
        n_in = MOCK_GRID * MOCK_GRID * 3
        self._image_proj = torch.randn(n_in, EMBED_DIM, generator=gen, dtype=torch.float64) / n_in ** 0.5
        self._text_proj = torch.randn(EMBED_DIM, EMBED_DIM, generator=gen, dtype=torch.float64) / EMBED_DIM ** 0.5

    def pooled_image(self, images: torch.Tensor) -> torch.Tensor:
        """Area-averaged ``(..., 8, 8, 3)`` grid that the image path projects."""
        lead = images.shape[:-3]
        h, w = images.shape[-3], images.shape[-2]
        x = images.reshape(-1, h, w, 3).permute(0, 3, 1, 2)
        x = F.adaptive_avg_pool2d(x, MOCK_GRID)
        return x.permute(0, 2, 3, 1).reshape(*lead, MOCK_GRID, MOCK_GRID, 3)

    def encode_image(self, images) -> torch.Tensor:
        images = torch.as_tensor(images)
        if images.shape[-1] != 3 or images.ndim < 3:
            raise ValueError(f"expected (..., H, W, 3) images, got shape {tuple(images.shape)}")
        v = self.pooled_image(images)
        v = v.reshape(*v.shape[:-3], -1) - 0.5
        return _normalize(v @ self._image_proj.to(v.dtype))

    def encode_prompt(self, tokens) -> torch.Tensor:
        tokens = torch.as_tensor(tokens)
        if tokens.shape[-1] != EMBED_DIM or tokens.ndim < 2:
            raise ValueError(f"expected (..., N, {EMBED_DIM}) prompt tokens, got shape {tuple(tokens.shape)}")
        pooled = tokens.mean(dim=-2)
        return _normalize(pooled @ self._text_proj.to(pooled.dtype))


def mock_encoder(seed: int = 0) -> MockEncoder:
    return MockEncoder(seed)


# --------------------------------------------------------------------------- external backends


class ExternalEncoder(EncoderPair):
    """Wraps a backend object exposing ``encode_image``/``encode_prompt``.

    Output width is checked at construction and every output is renormalized. Calls
    are serialized with a lock because third-party backends are not assumed reentrant.
    """

    def __init__(self, backend: Any, name: str, deterministic: bool = True, probe_size: int = 32):
        self._backend = backend
        self.name = name
        self.deterministic = deterministic
        self._lock = threading.Lock()
        try:
            img_w = self._raw_image(torch.full((1, probe_size, probe_size, 3), 0.5)).shape[-1]
            txt_w = self._raw_prompt(torch.zeros(1, 4, EMBED_DIM)).shape[-1]
        except ConfigError:
            raise
        except Exception as exc:
            raise ConfigError(f"encoder backend {name!r} failed its probe call: {exc}") from exc
        for kind, width in (("image", img_w), ("text", txt_w)):
            if width != EMBED_DIM:
                raise ConfigError(f"{kind} embedding width is {width}, expected {EMBED_DIM}")

    def _raw_image(self, images):
        with self._lock:
            return torch.as_tensor(self._backend.encode_image(images))

    def _raw_prompt(self, tokens):
        with self._lock:
            return torch.as_tensor(self._backend.encode_prompt(tokens))

    def encode_image(self, images) -> torch.Tensor:
        return _normalize(self._raw_image(torch.as_tensor(images)))

    def encode_prompt(self, tokens) -> torch.Tensor:
        return _normalize(self._raw_prompt(torch.as_tensor(tokens)))


class _TransformersClip:
    """Hugging Face CLIP with continuous prompt tokens fed in place of word embeddings."""

    mean = (0.48145466, 0.4578275, 0.40821073)
    std = (0.26862954, 0.26130258, 0.27577711)

    def __init__(self, model_id: str, device: str = "cpu"):
        from transformers import CLIPModel

        self.model = CLIPModel.from_pretrained(model_id).to(device).eval()
        for p in self.model.parameters():
            p.requires_grad_(False)
        self.device = device
        self.size = self.model.config.vision_config.image_size

    def encode_image(self, images):
        x = images.to(self.device, torch.float32).reshape(-1, *images.shape[-3:]).permute(0, 3, 1, 2)
        x = F.interpolate(x, size=(self.size, self.size), mode="bicubic", align_corners=False)
        mean = torch.tensor(self.mean, device=self.device).view(1, 3, 1, 1)
        std = torch.tensor(self.std, device=self.device).view(1, 3, 1, 1)
        feats = self.model.get_image_features(pixel_values=(x - mean) / std)
        feats = getattr(feats, "pooler_output", feats)
        return feats.reshape(*images.shape[:-3], -1)

    def encode_prompt(self, tokens):
        text = self.model.text_model
        cfg = self.model.config.text_config
        lead = tokens.shape[:-2]
        t = tokens.to(self.device, torch.float32).reshape(-1, *tokens.shape[-2:])
        table = text.embeddings.token_embedding.weight
        bos = table[cfg.bos_token_id].expand(t.shape[0], 1, -1)
        eos = table[cfg.eos_token_id].expand(t.shape[0], 1, -1)
        seq = torch.cat([bos, t, eos], dim=1)
        hidden = text.embeddings(inputs_embeds=seq)
        n = seq.shape[1]
        mask = torch.full((n, n), float("-inf"), device=self.device).triu(1).view(1, 1, n, n)
        out = text.encoder(inputs_embeds=hidden, attention_mask=mask)
        last = text.final_layer_norm(out.last_hidden_state)[:, -1]
        feats = self.model.text_projection(last)
        return feats.reshape(*lead, -1)


def external_clip_adapter(config: Mapping[str, Any]) -> ExternalEncoder:
    """Build an encoder from an adapter config.

    Keys: ``backend`` (``"transformers"`` or ``"callable"``), ``model`` (a Hugging Face
    model id / local path, or ``"module:factory"`` for ``callable``), ``device``
    (default ``"cpu"``). Any failure to reach the backend is a ``ConfigError``.
    """
    kind = config.get("backend")
    model = config.get("model")
    device = config.get("device", "cpu") or "cpu"
    if not kind:
        raise ConfigError("encoder adapter config is missing 'backend'")
    if not model:
        raise ConfigError("encoder adapter config is missing 'model'")
    if kind == "callable":
        mod_name, _, attr = str(model).partition(":")
        try:
            factory = getattr(importlib.import_module(mod_name), attr)
            backend = factory(dict(config))
        except Exception as exc:
            raise ConfigError(f"cannot construct callable backend {model!r}: {exc}") from exc
        return ExternalEncoder(backend, name=f"callable:{model}")
    if kind == "transformers":
        try:
            backend = _TransformersClip(str(model), device)
        except Exception as exc:
            raise ConfigError(f"cannot load CLIP model {model!r}: {exc}") from exc
        return ExternalEncoder(backend, name=f"clip:{model}", probe_size=backend.size)
    raise ConfigError(f"unknown encoder backend {kind!r}")
