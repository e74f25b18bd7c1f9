"""Frozen speech-encoder wrappers.

Known architectures can be built with random weights (seeded) or loaded from
a published checkpoint.  Inference always runs in eval mode with gradients
off, so extraction is deterministic given weights and input.  Hidden state
indexing: 0 is the convolutional front-end projection, i >= 1 is the output
of transformer layer i; the mapping is recorded in the extraction manifest
rather than assumed downstream.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch

log = logging.getLogger(__name__)

ENCODER_RATE_HZ = 16_000
FRAME_STRIDE_US = 20_000


class ModelError(Exception):
    pass


@dataclass(frozen=True)
class ArchSpec:
    """Geometry of a known encoder family member."""

    family: str
    hidden_size: int
    num_layers: int
    checkpoint: str

    def build_config(self):
        from transformers import HubertConfig, WavLMConfig

        common = dict(
            hidden_size=self.hidden_size,
            num_hidden_layers=self.num_layers,
            num_attention_heads=self.hidden_size // 64,
            intermediate_size=self.hidden_size * 4,
        )
        if self.hidden_size >= 1024:
            # the large checkpoints use pre-norm blocks and layer-norm features
            common.update(do_stable_layer_norm=True, feat_extract_norm="layer")
        if self.family == "hubert":
            return HubertConfig(**common)
        if self.family == "wavlm":
            return WavLMConfig(**common)
        raise ModelError(f"no config builder for family {self.family!r}")

    def build_model(self):
        from transformers import HubertModel, WavLMModel

        config = self.build_config()
        if self.family == "hubert":
            return HubertModel(config)
        return WavLMModel(config)


REGISTRY: dict[str, ArchSpec] = {
    "hubert-base": ArchSpec("hubert", 768, 12, "facebook/hubert-base-ls960"),
    "hubert-large": ArchSpec("hubert", 1024, 24, "facebook/hubert-large-ll60k"),
    "wavlm-base": ArchSpec("wavlm", 768, 12, "microsoft/wavlm-base"),
    "wavlm-large": ArchSpec("wavlm", 1024, 24, "microsoft/wavlm-large"),
}


class SpeechEncoder:
    """A frozen encoder exposing per-layer frame embeddings."""

    def __init__(self, model, model_id: str, num_layers: int, random_init: bool, seed: int):
        self.model = model.eval()
        self.model_id = model_id
        self.num_layers = num_layers
        self.random_init = random_init
        self.seed = seed
        for p in self.model.parameters():
            p.requires_grad_(False)

    @classmethod
    def load(cls, model_id: str, random_init: bool = False, seed: int = 0) -> "SpeechEncoder":
        spec = REGISTRY.get(model_id)
        if random_init:
            if spec is None:
                raise ModelError(
                    f"random init needs a registered architecture; got {model_id!r} "
                    f"(known: {sorted(REGISTRY)})"
                )
            torch.manual_seed(seed)
            model = spec.build_model()
            return cls(model, model_id, spec.num_layers, random_init=True, seed=seed)
        checkpoint = spec.checkpoint if spec is not None else model_id
        try:
            from transformers import AutoModel

            model = AutoModel.from_pretrained(checkpoint)
        except Exception as exc:
            raise ModelError(f"cannot resolve checkpoint {checkpoint!r}: {exc}") from exc
        return cls(model, model_id, model.config.num_hidden_layers, random_init=False, seed=seed)

    @property
    def hidden_size(self) -> int:
        return self.model.config.hidden_size

    def validate_layers(self, layers: list[int]) -> None:
        bad = [l for l in layers if not (0 <= l <= self.num_layers)]
        if bad:
            raise ModelError(
                f"layers {bad} not in [0, {self.num_layers}] for {self.model_id}"
            )

    def embed(self, samples: np.ndarray, layers: list[int]) -> dict[int, np.ndarray]:
        """Per-layer T x d float32 matrices for one (16 kHz mono) clip."""
        self.validate_layers(layers)
        x = torch.from_numpy(np.ascontiguousarray(samples, dtype=np.float32))
        with torch.no_grad():
            out = self.model(x.unsqueeze(0), output_hidden_states=True)
        return {
            layer: out.hidden_states[layer].squeeze(0).numpy().astype(np.float32)
            for layer in layers
        }

    def embed_chunked(
        self,
        samples: np.ndarray,
        layers: list[int],
        chunk_s: float = 30.0,
        overlap_s: float = 1.0,
    ) -> dict[int, np.ndarray]:
        """Long inputs processed in overlapping chunks.

        Chunks advance by chunk_s - overlap_s; each chunk after the first
        drops the frames covering its leading overlap, so every output frame
        comes from exactly one chunk.
        """
        chunk_n = int(round(chunk_s * ENCODER_RATE_HZ))
        if samples.size <= chunk_n:
            return self.embed(samples, layers)
        hop_n = chunk_n - int(round(overlap_s * ENCODER_RATE_HZ))
        if hop_n <= 0:
            raise ModelError("overlap must be smaller than the chunk length")
        drop_frames = int(round(overlap_s * 1e6 / FRAME_STRIDE_US))
        pieces: dict[int, list[np.ndarray]] = {layer: [] for layer in layers}
        start = 0
        first = True
        while start < samples.size:
            chunk = samples[start : start + chunk_n]
            if chunk.size < ENCODER_RATE_HZ // 25:  # ignore sub-40 ms tails
                break
            embedded = self.embed(chunk, layers)
            for layer in layers:
                matrix = embedded[layer]
                pieces[layer].append(matrix if first else matrix[drop_frames:])
            first = False
            start += hop_n
        return {layer: np.concatenate(pieces[layer], axis=0) for layer in layers}
