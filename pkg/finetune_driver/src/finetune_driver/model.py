"""Tiny causal transformer used as the frozen chat base.

Weights are deterministic functions of the config seed, so a base model
identifier fully determines the base. Real deployments would swap in a
pretrained checkpoint; the training loop only ever sees frozen base
parameters plus trainable adapters either way.

Attention uses explicit q/k/v/o linear modules so adapter injection can
reach every projection. Batches are right-padded; causal masking keeps pad
positions out of every real token's receptive field, and the loss mask
ignores logits at pad positions.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .errors import UnknownBaseModel
from .tokenizer import VOCAB_SIZE


@dataclass(frozen=True)
class ModelConfig:
    name: str
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 256
    max_seq: int = 640
    init_seed: int = 1337


BASE_MODELS = {
    "tiny-chat-64": ModelConfig(name="tiny-chat-64"),
    "tiny-chat-128": ModelConfig(name="tiny-chat-128", d_model=128, d_ff=512, n_layers=4),
}


def resolve_base_model(identifier: str) -> ModelConfig:
    try:
        return BASE_MODELS[identifier]
    except KeyError:
        raise UnknownBaseModel(
            f"unknown base model {identifier!r}; available: {sorted(BASE_MODELS)}"
        ) from None


class CausalSelfAttention(nn.Module):
    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        if config.d_model % config.n_heads:
            raise ValueError("d_model must divide by n_heads")
        self.n_heads = config.n_heads
        self.head_dim = config.d_model // config.n_heads
        self.q_proj = nn.Linear(config.d_model, config.d_model)
        self.k_proj = nn.Linear(config.d_model, config.d_model)
        self.v_proj = nn.Linear(config.d_model, config.d_model)
        self.o_proj = nn.Linear(config.d_model, config.d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        batch, seq, _ = x.shape

        def heads(tensor: torch.Tensor) -> torch.Tensor:
            return tensor.view(batch, seq, self.n_heads, self.head_dim).transpose(1, 2)

        q, k, v = heads(self.q_proj(x)), heads(self.k_proj(x)), heads(self.v_proj(x))
        attended = F.scaled_dot_product_attention(q, k, v, is_causal=True)
        merged = attended.transpose(1, 2).reshape(batch, seq, -1)
        return self.o_proj(merged)


class Block(nn.Module):
    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.ln1 = nn.LayerNorm(config.d_model)
        self.attn = CausalSelfAttention(config)
        self.ln2 = nn.LayerNorm(config.d_model)
        self.ff_in = nn.Linear(config.d_model, config.d_ff)
        self.ff_out = nn.Linear(config.d_ff, config.d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.ff_out(F.gelu(self.ff_in(self.ln2(x))))


class TinyChatLM(nn.Module):
    def __init__(self, config: ModelConfig) -> None:
        super().__init__()
        self.config = config
        self.token_embedding = nn.Embedding(VOCAB_SIZE, config.d_model)
        self.position_embedding = nn.Embedding(config.max_seq, config.d_model)
        self.blocks = nn.ModuleList(Block(config) for _ in range(config.n_layers))
        self.ln_final = nn.LayerNorm(config.d_model)
        self.lm_head = nn.Linear(config.d_model, VOCAB_SIZE)
        self._deterministic_init(config.init_seed)

    def _deterministic_init(self, seed: int) -> None:
        # 1/sqrt(fan_in) keeps the frozen random features well-conditioned,
        # which is what lets low-rank adapters separate individual records.
        generator = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for parameter in self.parameters():
                if parameter.dim() >= 2:
                    std = parameter.shape[-1] ** -0.5
                    parameter.copy_(
                        torch.randn(parameter.shape, generator=generator) * std
                    )
                else:
                    parameter.zero_()
            for module in self.modules():
                if isinstance(module, nn.LayerNorm):
                    module.weight.fill_(1.0)  # a zeroed norm gain would kill the signal path
                    module.bias.zero_()

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        _, seq = tokens.shape
        if seq > self.config.max_seq:
            raise ValueError(f"sequence length {seq} exceeds context {self.config.max_seq}")
        positions = torch.arange(seq, device=tokens.device)
        x = self.token_embedding(tokens) + self.position_embedding(positions)
        for block in self.blocks:
            x = block(x)
        return self.lm_head(self.ln_final(x))


def base_parameter_hash(model: nn.Module) -> str:
    """SHA-256 over all non-adapter parameters, in name order."""
    digest = hashlib.sha256()
    for name, parameter in sorted(model.named_parameters()):
        if "lora_" in name:
            continue
        digest.update(name.encode("utf-8"))
        digest.update(parameter.detach().cpu().numpy().tobytes())
    return digest.hexdigest()
