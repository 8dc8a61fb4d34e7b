"""Low-rank adapters over frozen (optionally quantized) linear layers."""

from __future__ import annotations

import torch
from torch import nn


class LoRALinear(nn.Module):
    """y = W x + (alpha/r) * B A dropout(x), with W frozen and B zero-init,
    so training starts from the base model's function exactly."""

    def __init__(self, base: nn.Linear, rank: int, alpha: float, dropout: float,
                 generator: torch.Generator) -> None:
        super().__init__()
        if rank < 1:
            raise ValueError("adapter rank must be >= 1")
        self.base = base
        for parameter in self.base.parameters():
            parameter.requires_grad_(False)
        self.scaling = alpha / rank
        self.dropout = nn.Dropout(dropout)
        self.lora_a = nn.Parameter(
            torch.randn(rank, base.in_features, generator=generator) / rank
        )
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, rank))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        delta = self.dropout(x) @ self.lora_a.T @ self.lora_b.T
        return self.base(x) + self.scaling * delta


def quantize_linear_int8(linear: nn.Linear) -> None:
    """Round weights to a per-output-channel symmetric int8 grid in place.

    A desk-scale stand-in for quantized frozen bases: values live on the
    int8 grid while staying fp32 tensors for arithmetic.
    """
    with torch.no_grad():
        weight = linear.weight
        scale = weight.abs().amax(dim=1, keepdim=True).clamp(min=1e-8) / 127.0
        weight.copy_(torch.round(weight / scale).clamp(-127, 127) * scale)


def inject_adapters(
    model: nn.Module, rank: int, alpha: float, dropout: float, seed: int,
    quantize: bool = False,
) -> list[str]:
    """Replace every nn.Linear in the model with an adapted copy.

    Freezes all base parameters (embeddings and norms included); only
    lora_a / lora_b remain trainable. Returns the adapted module paths.
    """
    generator = torch.Generator().manual_seed(seed)
    for parameter in model.parameters():
        parameter.requires_grad_(False)

    adapted: list[str] = []

    def visit(module: nn.Module, prefix: str) -> None:
        for name, child in list(module.named_children()):
            path = f"{prefix}.{name}" if prefix else name
            if isinstance(child, nn.Linear):
                if quantize:
                    quantize_linear_int8(child)
                setattr(module, name, LoRALinear(child, rank, alpha, dropout, generator))
                adapted.append(path)
            elif isinstance(child, LoRALinear):
                continue
            else:
                visit(child, path)

    visit(model, "")
    return adapted


def adapter_state_dict(model: nn.Module) -> dict:
    return {
        name: tensor.detach().cpu()
        for name, tensor in model.state_dict().items()
        if "lora_" in name
    }


def load_adapter_state(model: nn.Module, state: dict) -> None:
    missing = [name for name in state if name not in dict(model.state_dict())]
    if missing:
        raise KeyError(f"adapter state does not fit the model: {missing[:3]}")
    model.load_state_dict(state, strict=False)


def trainable_parameters(model: nn.Module):
    return [p for p in model.parameters() if p.requires_grad]
