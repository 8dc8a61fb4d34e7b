import torch

from finetune_driver.lora import (
    LoRALinear,
    adapter_state_dict,
    inject_adapters,
    quantize_linear_int8,
    trainable_parameters,
)
from finetune_driver.model import TinyChatLM, base_parameter_hash, resolve_base_model
from finetune_driver.errors import UnknownBaseModel

import pytest


def fresh(identifier="tiny-chat-64"):
    return TinyChatLM(resolve_base_model(identifier))


def test_base_model_registry():
    assert resolve_base_model("tiny-chat-64").d_model == 64
    with pytest.raises(UnknownBaseModel):
        resolve_base_model("gpt-1t")


def test_deterministic_init():
    assert base_parameter_hash(fresh()) == base_parameter_hash(fresh())
    assert base_parameter_hash(fresh()) != base_parameter_hash(fresh("tiny-chat-128"))


def test_forward_shape_and_context_limit():
    model = fresh()
    logits = model(torch.randint(0, 256, (2, 10)))
    assert logits.shape == (2, 10, 257)
    with pytest.raises(ValueError):
        model(torch.zeros(1, model.config.max_seq + 1, dtype=torch.long))


def test_adapters_start_as_identity():
    model = fresh()
    tokens = torch.randint(0, 256, (1, 12))
    with torch.no_grad():
        before = model(tokens)
    inject_adapters(model, rank=8, alpha=16.0, dropout=0.0, seed=1)
    model.eval()
    with torch.no_grad():
        after = model(tokens)
    assert torch.allclose(before, after, atol=1e-6)  # lora_b starts at zero


def test_only_adapters_trainable():
    model = fresh()
    paths = inject_adapters(model, rank=4, alpha=8.0, dropout=0.1, seed=2)
    # q/k/v/o + 2 feed-forward linears per block, x2 blocks, + lm_head
    assert len(paths) == 13
    assert "lm_head" in paths
    trainable = trainable_parameters(model)
    assert len(trainable) == 26  # lora_a + lora_b per adapted linear
    for name, parameter in model.named_parameters():
        assert parameter.requires_grad == ("lora_" in name), name


def test_base_hash_ignores_adapters_and_detects_base_change():
    model = fresh()
    inject_adapters(model, rank=4, alpha=8.0, dropout=0.0, seed=3)
    before = base_parameter_hash(model)
    with torch.no_grad():
        for name, parameter in model.named_parameters():
            if "lora_b" in name:
                parameter.add_(1.0)
    assert base_parameter_hash(model) == before  # adapters excluded
    with torch.no_grad():
        model.lm_head.base.weight.add_(1e-3)
    assert base_parameter_hash(model) != before


def test_quantize_puts_weights_on_int8_grid():
    lin = torch.nn.Linear(16, 8)
    quantize_linear_int8(lin)
    weight = lin.weight.detach()
    scale = weight.abs().amax(dim=1, keepdim=True) / 127.0
    steps = weight / scale.clamp(min=1e-12)
    assert torch.allclose(steps, torch.round(steps), atol=1e-4)


def test_quantized_injection_freezes_quantized_base():
    model = fresh()
    inject_adapters(model, rank=4, alpha=8.0, dropout=0.0, seed=4, quantize=True)
    lora = model.lm_head
    assert isinstance(lora, LoRALinear)
    weight = lora.base.weight.detach()
    scale = weight.abs().amax(dim=1, keepdim=True) / 127.0
    steps = weight / scale.clamp(min=1e-12)
    assert torch.allclose(steps, torch.round(steps), atol=1e-4)
    assert not lora.base.weight.requires_grad


def test_adapter_state_dict_round_trip():
    model = fresh()
    inject_adapters(model, rank=4, alpha=8.0, dropout=0.0, seed=5)
    with torch.no_grad():
        for name, parameter in model.named_parameters():
            if "lora_" in name:
                parameter.normal_()
    state = adapter_state_dict(model)
    assert state and all("lora_" in k for k in state)

    clone = fresh()
    inject_adapters(clone, rank=4, alpha=8.0, dropout=0.0, seed=6)
    from finetune_driver.lora import load_adapter_state

    load_adapter_state(clone, state)
    tokens = torch.randint(0, 256, (1, 9))
    model.eval(); clone.eval()
    with torch.no_grad():
        assert torch.allclose(model(tokens), clone(tokens), atol=1e-6)
