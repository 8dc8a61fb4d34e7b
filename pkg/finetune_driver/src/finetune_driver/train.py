"""Adapter training over a frozen base.

Only the low-rank adapter matrices receive gradients; the base weights are
hashed before and after training and must come out identical. Loss is
next-token cross-entropy restricted to the completion tokens, where the
diagnosis token lives.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
from torch.nn import functional as F

from .data import EncodedExample, encode_record, load_chat_jsonl
from .errors import NonFiniteLoss, OutOfMemory
from .lora import adapter_state_dict, inject_adapters, trainable_parameters
from .model import TinyChatLM, base_parameter_hash, resolve_base_model
from .tokenizer import ByteTokenizer

SCHEDULERS = ("constant", "linear", "cosine")


@dataclass(frozen=True)
class FinetuneJobSpec:
    train_jsonl: str
    output_dir: str
    val_jsonl: str | None = None
    base_model: str = "tiny-chat-64"
    rank: int = 8
    alpha: float = 16.0
    dropout: float = 0.0
    learning_rate: float = 5e-3
    batch_size: int = 8
    weight_decay: float = 0.0
    max_steps: int = 100
    scheduler: str = "constant"
    quantize: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.scheduler not in SCHEDULERS:
            raise ValueError(f"scheduler must be one of {SCHEDULERS}")

    @staticmethod
    def from_json(path: str | Path) -> "FinetuneJobSpec":
        return FinetuneJobSpec(**json.loads(Path(path).read_text(encoding="utf-8")))

    def hash(self) -> str:
        canonical = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class TrainResult:
    adapter_path: Path
    log: list = field(default_factory=list)
    initial_loss: float = 0.0
    final_loss: float = 0.0
    base_hash_before: str = ""
    base_hash_after: str = ""
    spec_hash: str = ""


def _collate(examples: list[EncodedExample]) -> tuple[torch.Tensor, torch.Tensor]:
    """Right-pad token sequences; mask marks positions whose NEXT token is a
    completion token (the positions that carry loss)."""
    width = max(len(e.tokens) for e in examples)
    tokens = torch.zeros(len(examples), width, dtype=torch.long)
    mask = torch.zeros(len(examples), width, dtype=torch.bool)
    for row, example in enumerate(examples):
        length = len(example.tokens)
        tokens[row, :length] = torch.tensor(example.tokens, dtype=torch.long)
        mask[row, example.completion_start - 1 : length - 1] = True
    return tokens, mask


def _masked_loss(model: TinyChatLM, tokens: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    logits = model(tokens)
    targets = tokens[:, 1:]
    predict_mask = mask[:, : tokens.shape[1] - 1]
    selected = logits[:, : tokens.shape[1] - 1][predict_mask]
    return F.cross_entropy(selected, targets[predict_mask])


def corpus_loss(model: TinyChatLM, examples: list[EncodedExample], batch_size: int = 16) -> float:
    model.eval()
    total = 0.0
    count = 0
    with torch.no_grad():
        for at in range(0, len(examples), batch_size):
            batch = examples[at : at + batch_size]
            tokens, mask = _collate(batch)
            n_positions = int(mask.sum())
            total += float(_masked_loss(model, tokens, mask)) * n_positions
            count += n_positions
    model.train()
    return total / max(count, 1)


def _lr_factor(scheduler: str, step: int, max_steps: int) -> float:
    progress = step / max_steps
    if scheduler == "linear":
        return max(1.0 - progress, 0.05)
    if scheduler == "cosine":
        return 0.05 + 0.95 * 0.5 * (1.0 + math.cos(math.pi * progress))
    return 1.0


def build_model(spec: FinetuneJobSpec) -> tuple[TinyChatLM, ByteTokenizer]:
    config = resolve_base_model(spec.base_model)
    model = TinyChatLM(config)
    inject_adapters(
        model, rank=spec.rank, alpha=spec.alpha, dropout=spec.dropout,
        seed=spec.seed, quantize=spec.quantize,
    )
    return model, ByteTokenizer()


def train_adapters(spec: FinetuneJobSpec) -> TrainResult:
    """Run the job; returns the result and writes artifacts to output_dir.

    Raises DataInvalid for malformed corpora and NonFiniteLoss if the loss
    leaves the reals (the step is aborted, nothing is saved).
    """
    records = load_chat_jsonl(spec.train_jsonl)
    if not records:
        raise ValueError("training corpus is empty")
    model, tokenizer = build_model(spec)
    config = model.config
    examples = [encode_record(r, tokenizer, config.max_seq) for r in records]

    hash_before = base_parameter_hash(model)
    initial_loss = corpus_loss(model, examples)

    optimizer = torch.optim.AdamW(
        trainable_parameters(model), lr=spec.learning_rate, weight_decay=spec.weight_decay
    )
    generator = torch.Generator().manual_seed(spec.seed)
    order: list[int] = []
    log: list[dict] = []
    model.train()
    for step in range(spec.max_steps):
        if len(order) < spec.batch_size:
            order.extend(torch.randperm(len(examples), generator=generator).tolist())
        batch_idx, order = order[: spec.batch_size], order[spec.batch_size :]
        tokens, mask = _collate([examples[i] for i in batch_idx])
        try:
            loss = _masked_loss(model, tokens, mask)
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"loss became non-finite at step {step + 1}")
            optimizer.zero_grad()
            loss.backward()
        except RuntimeError as exc:
            if "out of memory" in str(exc).lower():
                raise OutOfMemory(spec.batch_size, str(exc)) from None
            raise
        lr = spec.learning_rate * _lr_factor(spec.scheduler, step, spec.max_steps)
        for group in optimizer.param_groups:
            group["lr"] = lr
        optimizer.step()
        log.append({"step": step + 1, "loss": float(loss.detach()), "lr": lr})

    final_loss = corpus_loss(model, examples)
    hash_after = base_parameter_hash(model)

    out_dir = Path(spec.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    adapter_path = out_dir / "adapter.pt"
    torch.save(adapter_state_dict(model), adapter_path)
    (out_dir / "spec.json").write_text(
        json.dumps(asdict(spec), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out_dir / "training_log.json").write_text(
        json.dumps(
            {
                "spec_hash": spec.hash(),
                "base_hash_before": hash_before,
                "base_hash_after": hash_after,
                "initial_loss": initial_loss,
                "final_loss": final_loss,
                "steps": log,
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    return TrainResult(
        adapter_path=adapter_path,
        log=log,
        initial_loss=initial_loss,
        final_loss=final_loss,
        base_hash_before=hash_before,
        base_hash_after=hash_after,
        spec_hash=spec.hash(),
    )


def load_trained(adapter_dir: str | Path) -> tuple[TinyChatLM, ByteTokenizer, FinetuneJobSpec]:
    """Rebuild the model from a training output directory."""
    adapter_dir = Path(adapter_dir)
    spec = FinetuneJobSpec.from_json(adapter_dir / "spec.json")
    model, tokenizer = build_model(spec)
    state = torch.load(adapter_dir / "adapter.pt", weights_only=True)
    from .lora import load_adapter_state

    load_adapter_state(model, state)
    model.eval()
    return model, tokenizer, spec
