"""finetune_driver: low-rank adapter fine-tuning over chat JSONL corpora.

Consumes the chat-format JSONL (and sidecar manifest) exported by the
prompting harness, trains adapters over a frozen tiny chat base, evaluates
fixed-position diagnosis-token accuracy, and serves the tuned model behind
the standard chat-completions wire protocol.
"""

from .data import ChatRecord, encode_record, load_chat_jsonl
from .errors import DataInvalid, DriverError, NonFiniteLoss, OutOfMemory, UnknownBaseModel
from .eval import SmokeReport, smoke_eval, smoke_eval_model
from .lora import LoRALinear, inject_adapters
from .model import BASE_MODELS, ModelConfig, TinyChatLM, base_parameter_hash
from .serve import generate, make_server
from .tokenizer import ByteTokenizer
from .train import FinetuneJobSpec, TrainResult, load_trained, train_adapters

__version__ = "0.1.0"
