"""Serve a trained adapter behind the chat-completions wire protocol.

POST {base}/chat/completions with {model, messages, temperature,
max_tokens, logit_bias?} is answered with choices[0].message.content, so
any client speaking the standard protocol (including the harness that
produced the training corpus) can evaluate the tuned model. Decoding is
greedy; logit_bias maps token ids (bytes; "0"=48, "1"=49) to additive
biases.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import torch

from .model import TinyChatLM
from .tokenizer import ByteTokenizer
from .train import load_trained


def generate(
    model: TinyChatLM,
    tokenizer: ByteTokenizer,
    messages: list[dict],
    max_tokens: int = 16,
    logit_bias: dict | None = None,
) -> tuple[str, str]:
    """Greedy continuation of the rendered chat; returns (text, finish_reason)."""
    prompt = tokenizer.render_prompt(messages)
    tokens = tokenizer.encode(prompt)
    budget = model.config.max_seq - max_tokens
    if len(tokens) > budget:
        tokens = tokens[-budget:]
    bias = {int(k): float(v) for k, v in (logit_bias or {}).items()}
    produced: list[int] = []
    finish = "length"
    with torch.no_grad():
        for _ in range(max_tokens):
            logits = model(torch.tensor([tokens], dtype=torch.long))[0, -1]
            for token_id, value in bias.items():
                if 0 <= token_id < logits.shape[0]:
                    logits[token_id] += value
            next_token = int(torch.argmax(logits))
            if next_token == tokenizer.eos_id:
                finish = "stop"
                break
            produced.append(next_token)
            tokens.append(next_token)
    return tokenizer.decode(produced), finish


def make_server(adapter_dir: str | Path, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    model, tokenizer, spec = load_trained(adapter_dir)
    model_name = spec.base_model

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self) -> None:  # noqa: N802
            if self.path.rstrip("/").split("/")[-2:] != ["chat", "completions"]:
                self.send_error(404, "unknown route")
                return
            length = int(self.headers.get("Content-Length", "0"))
            try:
                body = json.loads(self.rfile.read(length))
                messages = body["messages"]
                max_tokens = int(body.get("max_tokens", 16))
                logit_bias = body.get("logit_bias")
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                self.send_error(400, f"bad request: {exc}")
                return
            text, finish = generate(model, tokenizer, messages, max_tokens, logit_bias)
            reply = {
                "id": "ftd-1",
                "object": "chat.completion",
                "model": body.get("model", model_name),
                "choices": [
                    {
                        "index": 0,
                        "message": {"role": "assistant", "content": text},
                        "finish_reason": finish,
                    }
                ],
                "usage": {
                    "prompt_tokens": sum(len(m.get("content", "")) for m in messages),
                    "completion_tokens": len(text),
                },
            }
            payload = json.dumps(reply).encode("utf-8")
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def log_message(self, *args) -> None:
            pass

    return ThreadingHTTPServer((host, port), Handler)


def serve_forever(adapter_dir: str | Path, host: str, port: int) -> None:  # pragma: no cover
    server = make_server(adapter_dir, host, port)
    address = server.server_address
    print(f"serving chat completions on http://{address[0]}:{address[1]}/chat/completions")
    thread = threading.Thread(target=server.serve_forever)
    thread.start()
    try:
        thread.join()
    except KeyboardInterrupt:
        server.shutdown()
