"""Command-line entry points for the fine-tuning driver."""

from __future__ import annotations

import argparse
import sys

from .eval import smoke_eval
from .serve import serve_forever
from .train import FinetuneJobSpec, train_adapters


def _cmd_train(args) -> int:
    spec = FinetuneJobSpec.from_json(args.spec)
    result = train_adapters(spec)
    reduction = result.final_loss / result.initial_loss if result.initial_loss else float("nan")
    print(
        f"trained {len(result.log)} steps: loss {result.initial_loss:.4f} -> "
        f"{result.final_loss:.4f} ({reduction:.1%} of initial)"
    )
    frozen = result.base_hash_before == result.base_hash_after
    print(f"adapter saved to {result.adapter_path}; base weights unchanged: {frozen}")
    return 0 if frozen else 1


def _cmd_smoke_eval(args) -> int:
    report = smoke_eval(args.adapter, args.val)
    print(report.summary())
    return 0


def _cmd_serve(args) -> int:
    serve_forever(args.adapter, args.host, args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="finetune-driver", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train adapters from a job spec JSON")
    p.add_argument("--spec", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("smoke-eval", help="fixed-position diagnosis-token accuracy")
    p.add_argument("--adapter", required=True, help="training output directory")
    p.add_argument("--val", required=True, help="chat JSONL to score")
    p.set_defaults(func=_cmd_smoke_eval)

    p = sub.add_parser("serve", help="serve the tuned model over chat completions")
    p.add_argument("--adapter", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
