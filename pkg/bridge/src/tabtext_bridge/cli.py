"""Command-line adapter: export embeddings, fine-tune and run the generator.

Every output is a file the main toolkit already reads; nothing here talks to
it in-process. Errors print to stderr with an ``error:`` prefix and exit 2.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .export import POOLING, export_embeddings
from .generate import (DEFAULT_BEAM_SIZE, DEFAULT_MAX_LENGTH,
                       finetune_generator, generate_questions)
from .models import available_models


def cmd_export(args) -> int:
    manifest = export_embeddings(args.blocks, args.out, model=args.model,
                                 strategy=args.strategy, dim=args.dim)
    print(f"exported {manifest['n_blocks']} blocks at dim {manifest['dim']} "
          f"({manifest['strategy']}, model {manifest['model']}) to {args.out}")
    print(f"manifest content hash {manifest['content_hash'][:16]}")
    return 0


def cmd_finetune(args) -> int:
    state = finetune_generator(args.pairs, args.blocks, args.checkpoint)
    print(f"fit template weights on {state['pairs_seen']} oracle pairs; "
          f"{len(state['column_weights'])} columns seen; "
          f"checkpoint: {args.checkpoint}")
    return 0


def cmd_generate(args) -> int:
    summary = generate_questions(args.blocks, args.out,
                                 checkpoint=args.checkpoint,
                                 beam_size=args.beam_size,
                                 max_length=args.max_length)
    for skip in summary["skipped"]:
        print(f"skipped {skip['block_id']}: {skip['reason']}", file=sys.stderr)
    print(f"generated {summary['n_questions']} questions for "
          f"{summary['n_blocks']} blocks ({summary['n_skipped']} skipped) "
          f"to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tabtext-bridge",
        description="Model-side adapter writing the table-text toolkit's "
                    "file formats.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="pool block embeddings into index.bin")
    p.add_argument("--blocks", required=True,
                   help="flattened blocks JSONL (block_id, text)")
    p.add_argument("--out", required=True, help="index file to write")
    p.add_argument("--model", default="hash-v1",
                   help=f"encoder id, one of: {', '.join(available_models())}")
    p.add_argument("--strategy", default="first", choices=POOLING)
    p.add_argument("--dim", type=int, default=32,
                   help="per-token state dimension (default 32)")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("finetune", help="fit generator weights to oracle pairs")
    p.add_argument("--pairs", required=True,
                   help="oracle pairs JSONL (block_id, question)")
    p.add_argument("--blocks", required=True, help="blocks JSONL")
    p.add_argument("--checkpoint", required=True, help="checkpoint JSON to write")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("generate", help="back-generate one question per block")
    p.add_argument("--blocks", required=True, help="blocks JSONL")
    p.add_argument("--out", required=True, help="questions JSONL to write")
    p.add_argument("--checkpoint", default=None,
                   help="generator checkpoint (default: uniform weights)")
    p.add_argument("--beam-size", type=int, default=DEFAULT_BEAM_SIZE,
                   help=f"candidates weighed per block (default {DEFAULT_BEAM_SIZE})")
    p.add_argument("--max-length", type=int, default=DEFAULT_MAX_LENGTH,
                   help=f"token cap per question (default {DEFAULT_MAX_LENGTH})")
    p.set_defaults(func=cmd_generate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
