"""Command line for the node-text encoder."""

from __future__ import annotations

import argparse
import sys
from typing import Optional

from .encode import (
    EncoderError,
    EncodingJob,
    encode_nodes,
    read_node_list,
    read_triple_texts,
    write_embedding_file,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ckg-embed",
        description="Encode node texts with a masked-LM encoder into the "
        "engine's embedding file format.",
    )
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--nodes", help="node list file, one text per line")
    source.add_argument("--triples", help="tab-separated triple file; texts taken from heads and tails")
    parser.add_argument("--output", required=True, help="embedding file to write")
    parser.add_argument("--model", required=True, help="encoder model name or local path")
    parser.add_argument("--batch-size", type=int, default=64)
    parser.add_argument("--max-length", type=int, default=128)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        texts = read_node_list(args.nodes) if args.nodes else read_triple_texts(args.triples)
        job = EncodingJob(
            texts=texts,
            model_name=args.model,
            max_length=args.max_length,
            batch_size=args.batch_size,
        )
        result = encode_nodes(job)
        write_embedding_file(args.output, result)
    except EncoderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if result.truncated_count:
        print(
            f"warning: truncated {result.truncated_count} text(s) to {args.max_length} tokens",
            file=sys.stderr,
        )
    print(
        f"wrote {len(result.texts)} embeddings of dim {result.vectors.shape[1]} to {args.output}",
        file=sys.stderr,
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
