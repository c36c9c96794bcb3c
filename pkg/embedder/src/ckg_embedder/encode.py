"""Encode node texts with a pretrained masked-LM encoder.

Each text is wrapped as [CLS] + text + [SEP], truncated to the maximum
sequence length, and represented by the final-layer [CLS] vector. The output
is the reasoning engine's embedding file format: a "<n> <d>" header, then per
node a text line followed by the vector rendered as 9-significant-digit
decimals, which float32 values survive bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EncoderError(Exception):
    """Encoder loading or input problems; maps to a nonzero exit."""


@dataclass
class EncodingJob:
    texts: list[str]  # deduplicated, input order preserved
    model_name: str
    max_length: int = 128
    batch_size: int = 64

    def __post_init__(self) -> None:
        deduped: list[str] = []
        seen: set[str] = set()
        for text in self.texts:
            if not text:
                raise EncoderError("node text must be non-empty")
            if "\t" in text or "\n" in text or "\r" in text:
                raise EncoderError(f"node text contains tab/newline: {text!r}")
            if text not in seen:
                seen.add(text)
                deduped.append(text)
        self.texts = deduped
        if self.max_length < 4:
            raise EncoderError("max_length must be at least 4")
        if self.batch_size < 1:
            raise EncoderError("batch_size must be at least 1")


@dataclass
class EncodingResult:
    texts: list[str]
    vectors: np.ndarray  # (n, hidden) float32
    truncated_count: int = 0


def read_node_list(path: str) -> list[str]:
    """One text per line; blank lines ignored; order preserved."""
    try:
        with open(path, encoding="utf-8") as fh:
            return [line.rstrip("\r\n") for line in fh if line.strip()]
    except OSError as exc:
        raise EncoderError(f"cannot open node list {path}: {exc.strerror}") from None


def read_triple_texts(path: str) -> list[str]:
    """Head and tail texts of a tab-separated triple file, in first appearance order."""
    texts: list[str] = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise EncoderError(f"cannot open triple file {path}: {exc.strerror}") from None
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise EncoderError(f"{path}:{lineno}: expected 3 tab-separated fields")
            texts.append(fields[0])
            texts.append(fields[2])
    return texts


def _load_encoder(model_name: str):
    try:
        import torch
        from transformers import AutoModel, AutoTokenizer
    except ImportError as exc:
        raise EncoderError(f"transformers/torch unavailable: {exc}") from None
    try:
        tokenizer = AutoTokenizer.from_pretrained(model_name)
        model = AutoModel.from_pretrained(model_name)
    except Exception as exc:
        raise EncoderError(f"cannot load encoder {model_name!r}: {exc}") from None
    model.eval()
    return torch, tokenizer, model


def encode_nodes(job: EncodingJob) -> EncodingResult:
    """Run the encoder over the job's texts; counts truncations."""
    torch, tokenizer, model = _load_encoder(job.model_name)
    rows: list[np.ndarray] = []
    truncated = 0
    with torch.no_grad():
        for offset in range(0, len(job.texts), job.batch_size):
            batch = job.texts[offset : offset + job.batch_size]
            full = tokenizer(batch, add_special_tokens=True)["input_ids"]
            truncated += sum(1 for ids in full if len(ids) > job.max_length)
            encoded = tokenizer(
                batch,
                padding=True,
                truncation=True,
                max_length=job.max_length,
                return_tensors="pt",
            )
            output = model(**encoded)
            cls = output.last_hidden_state[:, 0, :]
            rows.append(cls.numpy().astype(np.float32))
    if not rows:
        raise EncoderError("no texts to encode")
    return EncodingResult(
        texts=list(job.texts),
        vectors=np.concatenate(rows, axis=0),
        truncated_count=truncated,
    )


def write_embedding_file(path: str, result: EncodingResult) -> None:
    n, dim = result.vectors.shape
    if n != len(result.texts):
        raise EncoderError("vector count does not match text count")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{n} {dim}\n")
        for text, row in zip(result.texts, result.vectors):
            fh.write(text + "\n")
            fh.write(" ".join("%.9g" % v for v in row.tolist()) + "\n")
