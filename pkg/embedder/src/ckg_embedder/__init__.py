"""Offline node-text encoder emitting the kgreason embedding file format."""

from .encode import (
    EncoderError,
    EncodingJob,
    EncodingResult,
    encode_nodes,
    read_node_list,
    read_triple_texts,
    write_embedding_file,
)

__version__ = "0.1.0"
