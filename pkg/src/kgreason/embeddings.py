"""Node embeddings, cosine similarity, and deterministic k-NN retrieval.

Vectors are stored at float32; every dot product and norm is accumulated at
float64. Exact mode is the correctness reference (a full scan); the optional
approximate mode is a coarse quantizer whose recall must be measured with
`measure_recall`, never assumed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DataError, ParseError
from .kg import NodeTable

FLOAT_FORMAT = "%.9g"  # 9 significant digits: float32 values round-trip exactly


def _fmt(x: float) -> str:
    return FLOAT_FORMAT % x


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity of two vectors, accumulated at float64, in [-1, 1]."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape or u.ndim != 1:
        raise DataError(f"cosine shape mismatch: {u.shape} vs {v.shape}")
    u64 = u.astype(np.float64, copy=False)
    v64 = v.astype(np.float64, copy=False)
    nu = float(np.linalg.norm(u64))
    nv = float(np.linalg.norm(v64))
    if nu == 0.0 or nv == 0.0:
        raise DataError("cosine undefined for zero-norm input")
    return min(1.0, max(-1.0, float(np.dot(u64, v64)) / (nu * nv)))


@dataclass
class EmbeddingTable:
    """Dense float32 vectors for node ids 0..n-1 with precomputed norms."""

    vectors: np.ndarray  # (n, dim) float32
    norms: np.ndarray = field(default=None)  # (n,) float64

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2 or self.vectors.shape[1] < 1:
            raise DataError("embedding table must be a 2-d array")
        recomputed = np.linalg.norm(self.vectors.astype(np.float64), axis=1)
        if np.any(recomputed == 0.0):
            bad = int(np.argmax(recomputed == 0.0))
            raise DataError(f"zero-norm embedding for node id {bad}")
        if self.norms is None:
            self.norms = recomputed
        else:
            self.norms = np.asarray(self.norms, dtype=np.float64)
            if not np.allclose(self.norms, recomputed, rtol=1e-6, atol=0.0):
                raise DataError("stored norms disagree with recomputed norms")

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def vector(self, node_id: int) -> np.ndarray:
        if not 0 <= node_id < len(self):
            raise DataError(f"node id {node_id} has no embedding")
        return self.vectors[node_id]

    def cosine_ids(self, a: int, b: int) -> float:
        """Cosine between two stored vectors; identical ids score exactly 1.0."""
        if not (0 <= a < len(self) and 0 <= b < len(self)):
            raise DataError(f"node id without embedding: {a if a >= len(self) else b}")
        if a == b:
            return 1.0
        dot = float(np.dot(self.vectors[a].astype(np.float64), self.vectors[b].astype(np.float64)))
        return min(1.0, max(-1.0, dot / (self.norms[a] * self.norms[b])))


@dataclass
class KnnIndex:
    """Deterministic k-NN over an EmbeddingTable.

    mode "exact" is a full scan and the correctness reference. mode "approx"
    is a coarse quantizer: vectors are grouped into `n_clusters` by a seeded
    k-means and only the `n_probe` closest clusters are scanned per query.
    """

    table: EmbeddingTable
    mode: str = "exact"
    n_clusters: int = 0
    n_probe: int = 1
    _centroids: Optional[np.ndarray] = None
    _members: Optional[list[np.ndarray]] = None


def build_knn_index(
    table: EmbeddingTable,
    mode: str = "exact",
    n_clusters: int = 16,
    n_probe: int = 4,
    seed: int = 0,
) -> KnnIndex:
    if len(table) == 0:
        raise DataError("cannot index an empty embedding table")
    if mode == "exact":
        return KnnIndex(table=table, mode="exact")
    if mode != "approx":
        raise DataError(f"unknown index mode: {mode!r}")
    n_clusters = min(n_clusters, len(table))
    unit = table.vectors.astype(np.float64) / table.norms[:, None]
    rng = np.random.default_rng(seed)
    centroids = unit[rng.choice(len(table), size=n_clusters, replace=False)]
    assign = np.zeros(len(table), dtype=np.int64)
    for _ in range(10):
        sims = unit @ centroids.T
        assign = np.argmax(sims, axis=1)
        for c in range(n_clusters):
            mask = assign == c
            if mask.any():
                mean = unit[mask].mean(axis=0)
                norm = np.linalg.norm(mean)
                if norm > 0:
                    centroids[c] = mean / norm
    members = [np.flatnonzero(assign == c) for c in range(n_clusters)]
    return KnnIndex(
        table=table,
        mode="approx",
        n_clusters=n_clusters,
        n_probe=min(n_probe, n_clusters),
        _centroids=centroids,
        _members=members,
    )


def _scan_scores(table: EmbeddingTable, ids: Sequence[int], q64: np.ndarray, qnorm: float) -> list[tuple[int, float]]:
    # per-pair float64 dots so results are bit-identical to an independent
    # full-scan oracle using the same arithmetic
    out = []
    for i in ids:
        dot = float(np.dot(table.vectors[i].astype(np.float64), q64))
        out.append((int(i), dot / (float(table.norms[i]) * qnorm)))
    return out


def knn(index: KnnIndex, query: np.ndarray, k: int) -> list[tuple[int, float]]:
    """Top-k (node_id, cosine) pairs, descending score, ties by ascending id."""
    table = index.table
    if len(table) == 0:
        raise DataError("knn over an empty table")
    query = np.asarray(query)
    if query.ndim != 1 or query.shape[0] != table.dim:
        raise DataError(f"query dimension {query.shape} does not match table dim {table.dim}")
    if k < 1:
        raise DataError("k must be >= 1")
    q64 = query.astype(np.float64)
    qnorm = float(np.linalg.norm(q64))
    if qnorm == 0.0:
        raise DataError("cosine undefined for zero-norm input")
    if index.mode == "exact":
        ids: Sequence[int] = range(len(table))
    else:
        sims = index._centroids @ (q64 / qnorm)
        order = np.lexsort((np.arange(index.n_clusters), -sims))
        probe = order[: index.n_probe]
        ids = np.concatenate([index._members[c] for c in probe]) if len(probe) else []
    scored = _scan_scores(table, ids, q64, qnorm)
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    return scored[: min(k, len(scored))]


def measure_recall(
    index: KnnIndex, queries: Iterable[np.ndarray], k: int
) -> float:
    """Mean recall@k of `index` against an exact index over the same table."""
    exact = KnnIndex(table=index.table, mode="exact")
    total = 0.0
    count = 0
    for q in queries:
        truth = {i for i, _ in knn(exact, q, k)}
        got = {i for i, _ in knn(index, q, k)}
        total += len(truth & got) / len(truth)
        count += 1
    if count == 0:
        raise DataError("measure_recall needs at least one query")
    return total / count


def hash_embed(nodes: NodeTable, dim: int, seed: int) -> EmbeddingTable:
    """Deterministic pseudo-random unit vectors keyed on (text, seed).

    Stands in for a text encoder in tests and fixtures: identical texts map
    to identical vectors, distinct texts to near-orthogonal ones at useful
    dimensions.
    """
    if dim < 2:
        raise DataError("hash_embed requires dim >= 2")
    key = int(seed).to_bytes(8, "little", signed=True)
    rows = np.empty((len(nodes), dim), dtype=np.float32)
    for node_id, text in enumerate(nodes.texts()):
        digest = hashlib.blake2b(text.encode("utf-8"), key=key, digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "little"))
        vec = rng.standard_normal(dim)
        norm = np.linalg.norm(vec)
        while norm < 1e-12:  # essentially unreachable; keeps the contract total
            vec = rng.standard_normal(dim)
            norm = np.linalg.norm(vec)
        rows[node_id] = (vec / norm).astype(np.float32)
    return EmbeddingTable(vectors=rows)


def save_embeddings(path: str, nodes: NodeTable, table: EmbeddingTable) -> None:
    """Write the embedding file format: a "<n> <d>" header, then per node a
    text line followed by a vector line of 9-significant-digit decimals."""
    if len(table) != len(nodes):
        raise DataError(f"table covers {len(table)} nodes, registry has {len(nodes)}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(nodes)} {table.dim}\n")
        for node_id, text in enumerate(nodes.texts()):
            fh.write(text + "\n")
            fh.write(" ".join(_fmt(x) for x in table.vectors[node_id].tolist()) + "\n")


def load_embeddings(path: str, nodes: NodeTable, allow_new: bool = False) -> EmbeddingTable:
    """Parse an embedding file and return a table covering every node.

    Texts in the file that are not in `nodes` are an error unless `allow_new`
    is set, in which case they are registered as new (edge-less) nodes; this
    is how unseen query heads enter the id space. Nodes missing from the file
    are always an error (the first 10 missing texts are listed).
    """
    try:
        fh = open(path, "r", encoding="utf-8")  # universal newlines
    except OSError as exc:
        raise DataError(f"cannot open embedding file {path}: {exc.strerror}") from None
    with fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError(f"{path}:1: empty embedding file")
    header = lines[0].split()
    if len(header) != 2:
        raise ParseError(f"{path}:1: header must be '<n> <d>'")
    try:
        n, dim = int(header[0]), int(header[1])
    except ValueError:
        raise ParseError(f"{path}:1: header must hold two integers") from None
    if n < 0 or dim < 1:
        raise ParseError(f"{path}:1: invalid header values n={n} d={dim}")
    if len(lines) != 1 + 2 * n:
        raise ParseError(f"{path}: expected {1 + 2 * n} lines for n={n}, found {len(lines)}")
    by_text: dict[str, np.ndarray] = {}
    for rec in range(n):
        text_line = 2 + 2 * rec
        text = lines[text_line - 1]
        if text in by_text:
            raise ParseError(f"{path}:{text_line}: duplicate text {text!r}")
        values = lines[text_line].split(" ")
        if len(values) != dim:
            raise ParseError(
                f"{path}:{text_line + 1}: expected {dim} floats, got {len(values)}"
            )
        try:
            vec = np.array([float(v) for v in values], dtype=np.float32)
        except ValueError:
            raise ParseError(f"{path}:{text_line + 1}: non-numeric value") from None
        if text not in nodes:
            if not allow_new:
                raise DataError(f"{path}: embedding for unknown node text {text!r}")
            nodes.add(text)
        by_text[text] = vec
    missing = [t for t in nodes.texts() if t not in by_text]
    if missing:
        shown = ", ".join(repr(t) for t in missing[:10])
        raise DataError(
            f"{path}: embeddings missing for {len(missing)} node(s): {shown}"
        )
    rows = np.stack([by_text[t] for t in nodes.texts()])
    return EmbeddingTable(vectors=rows)
