"""Learned rule-creation head: predict the next body relation from the
previous relation and the current depth.

Architecture: the previous relation and the step are looked up in learned
embedding tables, concatenated, passed through two affine+ReLU blocks and an
affine output layer, then normalized with a softmax over all relations. The
gradients are hand-derived and finite-difference checkable; everything runs
at float64.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, NumericalAbort, ParseError
from .kg import Ckg

logger = logging.getLogger(__name__)

_LOG_CLAMP = 1e-12

CHECKPOINT_MAGIC = "rpredict-v1"
_SECTIONS = (
    "relation_embeddings",
    "step_embeddings",
    "W1",
    "b1",
    "W2",
    "b2",
    "Wout",
    "bout",
)


@dataclass
class RelationPredictorParams:
    relation_embeddings: np.ndarray  # (E, d_r)
    step_embeddings: np.ndarray  # (D_max + 1, d_s); row k serves step k
    W1: np.ndarray  # (d_r + d_s, hidden)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (hidden, hidden)
    b2: np.ndarray  # (hidden,)
    Wout: np.ndarray  # (hidden, E)
    bout: np.ndarray  # (E,)

    @property
    def n_relations(self) -> int:
        return self.relation_embeddings.shape[0]

    @property
    def d_max(self) -> int:
        return self.step_embeddings.shape[0] - 1

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def check_finite(self) -> None:
        for name, arr in self.arrays().items():
            if not np.all(np.isfinite(arr)):
                raise NumericalAbort(f"non-finite values in parameter {name}")


def init_params(
    n_relations: int,
    d_r: int = 64,
    d_s: int = 64,
    hidden: int = 256,
    d_max: int = 3,
    seed: int = 0,
) -> RelationPredictorParams:
    """Seeded uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)]; zero biases."""
    if min(n_relations, d_r, d_s, hidden) < 1 or d_max < 1:
        raise DataError("predictor dimensions must be positive")
    rng = np.random.default_rng(seed)

    def uniform(shape: tuple[int, ...], fan_in: int) -> np.ndarray:
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    din = d_r + d_s
    return RelationPredictorParams(
        relation_embeddings=uniform((n_relations, d_r), d_r),
        step_embeddings=uniform((d_max + 1, d_s), d_s),
        W1=uniform((din, hidden), din),
        b1=uniform((hidden,), din),
        W2=uniform((hidden, hidden), hidden),
        b2=uniform((hidden,), hidden),
        Wout=uniform((hidden, n_relations), hidden),
        bout=uniform((n_relations,), hidden),
    )


def zeros_like_params(params: RelationPredictorParams) -> RelationPredictorParams:
    return RelationPredictorParams(**{k: np.zeros_like(v) for k, v in params.arrays().items()})


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exps = np.exp(shifted)
    return exps / exps.sum(axis=-1, keepdims=True)


def _check_inputs(params: RelationPredictorParams, prev_relation: int, step: int) -> None:
    if not 0 <= prev_relation < params.n_relations:
        raise DataError(f"unknown relation id: {prev_relation}")
    if not 1 <= step <= params.d_max:
        raise DataError(f"step {step} out of range 1..{params.d_max}")


def predictor_forward(
    params: RelationPredictorParams, prev_relation: int, step: int
) -> np.ndarray:
    """Probability vector over all relations for the next body atom."""
    _check_inputs(params, prev_relation, step)
    x = np.concatenate(
        [params.relation_embeddings[prev_relation], params.step_embeddings[step]]
    )
    h1 = np.maximum(0.0, x @ params.W1 + params.b1)
    h2 = np.maximum(0.0, h1 @ params.W2 + params.b2)
    logits = h2 @ params.Wout + params.bout
    return _softmax(logits)


def predictor_topm(
    params: RelationPredictorParams, prev_relation: int, step: int, m: int
) -> list[tuple[int, float]]:
    """Top-m (relation, probability), descending, ties by ascending id."""
    if m < 1:
        raise DataError("m must be >= 1")
    probs = predictor_forward(params, prev_relation, step)
    order = sorted(range(len(probs)), key=lambda r: (-probs[r], r))
    return [(r, float(probs[r])) for r in order[: min(m, len(probs))]]


def predictor_loss_and_grad(
    params: RelationPredictorParams,
    batch: Sequence[tuple[int, int, int]],
) -> tuple[float, RelationPredictorParams]:
    """Mean cross-entropy of gold next-relations and its exact gradient.

    Batch rows are (prev_relation, step, gold_next_relation). Gold
    probabilities that underflow are clamped at 1e-12 inside the log and
    reported through the module logger.
    """
    if len(batch) == 0:
        raise DataError("empty training batch")
    for prev, step, gold in batch:
        _check_inputs(params, prev, step)
        if not 0 <= gold < params.n_relations:
            raise DataError(f"unknown gold relation id: {gold}")
    b = len(batch)
    prev_ids = np.array([row[0] for row in batch])
    step_ids = np.array([row[1] for row in batch])
    gold_ids = np.array([row[2] for row in batch])

    x = np.concatenate(
        [params.relation_embeddings[prev_ids], params.step_embeddings[step_ids]], axis=1
    )
    z1 = x @ params.W1 + params.b1
    h1 = np.maximum(0.0, z1)
    z2 = h1 @ params.W2 + params.b2
    h2 = np.maximum(0.0, z2)
    logits = h2 @ params.Wout + params.bout
    probs = _softmax(logits)

    gold_probs = probs[np.arange(b), gold_ids]
    clamped = gold_probs < _LOG_CLAMP
    if clamped.any():
        logger.warning("clamped %d gold probabilities below %g", int(clamped.sum()), _LOG_CLAMP)
    loss = float(-np.log(np.maximum(gold_probs, _LOG_CLAMP)).mean())

    dlogits = probs.copy()
    dlogits[np.arange(b), gold_ids] -= 1.0
    dlogits /= b
    d_wout = h2.T @ dlogits
    d_bout = dlogits.sum(axis=0)
    dh2 = dlogits @ params.Wout.T
    dz2 = dh2 * (z2 > 0.0)
    d_w2 = h1.T @ dz2
    d_b2 = dz2.sum(axis=0)
    dh1 = dz2 @ params.W2.T
    dz1 = dh1 * (z1 > 0.0)
    d_w1 = x.T @ dz1
    d_b1 = dz1.sum(axis=0)
    dx = dz1 @ params.W1.T
    d_r = params.relation_embeddings.shape[1]
    d_rel = np.zeros_like(params.relation_embeddings)
    np.add.at(d_rel, prev_ids, dx[:, :d_r])
    d_step = np.zeros_like(params.step_embeddings)
    np.add.at(d_step, step_ids, dx[:, d_r:])

    grads = RelationPredictorParams(
        relation_embeddings=d_rel,
        step_embeddings=d_step,
        W1=d_w1,
        b1=d_b1,
        W2=d_w2,
        b2=d_b2,
        Wout=d_wout,
        bout=d_bout,
    )
    return loss, grads


def sgd_step(
    params: RelationPredictorParams,
    grads: RelationPredictorParams,
    learning_rate: float,
) -> RelationPredictorParams:
    """params - learning_rate * grads, as new arrays. Aborts on non-finite grads."""
    if learning_rate <= 0:
        raise DataError("learning_rate must be positive")
    updated = {}
    for name, arr in params.arrays().items():
        g = getattr(grads, name)
        if arr.shape != g.shape:
            raise DataError(f"gradient shape mismatch for {name}")
        if not np.all(np.isfinite(g)):
            raise NumericalAbort(f"non-finite gradient for {name}")
        updated[name] = arr - learning_rate * g
    return RelationPredictorParams(**updated)


def extract_training_sequences(
    g: Ckg, proofs: Iterable
) -> list[tuple[int, int, int]]:
    """Teacher-forcing rows from ground proofs.

    Each proof contributes (r_q, 1, r_0) and (r_{i-1}, i+1, r_i) for i >= 1,
    where (r_q, r_0, ..., r_K) is its relation sequence. Proof objects must
    expose relation_sequence(); plain sequences of relation ids also work.
    """
    batch: list[tuple[int, int, int]] = []
    n_rel = len(g.relations)
    for proof in proofs:
        seq = proof.relation_sequence() if hasattr(proof, "relation_sequence") else tuple(proof)
        if len(seq) < 2:
            continue
        for r in seq:
            if not 0 <= r < n_rel:
                raise DataError(f"relation id {r} outside the graph's relation table")
        for i in range(1, len(seq)):
            batch.append((seq[i - 1], i, seq[i]))
    return batch


def save_checkpoint(path: str, params: RelationPredictorParams) -> None:
    """Versioned text checkpoint; values rendered with 9 significant digits."""
    e = params.n_relations
    d_r = params.relation_embeddings.shape[1]
    d_s = params.step_embeddings.shape[1]
    hidden = params.W1.shape[1]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{CHECKPOINT_MAGIC} {e} {d_r} {d_s} {hidden} {params.d_max}\n")
        for name in _SECTIONS:
            arr = np.atleast_2d(getattr(params, name))
            fh.write(name + "\n")
            for row in arr:
                fh.write(" ".join("%.9g" % v for v in row.tolist()) + "\n")


def load_checkpoint(path: str) -> RelationPredictorParams:
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open checkpoint {path}: {exc.strerror}") from None
    with fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError(f"{path}:1: empty checkpoint")
    header = lines[0].split()
    if len(header) != 6 or header[0] != CHECKPOINT_MAGIC:
        raise ParseError(f"{path}:1: expected header '{CHECKPOINT_MAGIC} <E> <d_r> <d_s> <hidden> <D_max>'")
    try:
        e, d_r, d_s, hidden, d_max = (int(v) for v in header[1:])
    except ValueError:
        raise ParseError(f"{path}:1: non-integer header field") from None
    shapes = {
        "relation_embeddings": (e, d_r),
        "step_embeddings": (d_max + 1, d_s),
        "W1": (d_r + d_s, hidden),
        "b1": (1, hidden),
        "W2": (hidden, hidden),
        "b2": (1, hidden),
        "Wout": (hidden, e),
        "bout": (1, e),
    }
    pos = 1
    arrays: dict[str, np.ndarray] = {}
    for name in _SECTIONS:
        rows, cols = shapes[name]
        if pos >= len(lines) or lines[pos] != name:
            raise ParseError(f"{path}:{pos + 1}: expected section {name!r}")
        pos += 1
        if pos + rows > len(lines):
            raise ParseError(f"{path}: truncated section {name!r}")
        block = []
        for r in range(rows):
            values = lines[pos + r].split(" ")
            if len(values) != cols:
                raise ParseError(
                    f"{path}:{pos + r + 1}: expected {cols} values, got {len(values)}"
                )
            try:
                block.append([float(v) for v in values])
            except ValueError:
                raise ParseError(f"{path}:{pos + r + 1}: non-numeric value") from None
        pos += rows
        arr = np.array(block, dtype=np.float64)
        arrays[name] = arr[0] if name in ("b1", "b2", "bout") else arr
    if pos != len(lines):
        raise ParseError(f"{path}:{pos + 1}: trailing content after last section")
    return RelationPredictorParams(**arrays)
