"""Triple store for commonsense knowledge graphs.

Nodes are free-form phrases mapped to dense integer ids; relations get dense
ids with forward relations first and, after augmentation, their inverses in
matching order. The graph itself is immutable once built; the node/relation
registries may be shared across loads so that train/dev/test files live in a
single id space.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from .errors import DataError, ParseError


class NodeTable:
    """Bijective mapping between node surface strings and dense ids."""

    def __init__(self) -> None:
        self._texts: list[str] = []
        self._ids: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self._texts)

    def __contains__(self, text: str) -> bool:
        return text in self._ids

    def add(self, text: str) -> int:
        """Return the id for `text`, registering it if new."""
        existing = self._ids.get(text)
        if existing is not None:
            return existing
        if not text:
            raise DataError("node text must be non-empty")
        if "\t" in text or "\n" in text or "\r" in text:
            raise DataError(f"node text contains tab/newline: {text!r}")
        node_id = len(self._texts)
        self._texts.append(text)
        self._ids[text] = node_id
        return node_id

    def id_of(self, text: str) -> int:
        try:
            return self._ids[text]
        except KeyError:
            raise DataError(f"unknown node text: {text!r}") from None

    def text_of(self, node_id: int) -> str:
        if not 0 <= node_id < len(self._texts):
            raise DataError(f"unknown node id: {node_id}")
        return self._texts[node_id]

    def texts(self) -> list[str]:
        return list(self._texts)


class RelationTable:
    """Relation names with optional inverse pairing (an involution)."""

    def __init__(self) -> None:
        self._names: list[str] = []
        self._ids: dict[str, int] = {}
        self._inverse_of: list[Optional[int]] = []

    def __len__(self) -> int:
        return len(self._names)

    def __contains__(self, name: str) -> bool:
        return name in self._ids

    def add(self, name: str) -> int:
        existing = self._ids.get(name)
        if existing is not None:
            return existing
        if not name or "\t" in name or "\n" in name:
            raise DataError(f"bad relation name: {name!r}")
        rel_id = len(self._names)
        self._names.append(name)
        self._ids[name] = rel_id
        self._inverse_of.append(None)
        return rel_id

    def id_of(self, name: str) -> int:
        try:
            return self._ids[name]
        except KeyError:
            raise DataError(f"unknown relation name: {name!r}") from None

    def name_of(self, rel_id: int) -> str:
        self._check(rel_id)
        return self._names[rel_id]

    def is_inverse(self, rel_id: int) -> bool:
        self._check(rel_id)
        return self._inverse_of[rel_id] is not None and self._inverse_of[rel_id] < rel_id

    def inverse_of(self, rel_id: int) -> int:
        self._check(rel_id)
        inv = self._inverse_of[rel_id]
        if inv is None:
            raise DataError(f"relation {self._names[rel_id]!r} has no inverse (graph not augmented)")
        return inv

    def display_name(self, rel_id: int) -> str:
        """Human-readable name; inverses rendered with a ^-1 suffix."""
        if self.is_inverse(rel_id):
            return self._names[self._inverse_of[rel_id]] + "^-1"
        return self._names[rel_id]

    def names(self) -> list[str]:
        return list(self._names)

    def display_names(self) -> list[str]:
        return [self.display_name(i) for i in range(len(self._names))]

    def resolve(self, display: str) -> int:
        """Inverse of display_name: accepts forward names and "<name>^-1"."""
        if display in self._ids and not self.is_inverse(self._ids[display]):
            return self._ids[display]
        if display.endswith("^-1"):
            base = display[:-3]
            if base in self._ids:
                fwd = self._ids[base]
                return self.inverse_of(fwd)
        raise DataError(
            f"unknown relation name: {display!r}; valid: "
            + ", ".join(self.display_names())
        )

    def _check(self, rel_id: int) -> None:
        if not 0 <= rel_id < len(self._names):
            raise DataError(f"unknown relation id: {rel_id}")

    def _pair_inverses(self) -> None:
        """Append one inverse per forward relation; ids i and i+n are paired."""
        n = len(self._names)
        for i in range(n):
            if self._inverse_of[i] is not None:
                raise DataError("already augmented")
        for i in range(n):
            inv_name = self._names[i] + "^-1"
            if inv_name in self._ids:
                raise DataError(f"relation name collides with inverse: {inv_name!r}")
        for i in range(n):
            inv_id = self.add(self._names[i] + "^-1")
            self._inverse_of[i] = inv_id
            self._inverse_of[inv_id] = i


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


@dataclass
class Ckg:
    """An immutable triple set with a head index for candidate retrieval."""

    nodes: NodeTable
    relations: RelationTable
    triples: list[Triple]
    head_index: dict[int, list[int]] = field(default_factory=dict)
    augmented: bool = False
    duplicate_count: int = 0

    def __post_init__(self) -> None:
        if not self.head_index:
            self.head_index = _build_head_index(self.triples)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_relations(self) -> int:
        return len(self.relations)


def _build_head_index(triples: list[Triple]) -> dict[int, list[int]]:
    # indices per head, sorted by (relation, tail) for the retrieval contract
    index: dict[int, list[int]] = {}
    for i, t in enumerate(triples):
        index.setdefault(t.head, []).append(i)
    for head, idxs in index.items():
        idxs.sort(key=lambda i: (triples[i].relation, triples[i].tail))
    return index


def load_triples(
    path: str,
    node_registry: Optional[NodeTable] = None,
    relation_registry: Optional[RelationTable] = None,
) -> Ckg:
    """Load a tab-separated triple file into a Ckg.

    Each non-empty line must hold exactly head<TAB>relation<TAB>tail. Ids are
    assigned in first-appearance order; duplicates are dropped and counted on
    the returned graph. Passing existing registries extends them in place so
    several files can share one id space.
    """
    nodes = node_registry if node_registry is not None else NodeTable()
    relations = relation_registry if relation_registry is not None else RelationTable()
    triples: list[Triple] = []
    seen: set[Triple] = set()
    duplicates = 0
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot open triple file {path}: {exc.strerror}") from None
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}"
                )
            if any(f == "" for f in fields):
                raise ParseError(f"{path}:{lineno}: empty field in triple")
            head_text, rel_name, tail_text = fields
            triple = Triple(nodes.add(head_text), relations.add(rel_name), nodes.add(tail_text))
            if triple in seen:
                duplicates += 1
                continue
            seen.add(triple)
            triples.append(triple)
    return Ckg(nodes=nodes, relations=relations, triples=triples, duplicate_count=duplicates)


def add_inverse_relations(g: Ckg) -> Ckg:
    """Return a new graph where every r(h,t) is mirrored by r^-1(t,h).

    Relation ids 0..n-1 stay forward; ids n..2n-1 are their inverses in
    matching order. Raises if `g` was already augmented.
    """
    if g.augmented:
        raise DataError("already augmented")
    n_forward = len(g.relations)
    g.relations._pair_inverses()
    inverse_triples = [Triple(t.tail, t.relation + n_forward, t.head) for t in g.triples]
    all_triples = list(g.triples) + inverse_triples
    return Ckg(
        nodes=g.nodes,
        relations=g.relations,
        triples=all_triples,
        augmented=True,
        duplicate_count=g.duplicate_count,
    )


def triples_with_head(g: Ckg, v: int) -> list[Triple]:
    """All triples whose head is `v`, ascending by (relation, tail)."""
    if not 0 <= v < len(g.nodes):
        raise DataError(f"unknown node id: {v}")
    return [g.triples[i] for i in g.head_index.get(v, [])]


def triple_indices_with_head(g: Ckg, v: int) -> list[int]:
    """Triple indices for head `v` (same order as triples_with_head)."""
    if not 0 <= v < len(g.nodes):
        raise DataError(f"unknown node id: {v}")
    return list(g.head_index.get(v, []))


def forward_triples(g: Ckg) -> list[Triple]:
    """The non-inverse triples of `g` (all of them if never augmented)."""
    if not g.augmented:
        return list(g.triples)
    return [t for t in g.triples if not g.relations.is_inverse(t.relation)]


def render_triple(g: Ckg, t: Triple) -> str:
    return (
        f"{g.relations.display_name(t.relation)}"
        f"({g.nodes.text_of(t.head)}, {g.nodes.text_of(t.tail)})"
    )
