"""Heterogeneous graph container: edge-list loading, leave-one-out splitting,
and BPR negative sampling.

File format (UTF-8, tab-separated, `#` comment lines skipped):

    src_type <TAB> src_id <TAB> dst_type <TAB> dst_id [<TAB> weight]

Interaction files use the same format restricted to user->item rows, with the
optional fifth column read as an integer timestamp instead of a weight.
Duplicate edges sum their weights. Rows written in the reverse of a declared
relation direction are folded in through the transpose.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Optional

import numpy as np
import scipy.sparse as sp

from .errors import DataError, IdRangeError, ParseError, SchemaError


@dataclass(frozen=True)
class NodeType:
    """A node type with a dense id space [0, count)."""

    symbol: str
    count: int


@dataclass(frozen=True)
class GraphSchema:
    """Declares node types, relation directions, and the user/item designation.

    `counts` optionally pins the id-space size of a type; otherwise counts are
    inferred as max(observed id) + 1.
    """

    node_types: tuple[str, ...]
    relations: tuple[tuple[str, str], ...]
    user_type: str
    item_type: str
    counts: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "node_types", tuple(self.node_types))
        object.__setattr__(self, "relations", tuple((a, b) for a, b in self.relations))
        if len(set(self.node_types)) != len(self.node_types):
            raise SchemaError("duplicate node type symbols in schema")
        if not all(t.isalnum() for t in self.node_types):
            raise SchemaError("node type symbols must be alphanumeric tokens")
        for t in (self.user_type, self.item_type):
            if t not in self.node_types:
                raise SchemaError(f"designated type {t!r} is not a declared node type")
        if self.user_type == self.item_type:
            raise SchemaError("user type and item type must differ")
        seen = set()
        for a, b in self.relations:
            if a not in self.node_types or b not in self.node_types:
                raise SchemaError(f"relation ({a}, {b}) references an undeclared type")
            if (a, b) in seen or (b, a) in seen:
                raise SchemaError(f"relation between {a} and {b} declared twice")
            seen.add((a, b))
        if len(self.node_types) + len(self.relations) <= 2:
            raise SchemaError("a heterogeneous schema needs |types| + |relations| > 2")
        for sym, n in self.counts.items():
            if sym not in self.node_types:
                raise SchemaError(f"pinned count for undeclared type {sym!r}")
            if n < 1:
                raise SchemaError(f"pinned count for {sym!r} must be >= 1")

    def has_relation(self, a: str, b: str) -> bool:
        return (a, b) in self.relations or (b, a) in self.relations


class Interaction(NamedTuple):
    user: int
    item: int
    timestamp: Optional[int]


class HinGraph:
    """Immutable typed graph with one sparse adjacency per declared relation."""

    def __init__(self, schema: GraphSchema, node_types: dict[str, NodeType],
                 relations: dict[tuple[str, str], sp.csr_matrix],
                 interactions: list[Interaction]):
        self.schema = schema
        self.node_types = node_types
        self.relations = relations
        self.interactions = interactions
        for (a, b), m in relations.items():
            expect = (node_types[a].count, node_types[b].count)
            if m.shape != expect:
                raise DataError(f"relation ({a},{b}) adjacency {m.shape} does not match "
                                f"declared counts {expect}")
            if m.nnz and m.data.min() < 0:
                raise DataError(f"relation ({a},{b}) has negative edge weights")

    @property
    def user_type(self) -> str:
        return self.schema.user_type

    @property
    def item_type(self) -> str:
        return self.schema.item_type

    @property
    def n_users(self) -> int:
        return self.node_types[self.user_type].count

    @property
    def n_items(self) -> int:
        return self.node_types[self.item_type].count

    def node_count(self, symbol: str) -> int:
        return self.node_types[symbol].count

    def relation_matrix(self, a: str, b: str) -> sp.csr_matrix:
        """Adjacency from type `a` to type `b`, transposing a declared (b, a)."""
        if (a, b) in self.relations:
            return self.relations[(a, b)]
        if (b, a) in self.relations:
            return self.relations[(b, a)].transpose().tocsr()
        raise SchemaError(f"no declared relation between {a!r} and {b!r}")

    def interaction_matrix(self) -> sp.csr_matrix:
        return self.relation_matrix(self.user_type, self.item_type)


def _parse_rows(path, schema: GraphSchema, interaction_times: bool):
    """Read one edge-list file into per-relation edge buffers.

    Returns (edges, max_ids, interactions) where edges maps a declared
    relation to (src_ids, dst_ids, weights) lists.
    """
    edges: dict[tuple[str, str], tuple[list, list, list]] = {}
    max_ids: dict[str, int] = {}
    interactions: list[Interaction] = []
    ui = (schema.user_type, schema.item_type)

    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (4, 5):
                raise ParseError(f"{path}:{lineno}: expected 4 or 5 tab-separated fields, "
                                 f"got {len(parts)}")
            src_t, src_s, dst_t, dst_s = parts[:4]
            for t in (src_t, dst_t):
                if t not in schema.node_types:
                    raise SchemaError(f"{path}:{lineno}: unknown node type {t!r}")
            try:
                src_id, dst_id = int(src_s), int(dst_s)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: node ids must be integers") from None
            if src_id < 0 or dst_id < 0:
                raise ParseError(f"{path}:{lineno}: node ids must be nonnegative")

            timestamp = None
            weight = 1.0
            if len(parts) == 5:
                if interaction_times:
                    try:
                        timestamp = int(parts[4])
                    except ValueError:
                        raise ParseError(f"{path}:{lineno}: timestamp must be an integer") from None
                else:
                    try:
                        weight = float(parts[4])
                    except ValueError:
                        raise ParseError(f"{path}:{lineno}: weight must be a number") from None
                    if weight < 0:
                        raise ParseError(f"{path}:{lineno}: weight must be nonnegative")

            if (src_t, dst_t) in schema.relations:
                key, s, d = (src_t, dst_t), src_id, dst_id
            elif (dst_t, src_t) in schema.relations:
                key, s, d = (dst_t, src_t), dst_id, src_id
            else:
                raise SchemaError(f"{path}:{lineno}: no declared relation between "
                                  f"{src_t!r} and {dst_t!r}")

            if interaction_times and (src_t, dst_t) != ui and (dst_t, src_t) != ui:
                raise SchemaError(f"{path}:{lineno}: interaction files may only contain "
                                  f"user-item rows")

            buf = edges.setdefault(key, ([], [], []))
            buf[0].append(s)
            buf[1].append(d)
            buf[2].append(weight)
            max_ids[src_t] = max(max_ids.get(src_t, -1), src_id)
            max_ids[dst_t] = max(max_ids.get(dst_t, -1), dst_id)

            if key == ui:
                u, i = (s, d)
                interactions.append(Interaction(u, i, timestamp))

    return edges, max_ids, interactions


def _assemble(schema: GraphSchema, edges, max_ids, interactions) -> HinGraph:
    node_types = {}
    for sym in schema.node_types:
        observed = max_ids.get(sym, -1) + 1
        pinned = schema.counts.get(sym)
        if pinned is not None:
            if observed > pinned:
                raise IdRangeError(f"type {sym!r}: observed id {observed - 1} exceeds "
                                   f"pinned count {pinned}")
            count = pinned
        else:
            count = observed
        node_types[sym] = NodeType(sym, count)

    relations = {}
    for (a, b) in schema.relations:
        shape = (node_types[a].count, node_types[b].count)
        if (a, b) in edges:
            src, dst, w = edges[(a, b)]
            m = sp.coo_matrix((np.asarray(w, dtype=np.float64),
                               (np.asarray(src), np.asarray(dst))), shape=shape).tocsr()
            m.sum_duplicates()
        else:
            m = sp.csr_matrix(shape, dtype=np.float64)
        relations[(a, b)] = m
    return HinGraph(schema, node_types, relations, interactions)


def load_edge_list(path, schema: GraphSchema, interaction_times: bool = False) -> HinGraph:
    """Load a single edge-list file into a graph.

    Duplicate edges sum their weights; node counts are inferred from the
    largest observed id unless the schema pins larger counts.
    """
    edges, max_ids, interactions = _parse_rows(path, schema, interaction_times)
    return _assemble(schema, edges, max_ids, interactions)


def load_dataset(schema: GraphSchema, interactions_path, graph_path=None) -> HinGraph:
    """Load a dataset from an interaction file plus an optional auxiliary
    edge file, merged into one graph.

    The interaction file's user->item rows define the interaction sequence
    (train/test ordering); its optional fifth column is a timestamp.
    """
    edges, max_ids, interactions = _parse_rows(interactions_path, schema,
                                               interaction_times=True)
    if graph_path is not None:
        g_edges, g_max, g_inter = _parse_rows(graph_path, schema, interaction_times=False)
        for key, (s, d, w) in g_edges.items():
            buf = edges.setdefault(key, ([], [], []))
            buf[0].extend(s)
            buf[1].extend(d)
            buf[2].extend(w)
        for sym, m in g_max.items():
            max_ids[sym] = max(max_ids.get(sym, -1), m)
        interactions.extend(g_inter)
    if not interactions:
        raise DataError(f"{interactions_path}: no user-item interactions found")
    return _assemble(schema, edges, max_ids, interactions)


# ---------------------------------------------------------------------------
# train/test split
# ---------------------------------------------------------------------------

@dataclass
class InteractionSplit:
    """Leave-one-out split: per eligible user the final interaction is the
    test positive, every other distinct item is a training positive."""

    n_users: int
    n_items: int
    train_users: np.ndarray
    train_items: np.ndarray
    test_pairs: list[tuple[int, int]]
    per_user_train: list[list[int]]
    skipped_users: int = 0
    used_timestamps: bool = False

    @property
    def train_pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.train_users.tolist(), self.train_items.tolist()))

    @cached_property
    def per_user_train_sets(self) -> list[set]:
        return [set(items) for items in self.per_user_train]

    @cached_property
    def test_item_by_user(self) -> dict[int, int]:
        return dict(self.test_pairs)

    @cached_property
    def _train_mask(self) -> np.ndarray:
        mask = np.zeros((self.n_users, self.n_items), dtype=bool)
        mask[self.train_users, self.train_items] = True
        return mask

    def train_count(self, user: int) -> int:
        return len(self.per_user_train[user])


def leave_one_out_split(graph: HinGraph, order_key: str = "auto") -> InteractionSplit:
    """Split interactions per user: last one (by timestamp when available,
    else file order) to test, the rest to train.

    Users with a single distinct item stay train-only; repeated (user, item)
    pairs collapse to one positive. `order_key` is "auto", "timestamp" or
    "file".
    """
    if order_key not in ("auto", "timestamp", "file"):
        raise ValueError(f"unknown order_key {order_key!r}")
    events = graph.interactions
    if not events:
        raise DataError("graph holds no user-item interactions to split")

    have_ts = all(e.timestamp is not None for e in events)
    if order_key == "timestamp" and not have_ts:
        raise DataError("order_key='timestamp' but some interactions lack timestamps")
    use_ts = have_ts if order_key == "auto" else (order_key == "timestamp")
    if use_ts:
        events = sorted(events, key=lambda e: e.timestamp)  # stable: ties keep file order

    n_users, n_items = graph.n_users, graph.n_items
    per_user_events: list[list[int]] = [[] for _ in range(n_users)]
    for e in events:
        per_user_events[e.user].append(e.item)

    train_u, train_i = [], []
    test_pairs = []
    per_user_train: list[list[int]] = [[] for _ in range(n_users)]
    skipped = 0
    for u in range(n_users):
        seq = per_user_events[u]
        if not seq:
            skipped += 1
            continue
        distinct = list(dict.fromkeys(seq))
        test_item = seq[-1]
        train_items = [i for i in distinct if i != test_item]
        if train_items:
            test_pairs.append((u, test_item))
        else:
            train_items = distinct  # single-item user: train-only
        per_user_train[u] = train_items
        for i in train_items:
            train_u.append(u)
            train_i.append(i)

    return InteractionSplit(
        n_users=n_users,
        n_items=n_items,
        train_users=np.asarray(train_u, dtype=np.int64),
        train_items=np.asarray(train_i, dtype=np.int64),
        test_pairs=test_pairs,
        per_user_train=per_user_train,
        skipped_users=skipped,
        used_timestamps=use_ts,
    )


# ---------------------------------------------------------------------------
# BPR triples
# ---------------------------------------------------------------------------

class BprTriple(NamedTuple):
    user: int
    pos_item: int
    neg_item: int


@dataclass
class TripleBatch:
    """Column-oriented batch of (user, positive, negative) triples."""

    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray

    def __len__(self) -> int:
        return self.users.shape[0]

    def __iter__(self):
        for u, p, n in zip(self.users, self.pos_items, self.neg_items):
            yield BprTriple(int(u), int(p), int(n))

    def take(self, idx: np.ndarray) -> "TripleBatch":
        return TripleBatch(self.users[idx], self.pos_items[idx], self.neg_items[idx])


def sample_bpr_triples(split: InteractionSplit, rng_seed,
                       exclude: Optional[list[set]] = None) -> TripleBatch:
    """One triple per train pair; negatives drawn uniformly (by rejection)
    from the items outside the user's excluded set.

    `exclude` defaults to the per-user train sets. Deterministic for a given
    seed; pass a Generator to continue an existing stream.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    exclude_sets = exclude if exclude is not None else split.per_user_train_sets
    n_items = split.n_items

    for u in np.unique(split.train_users):
        if len(exclude_sets[u]) >= n_items:
            raise DataError(f"user {u} interacted with every item; "
                            f"negative sampling is unsatisfiable")

    if exclude is None:
        mask = split._train_mask
    else:
        mask = np.zeros((split.n_users, n_items), dtype=bool)
        for u, items in enumerate(exclude_sets):
            if items:
                mask[u, list(items)] = True

    users = split.train_users.copy()
    pos = split.train_items.copy()
    neg = rng.integers(0, n_items, size=users.shape[0])
    bad = mask[users, neg]
    while np.any(bad):
        idx = np.flatnonzero(bad)
        neg[idx] = rng.integers(0, n_items, size=idx.size)
        bad[idx] = mask[users[idx], neg[idx]]
    return TripleBatch(users, pos, neg.astype(np.int64))
