"""Meta-paths over the typed graph: parsing, commuting matrices by chained
sparse multiplication, PathSim feature matrices, and adjacency normalization.

An aspect pairs one user meta-path with one item meta-path about the same
topic (e.g. users linked through items of a shared brand, items linked
through that brand). Both paths must be palindromic so their commuting
matrices are square and symmetric.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import SchemaError
from .hin import GraphSchema, HinGraph

DENSE_FEATURE_LIMIT = 50_000


@dataclass(frozen=True)
class MetaPath:
    """A validated sequence of node types, each consecutive pair backed by a
    declared relation (or its transpose)."""

    types: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "types", tuple(self.types))
        if len(self.types) < 2:
            raise ValueError("a meta-path needs at least two node types")

    def __str__(self) -> str:
        if any(len(t) > 1 for t in self.types):
            return ".".join(self.types)
        return "".join(self.types)

    @property
    def is_palindrome(self) -> bool:
        return self.types == self.types[::-1]

    @property
    def source(self) -> str:
        return self.types[0]

    @property
    def target(self) -> str:
        return self.types[-1]


def parse_metapath(text: str, schema) -> MetaPath:
    """Parse a meta-path string such as "UIBIU" against a schema or graph.

    Multi-letter type tokens are dot-separated ("U.I.Ca.I.U"). Every
    consecutive pair must correspond to a declared relation in either
    direction.
    """
    if isinstance(schema, HinGraph):
        schema = schema.schema
    if not isinstance(schema, GraphSchema):
        raise TypeError("parse_metapath needs a GraphSchema or HinGraph")
    text = text.strip()
    if not text:
        raise SchemaError("empty meta-path")
    tokens = text.split(".") if "." in text else list(text)
    for tok in tokens:
        if tok not in schema.node_types:
            raise SchemaError(f"meta-path {text!r}: unknown node type {tok!r}")
    if len(tokens) < 2:
        raise SchemaError(f"meta-path {text!r} needs at least two node types")
    for a, b in zip(tokens, tokens[1:]):
        if not schema.has_relation(a, b):
            raise SchemaError(f"meta-path {text!r}: no declared relation between "
                              f"{a!r} and {b!r}")
    return MetaPath(tuple(tokens))


@dataclass
class CommutingMatrix:
    """Chained relation product along a meta-path; entry (i, j) is the
    weight-sum of path instances from node i to node j."""

    matrix: sp.csr_matrix
    path: MetaPath


def commuting_matrix(path: MetaPath, graph: HinGraph) -> CommutingMatrix:
    """Left-to-right chained sparse product of the relation adjacencies along
    the path, transposed where the path traverses a relation backwards."""
    prod = None
    for a, b in zip(path.types, path.types[1:]):
        m = graph.relation_matrix(a, b)
        prod = m if prod is None else (prod @ m)
    prod = prod.tocsr()
    prod.sum_duplicates()
    prod.sort_indices()
    return CommutingMatrix(prod, path)


def _as_matrix(c):
    return c.matrix if isinstance(c, CommutingMatrix) else c


def pathsim(c, dense_limit: int = DENSE_FEATURE_LIMIT):
    """Meta-path similarity s(i, j) = 2 C_ij / (C_ii + C_jj) with s = 0 when
    the denominator is 0 (isolated nodes carry no evidence).

    Input must be square (a palindromic path). Returns a dense array up to
    `dense_limit` nodes, sparse CSR beyond that.
    """
    m = _as_matrix(c)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"pathsim requires a square commuting matrix, got {m.shape}")
    n = m.shape[0]
    diag = np.asarray(m.diagonal(), dtype=np.float64).ravel()

    if sp.issparse(m) and n > dense_limit:
        coo = m.tocoo()
        denom = diag[coo.row] + diag[coo.col]
        with np.errstate(divide="ignore", invalid="ignore"):
            data = np.where(denom > 0, 2.0 * coo.data / denom, 0.0)
        out = sp.csr_matrix((data, (coo.row, coo.col)), shape=m.shape)
        out.sum_duplicates()
        return out

    dense = m.toarray() if sp.issparse(m) else np.asarray(m, dtype=np.float64)
    denom = diag[:, None] + diag[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(denom > 0, 2.0 * dense / denom, 0.0)


def normalize_adjacency(c, mode: str = "sym") -> sp.csr_matrix:
    """Symmetric normalization with self-loops: D^-1/2 (C + I) D^-1/2 where D
    holds the row sums of C + I. All-zero rows keep a lone unit self-loop.

    `mode="none"` returns the raw matrix unchanged (no self-loops).
    """
    m = _as_matrix(c)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"normalize_adjacency requires a square matrix, got {m.shape}")
    m = sp.csr_matrix(m, dtype=np.float64)
    if mode == "none":
        m.sum_duplicates()
        return m
    if mode != "sym":
        raise ValueError(f"unknown normalization mode {mode!r}")
    n = m.shape[0]
    a = (m + sp.identity(n, format="csr", dtype=np.float64)).tocoo()
    deg = np.zeros(n)
    np.add.at(deg, a.row, a.data)
    dinv = 1.0 / np.sqrt(deg)
    # dinv[i] * dinv[j] first: the commutative product keeps the result
    # exactly symmetric for symmetric input.
    data = a.data * (dinv[a.row] * dinv[a.col])
    out = sp.csr_matrix((data, (a.row, a.col)), shape=a.shape)
    out.sum_duplicates()
    return out


@dataclass
class Aspect:
    """One named pair of user/item meta-paths with the derived artifacts the
    encoder consumes: normalized adjacencies and PathSim feature matrices."""

    name: str
    user_path: MetaPath
    item_path: MetaPath
    user_adj: sp.csr_matrix
    item_adj: sp.csr_matrix
    user_feat: np.ndarray
    item_feat: np.ndarray

    @property
    def n_users(self) -> int:
        return self.user_adj.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_adj.shape[0]


def build_aspect(name: str, user_path, item_path, graph: HinGraph,
                 normalize: str = "sym",
                 dense_limit: int = DENSE_FEATURE_LIMIT) -> Aspect:
    """Compute both commuting matrices, PathSim features, and normalized
    adjacencies for one aspect.

    Accepts MetaPath objects or strings. The user path must start and end at
    the user type, the item path at the item type, and both must be
    palindromic.
    """
    if isinstance(user_path, str):
        user_path = parse_metapath(user_path, graph)
    if isinstance(item_path, str):
        item_path = parse_metapath(item_path, graph)
    if user_path.source != graph.user_type or user_path.target != graph.user_type:
        raise SchemaError(f"aspect {name!r}: user meta-path {user_path} must start "
                          f"and end at {graph.user_type!r}")
    if item_path.source != graph.item_type or item_path.target != graph.item_type:
        raise SchemaError(f"aspect {name!r}: item meta-path {item_path} must start "
                          f"and end at {graph.item_type!r}")
    for p in (user_path, item_path):
        if not p.is_palindrome:
            raise SchemaError(f"aspect {name!r}: meta-path {p} must read the same "
                              f"reversed so its commuting matrix is symmetric")

    cm_user = commuting_matrix(user_path, graph)
    cm_item = commuting_matrix(item_path, graph)
    return Aspect(
        name=name,
        user_path=user_path,
        item_path=item_path,
        user_adj=normalize_adjacency(cm_user, mode=normalize),
        item_adj=normalize_adjacency(cm_item, mode=normalize),
        user_feat=pathsim(cm_user, dense_limit=dense_limit),
        item_feat=pathsim(cm_item, dense_limit=dense_limit),
    )
