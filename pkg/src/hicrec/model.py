"""Recommendation models: the graph-convolutional interest-composition model,
its MLP/linear ablation variants, and a matrix-factorization BPR baseline.

Per aspect, user and item PathSim features are projected through an affine +
ReLU layer, then encoded by a stack of graph-convolution layers whose weights
are shared between the user graph and the item graph of that aspect. A user's
interest in an item within an aspect is the element-wise product of their
embeddings. Interests are crossed pairwise within each aspect and across
aspects through per-aspect factor matrices, and the final score adds the
per-aspect inner products to a weighted sum of the composed interests.

All gradients are hand-derived backward passes over this fixed computation
graph and are validated by finite differences (see nnmath).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError
from .metapath import Aspect
from .nnmath import (ParamStore, derive_rng, matmul, row_dot, sigmoid,
                     softplus, spmm, xavier_init)

SPARSE_FEATURE_DENSITY = 0.6  # below this, constant feature matrices run through spmm


# ---------------------------------------------------------------------------
# losses and composition primitives
# ---------------------------------------------------------------------------

def bpr_loss(r_pos, r_neg):
    """Pairwise ranking loss -log(sigmoid(r_pos - r_neg)) in softplus form.

    Strictly positive, decreasing in the margin; safe for large negative
    margins. Works elementwise on arrays.
    """
    return softplus(-(np.asarray(r_pos, dtype=np.float64) - np.asarray(r_neg, dtype=np.float64)))


def extract_interest(u: int, i: int, embeddings) -> list[np.ndarray]:
    """Element-wise product of user and item embeddings, one vector per aspect."""
    return [emb.user[u] * emb.item[i] for emb in embeddings]


def intra_composition(e: np.ndarray, factors: np.ndarray) -> np.ndarray:
    """Pairwise crossing of elements within one interest vector.

    Evaluates sum_{m<n} (e_m v_m) * (e_n v_n) through the half-square
    identity 0.5 * ((sum_m e_m v_m)^2 - sum_m (e_m v_m)^2), elementwise over
    the factor dimension. `factors` has one row v_m per interest element.
    """
    e = np.asarray(e, dtype=np.float64)
    s = matmul(e[None, :], factors)[0]
    sq = matmul((e * e)[None, :], factors * factors)[0]
    return 0.5 * (s * s - sq)


def inter_composition(interests, factor_list) -> np.ndarray:
    """Pairwise crossing of elements across aspects' interest vectors.

    With s_p = sum_m e_{p,m} v^p_m this is sum_{p<q} s_p * s_q, evaluated as
    0.5 * ((sum_p s_p)^2 - sum_p s_p^2) elementwise.
    """
    s_list = [matmul(np.asarray(e, dtype=np.float64)[None, :], V)[0]
              for e, V in zip(interests, factor_list)]
    total = np.zeros_like(s_list[0])
    total_sq = np.zeros_like(s_list[0])
    for s in s_list:
        total += s
        total_sq += s * s
    return 0.5 * (total * total - total_sq)


@dataclass
class ScoreBreakdown:
    """All intermediates behind one predicted score."""

    linear: float
    intra: list[np.ndarray]
    inter: np.ndarray
    ic: np.ndarray
    total: float


# ---------------------------------------------------------------------------
# encoder plumbing
# ---------------------------------------------------------------------------

@dataclass
class BranchCache:
    """Forward activations one encoder branch needs for its backward pass."""

    mask0: np.ndarray
    layers: list  # per layer: (input embeddings, aggregated input, relu mask)


@dataclass
class AspectEmbeddings:
    """Final user/item embeddings of one aspect, plus backward caches."""

    user: np.ndarray
    item: np.ndarray
    user_cache: Optional[BranchCache] = None
    item_cache: Optional[BranchCache] = None


class _FeatureHandle:
    """Constant input features with a multiplication strategy fixed once.

    Sparse CSR is used when it pays off; the result is bit-identical to the
    dense kernel because canonical CSR accumulation only skips exact zeros.
    """

    def __init__(self, feat):
        if sp.issparse(feat):
            use_sparse = True
        else:
            feat = np.asarray(feat, dtype=np.float64)
            use_sparse = np.count_nonzero(feat) < SPARSE_FEATURE_DENSITY * feat.size
        if use_sparse:
            m = sp.csr_matrix(feat, dtype=np.float64)
            m.sum_duplicates()
            self.mat = m
            self.mat_t = m.transpose().tocsr()
        else:
            self.mat = feat
            self.mat_t = np.ascontiguousarray(feat.T)
        self.sparse = use_sparse
        self.in_dim = feat.shape[1]

    def mul(self, d: np.ndarray) -> np.ndarray:
        return spmm(self.mat, d) if self.sparse else matmul(self.mat, d)

    def t_mul(self, d: np.ndarray) -> np.ndarray:
        return spmm(self.mat_t, d) if self.sparse else matmul(self.mat_t, d)


def _compose_terms(E_list, factor_list, score_weights):
    """Scores for batches of interest vectors (one array per aspect, B x d).

    Returns (scores, cache) where the cache carries what the backward pass
    reuses. With `factor_list` None the score is the plain linear term.
    """
    B = E_list[0].shape[0]
    r = np.zeros(B)
    for E in E_list:
        r += E.sum(axis=1)
    if factor_list is None:
        return r, {"E_list": E_list}
    K = factor_list[0].shape[1]
    s_list = []
    S = np.zeros((B, K))
    SS = np.zeros((B, K))
    intra_sum = np.zeros((B, K))
    for E, V in zip(E_list, factor_list):
        s = matmul(E, V)
        sq = matmul(E * E, V * V)
        s_list.append(s)
        S += s
        SS += s * s
        intra_sum += 0.5 * (s * s - sq)
    ic = 0.5 * (S * S - SS) + intra_sum
    r = r + matmul(ic, score_weights[:, None]).ravel()
    return r, {"E_list": E_list, "s_list": s_list, "S": S, "ic": ic}


# ---------------------------------------------------------------------------
# main model
# ---------------------------------------------------------------------------

class HicRec:
    """Aspect-wise graph-convolutional encoder with factorized interest
    composition, trained pairwise.

    `encoder` is "gcn" (adjacency aggregation) or "mlp" (the ablation that
    drops the aggregation and runs plain fully-connected layers on the same
    features). `composition=False` keeps only the linear inner-product score,
    dropping the factor matrices and composition weights entirely.
    """

    def __init__(self, aspects: list[Aspect], dim: int = 32, factor_dim: int = 32,
                 layers: int = 2, encoder: str = "gcn", composition: bool = True,
                 share_across_aspects: bool = False, seed: int = 0):
        if not aspects:
            raise ConfigError("at least one aspect is required")
        if dim < 1 or factor_dim < 1 or layers < 1:
            raise ConfigError("dim, factor_dim and layers must all be >= 1")
        if encoder not in ("gcn", "mlp"):
            raise ConfigError(f"unknown encoder {encoder!r}")
        n_users = aspects[0].n_users
        n_items = aspects[0].n_items
        for a in aspects:
            if a.n_users != n_users or a.n_items != n_items:
                raise ConfigError(f"aspect {a.name!r} disagrees on user/item counts")

        self.aspects = list(aspects)
        self.n_users, self.n_items = n_users, n_items
        self.dim, self.factor_dim, self.layers = dim, factor_dim, layers
        self.encoder = encoder
        self.composition = composition
        self.share_across_aspects = share_across_aspects
        self.seed = seed

        self._user_feats = [_FeatureHandle(a.user_feat) for a in aspects]
        self._item_feats = [_FeatureHandle(a.item_feat) for a in aspects]
        self._user_adj = [(a.user_adj, a.user_adj.transpose().tocsr()) for a in aspects]
        self._item_adj = [(a.item_adj, a.item_adj.transpose().tocsr()) for a in aspects]

        self.params = ParamStore()
        for p, a in enumerate(aspects):
            self._add_param(f"aspect.{a.name}.user_proj.weight", (self._user_feats[p].in_dim, dim))
            self._add_param(f"aspect.{a.name}.user_proj.bias", (dim,))
            self._add_param(f"aspect.{a.name}.item_proj.weight", (self._item_feats[p].in_dim, dim))
            self._add_param(f"aspect.{a.name}.item_proj.bias", (dim,))
            if not share_across_aspects or p == 0:
                prefix = "shared" if share_across_aspects else f"aspect.{a.name}"
                for l in range(layers):
                    self._add_param(f"{prefix}.layer{l}.weight", (dim, dim))
                    self._add_param(f"{prefix}.layer{l}.bias", (dim,))
            if composition:
                self._add_param(f"aspect.{a.name}.factors", (dim, factor_dim))
        if composition:
            self._add_param("score.weights", (factor_dim,))

    def _add_param(self, name: str, shape) -> None:
        self.params.add(name, xavier_init(shape, derive_rng(self.seed, name)))

    def _layer_prefix(self, aspect_name: str) -> str:
        return "shared" if self.share_across_aspects else f"aspect.{aspect_name}"

    def _factor_list(self):
        if not self.composition:
            return None
        return [self.params[f"aspect.{a.name}.factors"].value for a in self.aspects]

    # -- forward ------------------------------------------------------------

    def _encode_branch(self, feat: _FeatureHandle, adj, proj_prefix: str,
                       layer_prefix: str, want_cache: bool):
        W0 = self.params[f"{proj_prefix}.weight"].value
        b0 = self.params[f"{proj_prefix}.bias"].value
        z = feat.mul(W0) + b0
        mask0 = z > 0
        u = np.where(mask0, z, 0.0)
        layer_cache = []
        for l in range(self.layers):
            W = self.params[f"{layer_prefix}.layer{l}.weight"].value
            b = self.params[f"{layer_prefix}.layer{l}.bias"].value
            h = spmm(adj[0], u) if self.encoder == "gcn" else u
            z = matmul(h, W) + b
            mask = z > 0
            if want_cache:
                layer_cache.append((u, h, mask))
            u = np.where(mask, z, 0.0)
        return u, (BranchCache(mask0, layer_cache) if want_cache else None)

    def encode_all(self, want_caches: bool = False) -> list[AspectEmbeddings]:
        """Run both encoder branches of every aspect on the full graph."""
        out = []
        for p, a in enumerate(self.aspects):
            lp = self._layer_prefix(a.name)
            u, uc = self._encode_branch(self._user_feats[p], self._user_adj[p],
                                        f"aspect.{a.name}.user_proj", lp, want_caches)
            i, ic = self._encode_branch(self._item_feats[p], self._item_adj[p],
                                        f"aspect.{a.name}.item_proj", lp, want_caches)
            out.append(AspectEmbeddings(u, i, uc, ic))
        return out

    def score_breakdown(self, u: int, i: int, embeddings=None) -> ScoreBreakdown:
        """Single-pair score with every intermediate exposed.

        Built from the single-instance composition primitives, so it doubles
        as an independent cross-check of the batched scoring path.
        """
        if embeddings is None:
            embeddings = self.encode_all()
        interests = extract_interest(u, i, embeddings)
        linear = 0.0
        for e in interests:
            linear += float(np.sum(e))
        if not self.composition:
            z = np.zeros(self.factor_dim)
            return ScoreBreakdown(linear, [z.copy() for _ in interests], z.copy(),
                                  z.copy(), linear)
        factors = self._factor_list()
        intra = [intra_composition(e, V) for e, V in zip(interests, factors)]
        inter = inter_composition(interests, factors)
        ic = inter + sum(intra)
        w = self.params["score.weights"].value
        total = linear + float(np.dot(w, ic))
        return ScoreBreakdown(linear, intra, inter, ic, total)

    def scores(self, users, items, embeddings=None) -> np.ndarray:
        """Scores for aligned arrays of user and item ids."""
        if embeddings is None:
            embeddings = self.encode_all()
        E_list = [emb.user[users] * emb.item[items] for emb in embeddings]
        r, _ = _compose_terms(E_list, self._factor_list(),
                              self.params["score.weights"].value if self.composition else None)
        return r

    def make_scorer(self) -> "ComposedScorer":
        """Frozen read-only scorer over the current parameters."""
        embeddings = self.encode_all()
        factors = self._factor_list()
        return ComposedScorer(
            [emb.user.copy() for emb in embeddings],
            [emb.item.copy() for emb in embeddings],
            [V.copy() for V in factors] if factors is not None else None,
            self.params["score.weights"].value.copy() if self.composition else None,
        )

    # -- backward -----------------------------------------------------------

    def _compose_backward(self, cache, dr, user_idx, item_idx, eu_list, ei_list,
                          dU, dI):
        """Backprop scores into embedding gradients and composition parameters."""
        E_list = cache["E_list"]
        if self.composition:
            w = self.params["score.weights"].value
            d_ic = dr[:, None] * w
            self.params["score.weights"].grad += matmul(cache["ic"].T, dr[:, None]).ravel()
        for p, a in enumerate(self.aspects):
            E = E_list[p]
            if self.composition:
                V = self.params[f"aspect.{a.name}.factors"].value
                s = cache["s_list"][p]
                # within-aspect crossing contributes d_ic*s, cross-aspect
                # crossing contributes d_ic*(S - s)
                ds = d_ic * s + d_ic * (cache["S"] - s)
                dsq = -0.5 * d_ic
                V2 = V * V
                dE = matmul(ds, V.T) + 2.0 * E * matmul(dsq, V2.T) + dr[:, None]
                self.params[f"aspect.{a.name}.factors"].grad += (
                    matmul(E.T, ds) + 2.0 * V * matmul((E * E).T, dsq))
            else:
                dE = np.broadcast_to(dr[:, None], E.shape)
            np.add.at(dU[p], user_idx, dE * ei_list[p])
            np.add.at(dI[p], item_idx, dE * eu_list[p])

    def _branch_backward(self, g, cache: BranchCache, feat: _FeatureHandle, adj,
                         proj_prefix: str, layer_prefix: str) -> None:
        for l in reversed(range(self.layers)):
            u_in, h, mask = cache.layers[l]
            W = self.params[f"{layer_prefix}.layer{l}.weight"]
            b = self.params[f"{layer_prefix}.layer{l}.bias"]
            dz = g * mask
            W.grad += matmul(h.T, dz)
            b.grad += dz.sum(axis=0)
            dh = matmul(dz, W.value.T)
            g = spmm(adj[1], dh) if self.encoder == "gcn" else dh
        dz0 = g * cache.mask0
        self.params[f"{proj_prefix}.weight"].grad += feat.t_mul(dz0)
        self.params[f"{proj_prefix}.bias"].grad += dz0.sum(axis=0)

    def _forward_loss(self, users, pos, neg, l2, want_grads: bool) -> float:
        users = np.asarray(users, dtype=np.int64)
        pos = np.asarray(pos, dtype=np.int64)
        neg = np.asarray(neg, dtype=np.int64)
        if users.size == 0:
            raise ValueError("empty batch")
        embeddings = self.encode_all(want_caches=want_grads)
        eu = [emb.user[users] for emb in embeddings]
        ep = [emb.item[pos] for emb in embeddings]
        en = [emb.item[neg] for emb in embeddings]
        E_pos = [a * b for a, b in zip(eu, ep)]
        E_neg = [a * b for a, b in zip(eu, en)]
        factors = self._factor_list()
        w = self.params["score.weights"].value if self.composition else None
        r_pos, cache_pos = _compose_terms(E_pos, factors, w)
        r_neg, cache_neg = _compose_terms(E_neg, factors, w)
        margin = r_pos - r_neg
        loss = float(np.mean(softplus(-margin))) + l2 * self.params.sum_squares()
        if not want_grads:
            return loss

        dmargin = -sigmoid(-margin) / users.size
        dU = [np.zeros_like(emb.user) for emb in embeddings]
        dI = [np.zeros_like(emb.item) for emb in embeddings]
        self._compose_backward(cache_pos, dmargin, users, pos, eu, ep, dU, dI)
        self._compose_backward(cache_neg, -dmargin, users, neg, eu, en, dU, dI)
        for p, a in enumerate(self.aspects):
            lp = self._layer_prefix(a.name)
            self._branch_backward(dU[p], embeddings[p].user_cache, self._user_feats[p],
                                  self._user_adj[p], f"aspect.{a.name}.user_proj", lp)
            self._branch_backward(dI[p], embeddings[p].item_cache, self._item_feats[p],
                                  self._item_adj[p], f"aspect.{a.name}.item_proj", lp)
        self.params.add_l2_gradients(l2)
        return loss

    def loss_value(self, users, pos, neg, l2: float = 0.0) -> float:
        """Batch loss (mean pairwise loss plus L2 penalty) without gradients."""
        return self._forward_loss(users, pos, neg, l2, want_grads=False)

    def loss_and_grads(self, users, pos, neg, l2: float = 0.0) -> float:
        """Batch loss; leaves gradients of every parameter in the store."""
        self.params.zero_grads()
        return self._forward_loss(users, pos, neg, l2, want_grads=True)


def total_loss(model, triples, l2: float) -> float:
    """Mean pairwise loss over a triple batch plus the global L2 penalty."""
    if len(triples) == 0:
        raise ValueError("empty triple batch")
    return model.loss_value(triples.users, triples.pos_items, triples.neg_items, l2)


class ComposedScorer:
    """Read-only scorer over frozen embeddings; safe for concurrent use."""

    def __init__(self, user_emb, item_emb, factors, score_weights):
        self.user_emb = user_emb
        self.item_emb = item_emb
        self.factors = factors
        self.score_weights = score_weights

    def score(self, user: int, item_ids) -> np.ndarray:
        item_ids = np.asarray(item_ids, dtype=np.int64)
        E_list = [u_emb[user] * i_emb[item_ids]
                  for u_emb, i_emb in zip(self.user_emb, self.item_emb)]
        r, _ = _compose_terms(E_list, self.factors, self.score_weights)
        return r


# ---------------------------------------------------------------------------
# baseline
# ---------------------------------------------------------------------------

class MfBpr:
    """Free user/item embedding tables scored by inner product; shares the
    trainer and evaluation protocol with the graph models."""

    def __init__(self, n_users: int, n_items: int, dim: int = 32, seed: int = 0):
        if n_users < 1 or n_items < 1 or dim < 1:
            raise ConfigError("n_users, n_items and dim must all be >= 1")
        self.n_users, self.n_items, self.dim = n_users, n_items, dim
        self.seed = seed
        self.params = ParamStore()
        self.params.add("user.embeddings",
                        xavier_init((n_users, dim), derive_rng(seed, "user.embeddings")))
        self.params.add("item.embeddings",
                        xavier_init((n_items, dim), derive_rng(seed, "item.embeddings")))

    def scores(self, users, items) -> np.ndarray:
        U = self.params["user.embeddings"].value
        I = self.params["item.embeddings"].value
        return row_dot(U[np.asarray(users)], I[np.asarray(items)])

    def make_scorer(self) -> "MfScorer":
        return MfScorer(self.params["user.embeddings"].value.copy(),
                        self.params["item.embeddings"].value.copy())

    def _forward_loss(self, users, pos, neg, l2, want_grads: bool) -> float:
        users = np.asarray(users, dtype=np.int64)
        pos = np.asarray(pos, dtype=np.int64)
        neg = np.asarray(neg, dtype=np.int64)
        if users.size == 0:
            raise ValueError("empty batch")
        U = self.params["user.embeddings"]
        I = self.params["item.embeddings"]
        eu, ep, en = U.value[users], I.value[pos], I.value[neg]
        margin = row_dot(eu, ep) - row_dot(eu, en)
        loss = float(np.mean(softplus(-margin))) + l2 * self.params.sum_squares()
        if not want_grads:
            return loss
        dmargin = -sigmoid(-margin) / users.size
        np.add.at(U.grad, users, dmargin[:, None] * (ep - en))
        np.add.at(I.grad, pos, dmargin[:, None] * eu)
        np.add.at(I.grad, neg, -dmargin[:, None] * eu)
        self.params.add_l2_gradients(l2)
        return loss

    def loss_value(self, users, pos, neg, l2: float = 0.0) -> float:
        return self._forward_loss(users, pos, neg, l2, want_grads=False)

    def loss_and_grads(self, users, pos, neg, l2: float = 0.0) -> float:
        self.params.zero_grads()
        return self._forward_loss(users, pos, neg, l2, want_grads=True)


class MfScorer:
    def __init__(self, user_emb: np.ndarray, item_emb: np.ndarray):
        self.user_emb = user_emb
        self.item_emb = item_emb

    def score(self, user: int, item_ids) -> np.ndarray:
        item_ids = np.asarray(item_ids, dtype=np.int64)
        e = self.user_emb[user][None, :]
        return row_dot(np.broadcast_to(e, (item_ids.size, e.shape[1])),
                       self.item_emb[item_ids])


MODEL_KINDS = ("hicrec", "hicrec-linear", "hicrec-mlp", "mf-bpr")


def build_model(kind: str, aspects=None, n_users=None, n_items=None, dim: int = 32,
                factor_dim: int = 32, layers: int = 2,
                share_across_aspects: bool = False, seed: int = 0):
    """Construct a model by kind name (hyphens and underscores both accepted)."""
    kind = kind.replace("_", "-")
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    if kind == "mf-bpr":
        if n_users is None or n_items is None:
            if not aspects:
                raise ConfigError("mf-bpr needs n_users/n_items or aspects")
            n_users, n_items = aspects[0].n_users, aspects[0].n_items
        return MfBpr(n_users, n_items, dim=dim, seed=seed)
    if not aspects:
        raise ConfigError(f"model kind {kind!r} needs prepared aspects")
    return HicRec(aspects, dim=dim, factor_dim=factor_dim, layers=layers,
                  encoder="mlp" if kind == "hicrec-mlp" else "gcn",
                  composition=kind != "hicrec-linear",
                  share_across_aspects=share_across_aspects, seed=seed)
