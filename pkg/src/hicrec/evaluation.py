"""Leave-one-out ranking evaluation: 1-positive-vs-99-negatives candidate
sampling, deterministic ranking, HR@N / NDCG@N with cold-start bucketing, and
retrain sweeps over aspect subsets or embedding dimension.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .hin import InteractionSplit


@dataclass(frozen=True)
class EvalProtocol:
    """Candidate protocol: the test positive is ranked against `negatives`
    sampled items the user never interacted with."""

    negatives: int = 99
    top_n: tuple[int, ...] = (5, 10, 15, 20)
    seed: int = 0

    def __post_init__(self):
        if self.negatives < 1:
            raise ConfigError("negatives must be >= 1")
        if not self.top_n or any(n < 1 for n in self.top_n):
            raise ConfigError("top_n must be a non-empty list of positive ints")
        object.__setattr__(self, "top_n", tuple(int(n) for n in self.top_n))


def sample_candidates(user: int, split: InteractionSplit, protocol: EvalProtocol,
                      positive=None) -> tuple[np.ndarray, int]:
    """Candidate item ids for one user: the positive first, then negatives
    drawn without replacement from items outside the user's train set and
    test item. Deterministic per (protocol seed, user).

    Returns (candidates, shortfall) where shortfall counts how many negatives
    were unavailable.
    """
    if positive is None:
        positive = split.test_item_by_user.get(user)
        if positive is None:
            raise DataError(f"user {user} has no test item")
    excluded = set(split.per_user_train_sets[user])
    test_item = split.test_item_by_user.get(user)
    if test_item is not None:
        excluded.add(test_item)
    excluded.add(positive)
    eligible = np.setdiff1d(np.arange(split.n_items),
                            np.fromiter(excluded, dtype=np.int64, count=len(excluded)))
    if eligible.size <= protocol.negatives:
        negatives = eligible
        shortfall = protocol.negatives - eligible.size
    else:
        rng = np.random.default_rng(np.random.SeedSequence([protocol.seed, int(user)]))
        negatives = rng.choice(eligible, size=protocol.negatives, replace=False)
        shortfall = 0
    return np.concatenate(([positive], negatives)).astype(np.int64), shortfall


def rank_of_positive(scores, item_ids, positive_index: int = 0) -> int:
    """1-based rank of the positive under descending score, ties broken by
    ascending item id."""
    scores = np.asarray(scores, dtype=np.float64)
    item_ids = np.asarray(item_ids)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    order = np.lexsort((item_ids, -scores))
    return int(np.nonzero(order == positive_index)[0][0]) + 1


def hit_ratio(ranks, n: int) -> float:
    """Fraction of users whose positive landed within the top n."""
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ValueError("hit_ratio of an empty user set")
    return float(np.mean(ranks <= n))


def ndcg(ranks, n: int) -> float:
    """Mean rank discount 1/log2(rank + 1) over users, 0 for misses."""
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ValueError("ndcg of an empty user set")
    gains = np.where(ranks <= n, 1.0 / np.log2(ranks + 1.0), 0.0)
    return float(np.mean(gains))


@dataclass
class ReportRow:
    bucket: str
    n: int
    hr: float
    ndcg: float
    users: int


@dataclass
class RankingReport:
    rows: list[ReportRow] = field(default_factory=list)
    shortfall_users: int = 0

    def _row(self, bucket: str, n: int) -> ReportRow:
        for r in self.rows:
            if r.bucket == bucket and r.n == n:
                return r
        raise KeyError(f"no report row for ({bucket}, {n})")

    def hr(self, bucket: str, n: int) -> float:
        return self._row(bucket, n).hr

    def ndcg(self, bucket: str, n: int) -> float:
        return self._row(bucket, n).ndcg

    def csv_text(self) -> str:
        lines = ["bucket,N,HR,NDCG,users"]
        for r in self.rows:
            lines.append(f"{r.bucket},{r.n},{r.hr:.6f},{r.ndcg:.6f},{r.users}")
        return "\n".join(lines) + "\n"

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.csv_text())

    def table(self) -> str:
        lines = [f"{'bucket':<12} {'N':>4} {'HR':>8} {'NDCG':>8} {'users':>7}"]
        for r in self.rows:
            lines.append(f"{r.bucket:<12} {r.n:>4} {r.hr:>8.4f} {r.ndcg:>8.4f} {r.users:>7}")
        if self.shortfall_users:
            lines.append(f"({self.shortfall_users} users had fewer negatives than requested)")
        return "\n".join(lines)

    def __str__(self) -> str:
        return self.table()


class RandomScorer:
    """Protocol-calibration scorer: independent uniform scores per candidate,
    deterministic per (seed, user)."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def score(self, user: int, item_ids) -> np.ndarray:
        rng = np.random.default_rng(
            np.random.SeedSequence([self.seed, 0x5C03E, int(user)]))
        return rng.random(np.asarray(item_ids).shape[0])


def _eval_threads() -> int:
    try:
        return max(1, int(os.environ.get("HICREC_THREADS", "1")))
    except ValueError:
        return 1


def evaluate(scorer, split: InteractionSplit, protocol: EvalProtocol,
             cold_start_threshold: int = 5, n_threads: int = None) -> RankingReport:
    """Rank every test user's candidates and aggregate HR/NDCG per cutoff,
    overall and for the cold-start bucket (few training interactions).

    `scorer` exposes score(user, item_ids) -> array. Parallelism across users
    follows `n_threads` (default: HICREC_THREADS env var, else 1); aggregation
    order is fixed by user id either way.
    """
    if not split.test_pairs:
        raise DataError("split has no test users to evaluate")
    if n_threads is None:
        n_threads = _eval_threads()

    def one_user(pair):
        user, _ = pair
        candidates, shortfall = sample_candidates(user, split, protocol)
        # protocol soundness: no candidate negative may be a known positive
        train = split.per_user_train_sets[user]
        for item in candidates[1:]:
            if int(item) in train or int(item) == split.test_item_by_user[user]:
                raise AssertionError(f"candidate {item} for user {user} is not a negative")
        scores = scorer.score(user, candidates)
        return rank_of_positive(scores, candidates), shortfall

    pairs = split.test_pairs
    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(one_user, pairs))
    else:
        results = [one_user(p) for p in pairs]

    ranks = np.asarray([r for r, _ in results])
    shortfalls = sum(1 for _, s in results if s > 0)
    cold = np.asarray([split.train_count(u) <= cold_start_threshold for u, _ in pairs])

    report = RankingReport(shortfall_users=shortfalls)
    for bucket, mask in (("all", np.ones_like(cold)), ("cold_start", cold)):
        bucket_ranks = ranks[mask]
        for n in protocol.top_n:
            if bucket_ranks.size:
                report.rows.append(ReportRow(bucket, n, hit_ratio(bucket_ranks, n),
                                             ndcg(bucket_ranks, n), int(bucket_ranks.size)))
            else:
                report.rows.append(ReportRow(bucket, n, 0.0, 0.0, 0))
    return report


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

DIMENSION_GRID = (2, 4, 8, 16, 32, 64, 128, 256)


def aspect_subset_grid(aspect_names) -> list[tuple[str, ...]]:
    """All aspect subsets containing the first (interaction-history) aspect."""
    base, rest = aspect_names[0], list(aspect_names[1:])
    grid = []
    for bits in range(1 << len(rest)):
        subset = (base,) + tuple(r for k, r in enumerate(rest) if bits >> k & 1)
        grid.append(subset)
    return grid


def sweep(kind: str, grid, split: InteractionSplit, aspects, train_cfg,
          protocol: EvalProtocol, dim: int = 32, factor_dim: int = 32,
          layers: int = 2, model_kind: str = "hicrec",
          cold_start_threshold: int = 5, quiet: bool = True):
    """Retrain and evaluate across a grid, sharing the seed across points.

    kind "dimension": grid of embedding dims. kind "aspects": grid of aspect
    name subsets (default: every subset containing the first aspect).
    Returns a list of (label, RankingReport).
    """
    from .model import build_model
    from .training import fit

    by_name = {a.name: a for a in aspects}
    if kind == "dimension":
        points = list(grid) if grid is not None else list(DIMENSION_GRID)
    elif kind == "aspects":
        points = ([tuple(p) for p in grid] if grid is not None
                  else aspect_subset_grid([a.name for a in aspects]))
    else:
        raise ConfigError(f"unknown sweep kind {kind!r}")

    results = []
    for point in points:
        if kind == "dimension":
            label = str(int(point))
            model = build_model(model_kind, aspects=aspects, dim=int(point),
                                factor_dim=factor_dim, layers=layers,
                                seed=train_cfg.seed)
        else:
            missing = [n for n in point if n not in by_name]
            if missing:
                raise ConfigError(f"sweep references unknown aspects {missing}")
            label = "+".join(point)
            model = build_model(model_kind, aspects=[by_name[n] for n in point],
                                dim=dim, factor_dim=factor_dim, layers=layers,
                                seed=train_cfg.seed)
        fit(model, split, train_cfg, protocol=protocol, quiet=quiet)
        report = evaluate(model.make_scorer(), split, protocol,
                          cold_start_threshold=cold_start_threshold)
        if not quiet:
            print(f"sweep point {label}: HR@10 {report.hr('all', 10):.4f}")
        results.append((label, report))
    return results


def sweep_csv_text(results, top_n) -> str:
    header = ["point"] + [f"HR@{n}" for n in top_n] + [f"NDCG@{n}" for n in top_n]
    lines = [",".join(header)]
    for label, report in results:
        cells = [label]
        cells += [f"{report.hr('all', n):.6f}" for n in top_n]
        cells += [f"{report.ndcg('all', n):.6f}" for n in top_n]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
