"""Mini-batch pairwise training: epoch scheduling, Adam updates, validation
with early stopping, and checkpointing.

Negatives are resampled fresh every epoch. For early stopping, each user's
last training interaction is held out as a validation positive (users with a
single training item keep it for training); the best-validation parameters
are restored at the end.
"""
from __future__ import annotations

import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, NumericError
from .hin import InteractionSplit, TripleBatch, sample_bpr_triples
from .nnmath import adam_step, derive_rng, save_checkpoint


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 4096
    lr: float = 0.001
    l2: float = 1e-4
    seed: int = 0
    eval_every: int = 5
    patience: int = 3        # evals without improvement before stopping; <= 0 disables
    max_val_users: int = 500

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        # lr = 0 is allowed: it gives the flat-loss smoke run used in tests
        if self.lr < 0 or not np.isfinite(self.lr):
            raise ConfigError("lr must be a finite value >= 0")
        if self.l2 < 0:
            raise ConfigError("l2 must be >= 0")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")


@dataclass
class TrainLogRow:
    epoch: int
    loss: float
    hr10: Optional[float]
    ndcg10: Optional[float]
    seconds: float


@dataclass
class TrainLog:
    rows: list[TrainLogRow] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_hr10: Optional[float] = None

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.rows]

    def csv_text(self) -> str:
        lines = ["epoch,loss,hr10,ndcg10,seconds"]
        for r in self.rows:
            hr = "" if r.hr10 is None else f"{r.hr10:.6f}"
            nd = "" if r.ndcg10 is None else f"{r.ndcg10:.6f}"
            lines.append(f"{r.epoch},{r.loss:.10g},{hr},{nd},{r.seconds:.3f}")
        return "\n".join(lines) + "\n"

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.csv_text())


def _dump_batch(batch: TripleBatch, limit: int = 8) -> str:
    head = list(batch)[:limit]
    return ", ".join(f"(u={t.user}, i+={t.pos_item}, i-={t.neg_item})" for t in head)


def train_epoch(model, split: InteractionSplit, cfg: TrainConfig, epoch_index: int,
                step_offset: int = 0, exclude=None) -> tuple[float, int]:
    """One pass: resample negatives, shuffle, update per batch with Adam.

    The epoch's randomness derives from cfg.seed XOR epoch_index. Returns
    (mean loss over triples, number of optimizer steps taken).
    """
    rng = np.random.default_rng(cfg.seed ^ epoch_index)
    triples = sample_bpr_triples(split, rng, exclude=exclude)
    order = rng.permutation(len(triples))
    total, count, steps = 0.0, 0, 0
    for start in range(0, len(order), cfg.batch_size):
        batch = triples.take(order[start:start + cfg.batch_size])
        loss = model.loss_and_grads(batch.users, batch.pos_items, batch.neg_items,
                                    l2=cfg.l2)
        if not np.isfinite(loss):
            raise NumericError(
                f"non-finite loss {loss} at epoch {epoch_index}, "
                f"batch starting at {start}; first triples: {_dump_batch(batch)}")
        steps += 1
        adam_step(model.params, lr=cfg.lr, t=step_offset + steps)
        total += loss * len(batch)
        count += len(batch)
    return (total / count if count else 0.0), steps


def _validation_holdout(split: InteractionSplit, cfg: TrainConfig):
    """Pick one validation positive per multi-item user (their last train
    item) and return (inner split without those pairs, validation pairs)."""
    val_pairs = [(u, items[-1]) for u, items in enumerate(split.per_user_train)
                 if len(items) >= 2]
    if not val_pairs:
        return split, []
    if len(val_pairs) > cfg.max_val_users:
        rng = derive_rng(cfg.seed, "validation")
        keep = np.sort(rng.choice(len(val_pairs), size=cfg.max_val_users, replace=False))
        val_pairs = [val_pairs[i] for i in keep]
    val_set = set(val_pairs)
    keep_mask = np.fromiter(
        ((u, i) not in val_set for u, i in zip(split.train_users, split.train_items)),
        dtype=bool, count=len(split.train_users))
    inner = InteractionSplit(
        n_users=split.n_users,
        n_items=split.n_items,
        train_users=split.train_users[keep_mask],
        train_items=split.train_items[keep_mask],
        test_pairs=split.test_pairs,
        per_user_train=split.per_user_train,
        skipped_users=split.skipped_users,
        used_timestamps=split.used_timestamps,
    )
    return inner, val_pairs


def _validation_metrics(model, split: InteractionSplit, val_pairs, protocol):
    from .evaluation import rank_of_positive, sample_candidates

    ranks = []
    scorer = model.make_scorer()
    for u, item in val_pairs:
        candidates, _ = sample_candidates(u, split, protocol, positive=item)
        scores = scorer.score(u, candidates)
        ranks.append(rank_of_positive(scores, candidates))
    ranks = np.asarray(ranks)
    hr = float(np.mean(ranks <= 10))
    ndcg = float(np.mean(np.where(ranks <= 10, 1.0 / np.log2(ranks + 1.0), 0.0)))
    return hr, ndcg


def fit(model, split: InteractionSplit, cfg: TrainConfig, protocol=None,
        out_dir=None, quiet: bool = True) -> TrainLog:
    """Train with periodic validation, early stopping, and checkpointing.

    Negative sampling always excludes a user's full training set, including
    held-out validation items. When `out_dir` is given, checkpoints are
    written per evaluation epoch plus `ckpt-best.bin` and `trainlog.csv`.
    Returns the TrainLog; the model is left holding the best parameters.
    """
    if protocol is None:
        from .evaluation import EvalProtocol
        protocol = EvalProtocol(seed=cfg.seed)
    inner, val_pairs = _validation_holdout(split, cfg)
    exclude = split.per_user_train_sets

    log = TrainLog()
    best_hr, best_values, best_epoch = -1.0, None, None
    stale_evals = 0
    step_offset = 0
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        mean_loss, steps = train_epoch(model, inner, cfg, epoch,
                                       step_offset=step_offset, exclude=exclude)
        step_offset += steps
        is_eval = val_pairs and ((epoch + 1) % cfg.eval_every == 0
                                 or epoch + 1 == cfg.epochs)
        hr10 = ndcg10 = None
        if is_eval:
            hr10, ndcg10 = _validation_metrics(model, split, val_pairs, protocol)
            if out_dir is not None:
                save_checkpoint(model.params, os.path.join(out_dir, f"ckpt-epoch-{epoch + 1}.bin"))
            if hr10 > best_hr:
                best_hr, best_epoch = hr10, epoch + 1
                best_values = model.params.snapshot()
                stale_evals = 0
            else:
                stale_evals += 1
        seconds = time.perf_counter() - t0
        log.rows.append(TrainLogRow(epoch + 1, mean_loss, hr10, ndcg10, seconds))
        if not quiet:
            extra = f"  val hr@10 {hr10:.4f}" if hr10 is not None else ""
            print(f"epoch {epoch + 1:4d}  loss {mean_loss:.5f}{extra}")
        if is_eval and cfg.patience > 0 and stale_evals >= cfg.patience:
            break

    if best_values is not None:
        model.params.restore(best_values)
        log.best_epoch, log.best_hr10 = best_epoch, best_hr
    if out_dir is not None:
        save_checkpoint(model.params, os.path.join(out_dir, "ckpt-best.bin"))
        log.to_csv(os.path.join(out_dir, "trainlog.csv"))
    return log
