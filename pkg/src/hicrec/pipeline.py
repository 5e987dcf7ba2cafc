"""Config-driven command implementations: prepare (with on-disk aspect
caching), train, evaluate, sweep, and synthetic-data generation.

Aspect bundles (commuting-matrix adjacencies plus PathSim features) are the
expensive step, so `prepare` caches them under <output_dir>/cache keyed by a
content hash of the input files, the schema, the aspect definitions, and the
normalization mode. A corrupt cache file is rebuilt with a warning.
"""
from __future__ import annotations

import hashlib
import os
import sys
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import __version__
from .config import RunConfig, config_to_dict
from .errors import ConfigError, DataError
from .evaluation import EvalProtocol, evaluate, sweep, sweep_csv_text
from .hin import HinGraph, InteractionSplit, leave_one_out_split, load_dataset
from .metapath import Aspect, build_aspect, parse_metapath
from .model import MODEL_KINDS, build_model
from .nnmath import load_checkpoint_into
from .synth import generate_synthetic
from .training import fit

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

import tomlkit


@dataclass
class PreparedData:
    graph: HinGraph
    split: InteractionSplit
    aspects: list[Aspect]
    cache_hit: bool = False


def _require_files(cfg: RunConfig) -> None:
    for label, path in (("dataset.interactions", cfg.dataset.interactions),
                        ("dataset.graph", cfg.dataset.graph)):
        if path is not None and not os.path.exists(path):
            raise ConfigError(f"{label} file not found: {path} "
                              f"(generate it or fix the path)")


def _content_hash(cfg: RunConfig) -> str:
    h = hashlib.sha256()
    for path in (cfg.dataset.interactions, cfg.dataset.graph):
        if path is not None:
            with open(path, "rb") as f:
                h.update(f.read())
        h.update(b"\x00")
    h.update(repr((cfg.schema.node_types, cfg.schema.relations, cfg.schema.user_type,
                   cfg.schema.item_type, sorted(cfg.schema.counts.items()),
                   [(a.name, a.user_path, a.item_path) for a in cfg.aspects],
                   cfg.model.normalize, cfg.dataset.order_key)).encode())
    return h.hexdigest()[:16]


def _cache_path(cfg: RunConfig) -> str:
    return os.path.join(cfg.output_dir, "cache", f"aspects-{_content_hash(cfg)}.npz")


def _save_aspect_cache(path: str, aspects: list[Aspect]) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    payload = {"names": np.array([a.name for a in aspects])}
    for i, a in enumerate(aspects):
        payload[f"{i}.user_path"] = np.array(str(a.user_path))
        payload[f"{i}.item_path"] = np.array(str(a.item_path))
        for side in ("user", "item"):
            adj = getattr(a, f"{side}_adj")
            payload[f"{i}.{side}_adj.data"] = adj.data
            payload[f"{i}.{side}_adj.indices"] = adj.indices
            payload[f"{i}.{side}_adj.indptr"] = adj.indptr
            payload[f"{i}.{side}_adj.shape"] = np.array(adj.shape)
            feat = getattr(a, f"{side}_feat")
            if sp.issparse(feat):
                payload[f"{i}.{side}_feat.data"] = feat.data
                payload[f"{i}.{side}_feat.indices"] = feat.indices
                payload[f"{i}.{side}_feat.indptr"] = feat.indptr
                payload[f"{i}.{side}_feat.shape"] = np.array(feat.shape)
            else:
                payload[f"{i}.{side}_feat"] = feat
    np.savez_compressed(path, **payload)


def _load_aspect_cache(path: str, cfg: RunConfig, graph: HinGraph) -> list[Aspect]:
    with np.load(path, allow_pickle=False) as z:
        names = [str(n) for n in z["names"]]
        if names != [a.name for a in cfg.aspects]:
            raise DataError("cached aspect names do not match the configuration")
        aspects = []
        for i, a_def in enumerate(cfg.aspects):
            parts = {}
            for side in ("user", "item"):
                adj = sp.csr_matrix(
                    (z[f"{i}.{side}_adj.data"], z[f"{i}.{side}_adj.indices"],
                     z[f"{i}.{side}_adj.indptr"]),
                    shape=tuple(z[f"{i}.{side}_adj.shape"]))
                if f"{i}.{side}_feat" in z:
                    feat = z[f"{i}.{side}_feat"]
                else:
                    feat = sp.csr_matrix(
                        (z[f"{i}.{side}_feat.data"], z[f"{i}.{side}_feat.indices"],
                         z[f"{i}.{side}_feat.indptr"]),
                        shape=tuple(z[f"{i}.{side}_feat.shape"]))
                parts[f"{side}_adj"] = adj
                parts[f"{side}_feat"] = feat
            aspects.append(Aspect(
                name=a_def.name,
                user_path=parse_metapath(a_def.user_path, graph),
                item_path=parse_metapath(a_def.item_path, graph),
                **parts))
    return aspects


def prepare(cfg: RunConfig, use_cache: bool = True, quiet: bool = True) -> PreparedData:
    """Load the dataset, split it, and build (or reload) every aspect."""
    _require_files(cfg)
    graph = load_dataset(cfg.schema, cfg.dataset.interactions, cfg.dataset.graph)
    split = leave_one_out_split(graph, order_key=cfg.dataset.order_key)

    cache_file = _cache_path(cfg)
    if use_cache and os.path.exists(cache_file):
        try:
            aspects = _load_aspect_cache(cache_file, cfg, graph)
            if not quiet:
                print(f"aspect cache hit: {cache_file}")
            return PreparedData(graph, split, aspects, cache_hit=True)
        except (DataError, OSError, KeyError, ValueError) as exc:
            print(f"warning: rebuilding corrupt aspect cache ({exc})", file=sys.stderr)

    aspects = [build_aspect(a.name, a.user_path, a.item_path, graph,
                            normalize=cfg.model.normalize)
               for a in cfg.aspects]
    if use_cache:
        _save_aspect_cache(cache_file, aspects)
        if not quiet:
            print(f"aspect cache written: {cache_file}")
    return PreparedData(graph, split, aspects, cache_hit=False)


def _protocol(cfg: RunConfig) -> EvalProtocol:
    return EvalProtocol(negatives=cfg.eval.negatives, top_n=cfg.eval.top_n,
                        seed=cfg.seed)


def _build_from_config(cfg: RunConfig, model_kind: str, prep: PreparedData):
    return build_model(model_kind, aspects=prep.aspects,
                       n_users=prep.split.n_users, n_items=prep.split.n_items,
                       dim=cfg.model.dim, factor_dim=cfg.model.factor_dim,
                       layers=cfg.model.layers,
                       share_across_aspects=cfg.model.share_across_aspects,
                       seed=cfg.seed)


def _write_manifest(path: str, cfg: RunConfig, command: str, model_kind: str,
                    param_count: int) -> None:
    doc = tomlkit.document()
    run = tomlkit.table()
    run["command"] = command
    run["model"] = model_kind
    run["seed"] = cfg.seed
    run["parameter_count"] = param_count
    run["package_version"] = __version__
    doc["run"] = run
    doc["config"] = config_to_dict(cfg)
    with open(path, "w", encoding="utf-8") as f:
        f.write(tomlkit.dumps(doc))


def read_manifest(path: str) -> dict:
    with open(path, "rb") as f:
        return tomllib.load(f)


def train_command(cfg: RunConfig, model_kind: str = "hicrec", quiet: bool = False) -> dict:
    """Prepare, fit, checkpoint, and write the run manifest."""
    model_kind = model_kind.replace("_", "-")
    if model_kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model {model_kind!r}; choose from {MODEL_KINDS}")
    prep = prepare(cfg, quiet=quiet)
    model = _build_from_config(cfg, model_kind, prep)
    run_dir = os.path.join(cfg.output_dir, model_kind)
    os.makedirs(run_dir, exist_ok=True)
    _write_manifest(os.path.join(run_dir, "manifest.toml"), cfg, "train", model_kind,
                    model.params.param_count())
    log = fit(model, prep.split, cfg.train, protocol=_protocol(cfg),
              out_dir=run_dir, quiet=quiet)
    if not quiet:
        best = f", best val HR@10 {log.best_hr10:.4f} at epoch {log.best_epoch}" \
            if log.best_hr10 is not None else ""
        print(f"trained {model_kind}: {len(log.rows)} epochs, "
              f"final loss {log.rows[-1].loss:.5f}{best}")
        print(f"checkpoints and trainlog in {run_dir}")
    return {"run_dir": run_dir, "checkpoint": os.path.join(run_dir, "ckpt-best.bin"),
            "log": log, "model": model, "prepared": prep}


def evaluate_command(cfg: RunConfig, checkpoint: str = None, model_kind: str = None,
                     quiet: bool = False) -> dict:
    """Evaluate a checkpoint under the configured protocol and write the report."""
    if checkpoint is None:
        kind = model_kind or "hicrec"
        checkpoint = os.path.join(cfg.output_dir, kind.replace("_", "-"), "ckpt-best.bin")
    if not os.path.exists(checkpoint):
        raise ConfigError(f"checkpoint not found: {checkpoint} (run `hicrec train` first)")
    run_dir = os.path.dirname(os.path.abspath(checkpoint))
    if model_kind is None:
        manifest_path = os.path.join(run_dir, "manifest.toml")
        if os.path.exists(manifest_path):
            model_kind = read_manifest(manifest_path)["run"]["model"]
        else:
            model_kind = "hicrec"

    prep = prepare(cfg, quiet=quiet)
    model = _build_from_config(cfg, model_kind, prep)
    load_checkpoint_into(model.params, checkpoint)
    report = evaluate(model.make_scorer(), prep.split, _protocol(cfg),
                      cold_start_threshold=cfg.eval.cold_start_threshold)
    report_path = os.path.join(run_dir, "report.csv")
    report.to_csv(report_path)
    if not quiet:
        print(report.table())
        print(f"report written: {report_path}")
    return {"report": report, "report_path": report_path, "model_kind": model_kind}


def sweep_command(cfg: RunConfig, kind: str, model_kind: str = "hicrec",
                  quiet: bool = False) -> dict:
    """Retrain over a dimension or aspect-subset grid and emit one CSV."""
    prep = prepare(cfg, quiet=quiet)
    results = sweep(kind, None, prep.split, prep.aspects, cfg.train, _protocol(cfg),
                    dim=cfg.model.dim, factor_dim=cfg.model.factor_dim,
                    layers=cfg.model.layers, model_kind=model_kind,
                    cold_start_threshold=cfg.eval.cold_start_threshold, quiet=quiet)
    os.makedirs(cfg.output_dir, exist_ok=True)
    csv_path = os.path.join(cfg.output_dir, f"sweep-{kind}.csv")
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write(sweep_csv_text(results, cfg.eval.top_n))
    if not quiet:
        print(f"sweep written: {csv_path}")
    return {"results": results, "csv_path": csv_path}


def gen_synthetic_command(cfg: RunConfig, quiet: bool = False) -> dict:
    """Generate the synthetic dataset at the configured dataset paths."""
    if cfg.synthetic is None:
        raise ConfigError("config has no [synthetic] section")
    if cfg.dataset.graph is None:
        raise ConfigError("gen-synthetic needs dataset.graph to know where to "
                          "write attribute edges")
    graph_path, interactions_path = generate_synthetic(
        cfg.synthetic, seed=cfg.seed,
        graph_path=cfg.dataset.graph, interactions_path=cfg.dataset.interactions)
    if not quiet:
        print(f"wrote {graph_path} and {interactions_path}")
    return {"graph_path": graph_path, "interactions_path": interactions_path}
