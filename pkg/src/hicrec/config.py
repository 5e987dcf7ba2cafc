"""Run configuration: one TOML file drives every command.

Sections: top-level `seed` and `output_dir`, `[dataset]` file paths,
`[schema]` node types / relations / user-item designation, one `[aspect.X]`
table per aspect (meta-path pair), `[model]`, `[train]`, `[eval]`, and an
optional `[synthetic]` block for the dataset generator. Relative paths are
resolved against the config file's directory at load time.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import tomlkit

from .errors import ConfigError, SchemaError
from .hin import GraphSchema
from .metapath import parse_metapath
from .synth import SyntheticConfig
from .training import TrainConfig


@dataclass(frozen=True)
class AspectDef:
    name: str
    user_path: str
    item_path: str


@dataclass(frozen=True)
class DatasetConfig:
    interactions: str
    graph: Optional[str] = None
    order_key: str = "auto"


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 32
    factor_dim: int = 32
    layers: int = 2
    normalize: str = "sym"
    share_across_aspects: bool = False

    def __post_init__(self):
        if self.dim < 1 or self.factor_dim < 1 or self.layers < 1:
            raise ConfigError("model.dim, model.factor_dim and model.layers must be >= 1")
        if self.normalize not in ("sym", "none"):
            raise ConfigError("model.normalize must be 'sym' or 'none'")


@dataclass(frozen=True)
class EvalConfig:
    negatives: int = 99
    top_n: tuple[int, ...] = (5, 10, 15, 20)
    cold_start_threshold: int = 5

    def __post_init__(self):
        object.__setattr__(self, "top_n", tuple(int(n) for n in self.top_n))
        if self.negatives < 1:
            raise ConfigError("eval.negatives must be >= 1")
        if not self.top_n:
            raise ConfigError("eval.top_n must be non-empty")


@dataclass
class RunConfig:
    seed: int
    output_dir: str
    dataset: DatasetConfig
    schema: GraphSchema
    aspects: list[AspectDef]
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    synthetic: Optional[SyntheticConfig] = None


def _require(table: dict, key: str, ctx: str):
    if key not in table:
        raise ConfigError(f"missing required key {ctx}.{key}" if ctx else
                          f"missing required key {key}")
    return table[key]


def _check_unknown(table: dict, known, ctx: str) -> None:
    unknown = [k for k in table if k not in known]
    if unknown:
        where = f" in [{ctx}]" if ctx else ""
        raise ConfigError(f"unknown config key(s){where}: {', '.join(sorted(unknown))}")


def _typed(value, kind, ctx: str):
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"{ctx}: expected an integer, got a boolean")
    if not isinstance(value, kind):
        raise ConfigError(f"{ctx}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def _resolve(path: str, base_dir: str) -> str:
    return path if os.path.isabs(path) else os.path.normpath(os.path.join(base_dir, path))


def config_from_dict(data: dict, base_dir: str = ".") -> RunConfig:
    """Build and validate a RunConfig from parsed TOML data."""
    _check_unknown(data, {"seed", "output_dir", "dataset", "schema", "aspect",
                          "model", "train", "eval", "synthetic"}, "")
    seed = _typed(data.get("seed", 0), int, "seed")
    output_dir = _resolve(_typed(_require(data, "output_dir", ""), str, "output_dir"),
                          base_dir)

    ds = _require(data, "dataset", "")
    _check_unknown(ds, {"interactions", "graph", "order_key"}, "dataset")
    dataset = DatasetConfig(
        interactions=_resolve(_typed(_require(ds, "interactions", "dataset"), str,
                                     "dataset.interactions"), base_dir),
        graph=(_resolve(_typed(ds["graph"], str, "dataset.graph"), base_dir)
               if "graph" in ds else None),
        order_key=_typed(ds.get("order_key", "auto"), str, "dataset.order_key"),
    )
    if dataset.order_key not in ("auto", "timestamp", "file"):
        raise ConfigError("dataset.order_key must be auto, timestamp or file")

    sc = _require(data, "schema", "")
    _check_unknown(sc, {"node_types", "relations", "user_type", "item_type", "counts"},
                   "schema")
    try:
        schema = GraphSchema(
            node_types=tuple(_typed(t, str, "schema.node_types") for t in
                             _typed(_require(sc, "node_types", "schema"), list,
                                    "schema.node_types")),
            relations=tuple((_typed(r[0], str, "schema.relations"),
                             _typed(r[1], str, "schema.relations"))
                            for r in _typed(_require(sc, "relations", "schema"), list,
                                            "schema.relations")),
            user_type=_typed(_require(sc, "user_type", "schema"), str, "schema.user_type"),
            item_type=_typed(_require(sc, "item_type", "schema"), str, "schema.item_type"),
            counts={k: _typed(v, int, f"schema.counts.{k}")
                    for k, v in sc.get("counts", {}).items()},
        )
    except SchemaError as exc:
        raise ConfigError(f"schema: {exc}") from exc
    except (IndexError, TypeError) as exc:
        raise ConfigError(f"schema.relations entries must be [src, dst] pairs: {exc}") from exc

    aspect_tables = data.get("aspect", {})
    if not isinstance(aspect_tables, dict) or not aspect_tables:
        raise ConfigError("at least one [aspect.<name>] table is required")
    aspects = []
    for name, tbl in aspect_tables.items():
        _check_unknown(tbl, {"user_path", "item_path"}, f"aspect.{name}")
        up = _typed(_require(tbl, "user_path", f"aspect.{name}"), str,
                    f"aspect.{name}.user_path")
        ip = _typed(_require(tbl, "item_path", f"aspect.{name}"), str,
                    f"aspect.{name}.item_path")
        for key, text, endpoint in (("user_path", up, schema.user_type),
                                    ("item_path", ip, schema.item_type)):
            try:
                mp = parse_metapath(text, schema)
            except SchemaError as exc:
                raise ConfigError(f"aspect.{name}.{key}: {exc}") from exc
            if mp.source != endpoint or mp.target != endpoint:
                raise ConfigError(f"aspect.{name}.{key}: must start and end at "
                                  f"{endpoint!r}")
            if not mp.is_palindrome:
                raise ConfigError(f"aspect.{name}.{key}: meta-path must read the "
                                  f"same reversed")
        aspects.append(AspectDef(name, up, ip))

    mc = data.get("model", {})
    _check_unknown(mc, {"dim", "factor_dim", "layers", "normalize",
                        "share_across_aspects"}, "model")
    model = ModelConfig(
        dim=_typed(mc.get("dim", 32), int, "model.dim"),
        factor_dim=_typed(mc.get("factor_dim", 32), int, "model.factor_dim"),
        layers=_typed(mc.get("layers", 2), int, "model.layers"),
        normalize=_typed(mc.get("normalize", "sym"), str, "model.normalize"),
        share_across_aspects=_typed(mc.get("share_across_aspects", False), bool,
                                    "model.share_across_aspects"),
    )

    tc = data.get("train", {})
    _check_unknown(tc, {"epochs", "batch_size", "lr", "l2", "eval_every", "patience",
                        "max_val_users"}, "train")
    train = TrainConfig(
        epochs=_typed(tc.get("epochs", 100), int, "train.epochs"),
        batch_size=_typed(tc.get("batch_size", 4096), int, "train.batch_size"),
        lr=_typed(tc.get("lr", 0.001), float, "train.lr"),
        l2=_typed(tc.get("l2", 1e-4), float, "train.l2"),
        seed=seed,
        eval_every=_typed(tc.get("eval_every", 5), int, "train.eval_every"),
        patience=_typed(tc.get("patience", 3), int, "train.patience"),
        max_val_users=_typed(tc.get("max_val_users", 500), int, "train.max_val_users"),
    )

    ec = data.get("eval", {})
    _check_unknown(ec, {"negatives", "top_n", "cold_start_threshold"}, "eval")
    eval_cfg = EvalConfig(
        negatives=_typed(ec.get("negatives", 99), int, "eval.negatives"),
        top_n=tuple(_typed(n, int, "eval.top_n") for n in ec.get("top_n", (5, 10, 15, 20))),
        cold_start_threshold=_typed(ec.get("cold_start_threshold", 5), int,
                                    "eval.cold_start_threshold"),
    )

    synthetic = None
    if "synthetic" in data:
        sy = data["synthetic"]
        _check_unknown(sy, {"users", "items", "groups", "interactions_per_user",
                            "strength", "attr_types", "attr_counts", "attr_alignment"},
                       "synthetic")
        synthetic = SyntheticConfig(
            users=_typed(sy.get("users", 1000), int, "synthetic.users"),
            items=_typed(sy.get("items", 400), int, "synthetic.items"),
            groups=_typed(sy.get("groups", 8), int, "synthetic.groups"),
            interactions_per_user=_typed(sy.get("interactions_per_user", 10), int,
                                         "synthetic.interactions_per_user"),
            strength=_typed(sy.get("strength", 12.0), float, "synthetic.strength"),
            attr_types=tuple(sy.get("attr_types", ("B",))),
            attr_counts=tuple(_typed(c, int, "synthetic.attr_counts")
                              for c in sy.get("attr_counts", (40,))),
            attr_alignment=tuple(_typed(a, float, "synthetic.attr_alignment")
                                 for a in sy.get("attr_alignment", (0.9,))),
        )

    return RunConfig(seed=seed, output_dir=output_dir, dataset=dataset, schema=schema,
                     aspects=aspects, model=model, train=train, eval=eval_cfg,
                     synthetic=synthetic)


def load_config(path) -> RunConfig:
    """Parse and validate a TOML run configuration file."""
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    try:
        return config_from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)))
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def config_to_dict(cfg: RunConfig) -> dict:
    """RunConfig back to plain TOML-serializable data; inverse of
    config_from_dict up to path resolution."""
    data = {
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
        "dataset": {"interactions": cfg.dataset.interactions,
                    "order_key": cfg.dataset.order_key},
        "schema": {
            "node_types": list(cfg.schema.node_types),
            "relations": [list(r) for r in cfg.schema.relations],
            "user_type": cfg.schema.user_type,
            "item_type": cfg.schema.item_type,
        },
        "aspect": {a.name: {"user_path": a.user_path, "item_path": a.item_path}
                   for a in cfg.aspects},
        "model": {
            "dim": cfg.model.dim,
            "factor_dim": cfg.model.factor_dim,
            "layers": cfg.model.layers,
            "normalize": cfg.model.normalize,
            "share_across_aspects": cfg.model.share_across_aspects,
        },
        "train": {
            "epochs": cfg.train.epochs,
            "batch_size": cfg.train.batch_size,
            "lr": cfg.train.lr,
            "l2": cfg.train.l2,
            "eval_every": cfg.train.eval_every,
            "patience": cfg.train.patience,
            "max_val_users": cfg.train.max_val_users,
        },
        "eval": {
            "negatives": cfg.eval.negatives,
            "top_n": list(cfg.eval.top_n),
            "cold_start_threshold": cfg.eval.cold_start_threshold,
        },
    }
    if cfg.dataset.graph is not None:
        data["dataset"]["graph"] = cfg.dataset.graph
    if cfg.schema.counts:
        data["schema"]["counts"] = dict(cfg.schema.counts)
    if cfg.synthetic is not None:
        s = cfg.synthetic
        data["synthetic"] = {
            "users": s.users, "items": s.items, "groups": s.groups,
            "interactions_per_user": s.interactions_per_user,
            "strength": s.strength,
            "attr_types": list(s.attr_types),
            "attr_counts": list(s.attr_counts),
            "attr_alignment": list(s.attr_alignment),
        }
    return data


def dump_config(cfg: RunConfig) -> str:
    """Serialize a RunConfig as TOML text that load_config parses back to an
    equal RunConfig."""
    return tomlkit.dumps(config_to_dict(cfg))
