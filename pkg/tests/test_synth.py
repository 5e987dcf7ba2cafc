import numpy as np
import pytest

from hicrec.errors import ConfigError
from hicrec.hin import leave_one_out_split, load_dataset
from hicrec.synth import SyntheticConfig, generate_synthetic, synthetic_schema


def small_cfg(**kw):
    args = dict(users=60, items=40, groups=4, interactions_per_user=5,
                strength=6.0, attr_types=("B", "C"), attr_counts=(8, 6),
                attr_alignment=(0.9, 0.7))
    args.update(kw)
    return SyntheticConfig(**args)


class TestConfigValidation:
    def test_needs_two_interactions(self):
        with pytest.raises(ConfigError):
            small_cfg(interactions_per_user=1)

    def test_attr_lists_must_align(self):
        with pytest.raises(ConfigError):
            small_cfg(attr_counts=(8,))

    def test_alignment_range(self):
        with pytest.raises(ConfigError):
            small_cfg(attr_alignment=(1.5, 0.5))

    def test_attrs_per_group(self):
        with pytest.raises(ConfigError):
            small_cfg(attr_counts=(2, 6))

    def test_reserved_type_names(self):
        with pytest.raises(ConfigError):
            small_cfg(attr_types=("U", "C"))


class TestGeneration:
    def test_deterministic(self, tmp_path):
        cfg = small_cfg()
        g1, i1 = generate_synthetic(cfg, tmp_path / "a", seed=5)
        g2, i2 = generate_synthetic(cfg, tmp_path / "b", seed=5)
        assert open(g1).read() == open(g2).read()
        assert open(i1).read() == open(i2).read()
        g3, _ = generate_synthetic(cfg, tmp_path / "c", seed=6)
        assert open(g1).read() != open(g3).read()

    def test_round_trip_through_loader(self, tmp_path):
        cfg = small_cfg()
        gp, ip = generate_synthetic(cfg, tmp_path, seed=1)
        graph = load_dataset(synthetic_schema(cfg), ip, gp)
        assert graph.n_users == cfg.users
        assert graph.n_items == cfg.items
        # one attribute per item per type
        for t in cfg.attr_types:
            adj = graph.relations[("I", t)]
            assert np.array_equal(np.asarray(adj.sum(axis=1)).ravel(),
                                  np.ones(cfg.items))
        assert len(graph.interactions) == cfg.users * cfg.interactions_per_user

    def test_every_user_is_test_eligible(self, tmp_path):
        cfg = small_cfg()
        gp, ip = generate_synthetic(cfg, tmp_path, seed=2)
        split = leave_one_out_split(load_dataset(synthetic_schema(cfg), ip, gp))
        assert len(split.test_pairs) == cfg.users

    def test_explicit_paths(self, tmp_path):
        cfg = small_cfg()
        gp, ip = generate_synthetic(cfg, seed=0,
                                    graph_path=tmp_path / "x" / "g.tsv",
                                    interactions_path=tmp_path / "x" / "i.tsv")
        assert str(gp).endswith("g.tsv")
        assert (tmp_path / "x" / "i.tsv").exists()

    def in_group_rate(self, tmp_path, strength, seed=3):
        cfg = small_cfg(users=300, items=100, strength=strength)
        gp, ip = generate_synthetic(cfg, tmp_path / f"s{strength}", seed=seed)
        # recover the planted groups the same way the generator drew them
        from hicrec.nnmath import derive_rng
        rng = derive_rng(seed, "synthetic")
        user_group = rng.integers(0, cfg.groups, size=cfg.users)
        item_group = rng.integers(0, cfg.groups, size=cfg.items)
        graph = load_dataset(synthetic_schema(cfg), ip, gp)
        hits = total = 0
        for e in graph.interactions:
            hits += user_group[e.user] == item_group[e.item]
            total += 1
        return hits / total

    def test_zero_strength_is_uniform(self, tmp_path):
        rate = self.in_group_rate(tmp_path, 0.0)
        assert abs(rate - 0.25) < 0.05  # 4 groups: in-group mass is 1/4

    def test_positive_strength_boosts_in_group(self, tmp_path):
        assert self.in_group_rate(tmp_path, 8.0) > 0.6
