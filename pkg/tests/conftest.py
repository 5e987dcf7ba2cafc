import numpy as np
import pytest

from hicrec import (GraphSchema, SyntheticConfig, build_aspect, generate_synthetic,
                    leave_one_out_split, load_dataset, synthetic_schema)

from oracles import graph_from_arrays


@pytest.fixture
def tiny_ui_graph():
    """Two users, two items, interaction matrix [[1,1],[0,1]]."""
    schema = GraphSchema(node_types=("U", "I"), relations=(("U", "I"),),
                         user_type="U", item_type="I")
    return graph_from_arrays(schema, {("U", "I"): np.array([[1.0, 1.0], [0.0, 1.0]])})


@pytest.fixture
def shop_graph():
    """Small store-like graph: users, items, brands, categories."""
    rng = np.random.default_rng(11)
    schema = GraphSchema(node_types=("U", "I", "B", "C"),
                         relations=(("U", "I"), ("I", "B"), ("I", "C")),
                         user_type="U", item_type="I")
    ui = (rng.random((5, 6)) < 0.5).astype(float)
    ui[0, 0] = 1.0  # every user and item touched at least once
    ib = np.zeros((6, 2))
    ib[np.arange(6), rng.integers(0, 2, 6)] = 1.0
    ic = np.zeros((6, 3))
    ic[np.arange(6), rng.integers(0, 3, 6)] = 1.0
    inter = [(int(u), int(i), None) for u, i in np.argwhere(ui > 0)]
    return graph_from_arrays(schema, {("U", "I"): ui, ("I", "B"): ib, ("I", "C"): ic},
                             interactions=inter)


@pytest.fixture
def shop_aspects(shop_graph):
    return [build_aspect("history", "UIU", "IUI", shop_graph),
            build_aspect("brand", "UIBIU", "IBI", shop_graph)]


@pytest.fixture(scope="session")
def small_synth(tmp_path_factory):
    """Planted-structure dataset small enough for training tests but large
    enough for the 99-negative protocol."""
    out = tmp_path_factory.mktemp("synth-small")
    cfg = SyntheticConfig(users=80, items=120, groups=4, interactions_per_user=6,
                          strength=8.0, attr_types=("B",), attr_counts=(8,),
                          attr_alignment=(0.9,))
    gp, ip = generate_synthetic(cfg, out, seed=17)
    schema = synthetic_schema(cfg)
    graph = load_dataset(schema, ip, gp)
    split = leave_one_out_split(graph)
    aspects = [build_aspect("history", "UIU", "IUI", graph),
               build_aspect("brand", "UIBIU", "IBI", graph)]
    return {"cfg": cfg, "graph": graph, "split": split, "aspects": aspects,
            "paths": (gp, ip)}
