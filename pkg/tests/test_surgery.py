import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import adjusted_rand_score

from market_ricci.curvature import FlowConfig, run_flow
from market_ricci.errors import ConfigError, InputError
from market_ricci.surgery import (
    LEAF_MIN_SIZE,
    LEAF_NO_FLAT,
    ClusterTree,
    SurgeryConfig,
    build_hierarchy,
    compare_partitions,
    load_partition,
    select_cut_edges,
    select_on_snapshot,
    surgery,
)
from market_ricci.synth import block_model, dumbbell

from conftest import complete_graph


def test_config_validation():
    for bad in ({"epsilon_flat": 0}, {"weight_quantile": 1.0}, {"escalation_factor": 0.5},
                {"max_escalations": -1}, {"cut_iteration": 0}, {"neck_ratio": -1},
                {"min_component_size": 0}, {"max_depth": -1}, {"restart_weights": "latest"}):
        with pytest.raises(ConfigError):
            SurgeryConfig(**bad)


def test_cut_on_dumbbell_is_exactly_the_cross_edges():
    g, truth = dumbbell(8, 8)
    h = run_flow(g, FlowConfig(max_iterations=5))
    sel = select_on_snapshot(h.snapshots[5], SurgeryConfig())
    side = {u: k for k, b in enumerate(truth) for u in b}
    assert sel and sel.iteration == 5
    assert sorted(sel.edges) == sorted((u, v) for u, v in g.edges() if side[u] != side[v])
    comps, rep = surgery(h.snapshots[5].graph, sel.edges, h.snapshots[5].curvature, sel)
    assert comps == truth and rep.disconnected
    assert all(abs(k) <= sel.epsilon_used for *_, k in rep.cuts)


def test_no_cut_on_complete_graph():
    h = run_flow(complete_graph(8), FlowConfig(max_iterations=10))
    assert not select_cut_edges(h, SurgeryConfig())


def test_neck_check_blocks_short_cuts():
    g, _ = dumbbell(8, 8)
    h = run_flow(g, FlowConfig(max_iterations=5))
    # a ratio far above the neck/bulge contrast rejects the otherwise valid cut
    assert not select_on_snapshot(h.snapshots[5], SurgeryConfig(neck_ratio=1e6))


def test_surgery_without_disconnection_reports_it():
    g = complete_graph(4)
    comps, rep = surgery(g, [("v0", "v1")])
    assert comps == [list(g.nodes)] and not rep.disconnected
    assert rep.cuts == [("v0", "v1", 1.0, None)]


def test_dumbbell_hierarchy():
    g, truth = dumbbell(12, 9, noise=0.05, seed=3)
    tree = build_hierarchy(g)
    assert [c.nodes for c in tree.children] == truth
    assert tree.surgery.disconnected and tree.depth == 0
    assert all(c.is_leaf and c.depth == 1 for c in tree.children)
    assert compare_partitions([leaf.nodes for leaf in tree.leaves()], truth) == 1.0


@pytest.mark.parametrize("n", [5, 10, 20])
def test_equal_weight_complete_graph_is_atomic(n):
    tree = build_hierarchy(complete_graph(n))
    assert tree.is_leaf and tree.stop_reason == LEAF_NO_FLAT


def test_small_graph_stops_on_size():
    tree = build_hierarchy(complete_graph(4))
    assert tree.is_leaf and tree.stop_reason == LEAF_MIN_SIZE and tree.flow is None


def test_three_blocks():
    g, truth = block_model([12, 9, 7], noise=0.03, seed=2)
    tree = build_hierarchy(g)
    assert compare_partitions([leaf.nodes for leaf in tree.leaves()], truth) == 1.0


def test_max_depth_zero_gives_root_leaf():
    g, _ = dumbbell(6, 6)
    tree = build_hierarchy(g, surg_cfg=SurgeryConfig(max_depth=0))
    assert tree.is_leaf and tree.stop_reason == "max depth"


def test_restart_from_current_weights_also_splits():
    g, truth = dumbbell(8, 8, noise=0.02, seed=1)
    tree = build_hierarchy(g, surg_cfg=SurgeryConfig(restart_weights="current"))
    assert [c.nodes for c in tree.children] == truth


def test_tree_serialisation_roundtrip():
    g, _ = block_model([8, 8, 6], noise=0.03, seed=5)
    tree = build_hierarchy(g)
    again = ClusterTree.from_dict(json.loads(tree.to_json()))
    assert again.to_dict() == tree.to_dict()
    assert [leaf.nodes for leaf in again.leaves()] == [leaf.nodes for leaf in tree.leaves()]
    assert tree.level(0) == [list(g.nodes)]


@st.composite
def planted(draw):
    k = draw(st.integers(1, 3))
    sizes = draw(st.lists(st.integers(2, 8), min_size=k, max_size=k))
    noise = draw(st.sampled_from([0.0, 0.1, 0.3]))
    mu_out = draw(st.floats(0.7, 1.6))
    seed = draw(st.integers(0, 10_000))
    if sum(sizes) < 3:
        sizes.append(2)
    return block_model(sizes, mu_out=mu_out, noise=noise, seed=seed)[0]


@settings(max_examples=25)
@given(planted())
def test_every_level_partitions_its_parent(g):
    tree = build_hierarchy(g)
    for node in tree.walk():
        if node.children:
            merged = sorted(u for c in node.children for u in c.nodes)
            assert merged == sorted(node.nodes)
            assert all(c.depth == node.depth + 1 for c in node.children)
            assert len(node.children) >= 2
        else:
            assert node.stop_reason is not None
    leaves = [u for leaf in tree.leaves() for u in leaf.nodes]
    assert sorted(leaves) == sorted(g.nodes) and len(set(leaves)) == len(leaves)


# -- partition comparison ------------------------------------------------------

def test_ari_hand_computed_table():
    # contingency [[2, 1], [0, 3]]: index 1+3=4, rows 3+3=6, cols 1+6=7, C(6,2)=15
    # expected 6*7/15 = 2.8, max 6.5 -> ARI = (4-2.8)/(6.5-2.8) = 12/37
    found = [["a", "b", "c"], ["d", "e", "f"]]
    ref = [["a", "b"], ["c", "d", "e", "f"]]
    assert compare_partitions(found, ref) == pytest.approx(12 / 37, abs=1e-15)


def _labels(blocks, universe):
    lab = {u: k for k, b in enumerate(blocks) for u in b}
    return [lab[u] for u in universe]


@given(st.lists(st.integers(0, 4), min_size=2, max_size=30), st.data())
def test_ari_matches_sklearn(a, data):
    b = data.draw(st.lists(st.integers(0, 4), min_size=len(a), max_size=len(a)))
    blocks = lambda lab: [[i for i, x in enumerate(lab) if x == k] for k in sorted(set(lab))]  # noqa: E731
    ours = compare_partitions(blocks(a), blocks(b))
    assert ours == pytest.approx(adjusted_rand_score(a, b), abs=1e-12)
    assert ours == pytest.approx(compare_partitions(blocks(b), blocks(a)), abs=1e-15)


def test_ari_is_label_free():
    p = [[1, 2], [3, 4, 5]]
    assert compare_partitions(p, [[5, 4, 3], [2, 1]]) == 1.0
    assert compare_partitions([[1, 2, 3, 4, 5]], [[1, 2, 3, 4, 5]]) == 1.0


def test_ari_rejects_mismatched_universes():
    with pytest.raises(InputError):
        compare_partitions([[1, 2]], [[1, 3]])
    with pytest.raises(InputError):
        compare_partitions([[1, 2], [2]], [[1, 2]])


def test_load_partition_formats():
    assert load_partition('[["a"], ["b", "c"]]') == [["a"], ["b", "c"]]
    assert load_partition('{"x": ["a"], "y": ["b"]}') == [["a"], ["b"]]
    assert load_partition('{"clusters": {"x": ["a"]}}') == [["a"]]
    with pytest.raises(InputError):
        load_partition("{oops")
    with pytest.raises(InputError):
        load_partition('["a", "b"]')


def test_empty_cut_marks_failure():
    comps, rep = surgery(complete_graph(5), [])
    assert len(comps) == 1 and not rep.disconnected and rep.to_dict()["disconnected"] is False


def test_isolated_node_listed_last():
    g = complete_graph(5)
    cut = [("v2", u) for u in g.nodes if u != "v2"]
    comps, _ = surgery(g, cut)
    assert comps == [["v0", "v1", "v3", "v4"], ["v2"]]


def test_flat_but_short_edges_are_not_cut():
    g, _ = dumbbell(8, 8)
    h = run_flow(g, FlowConfig(max_iterations=5))
    # at quantile 0.99 only a handful of the long flat edges qualify, which cannot disconnect
    assert not select_on_snapshot(h.snapshots[5], SurgeryConfig(weight_quantile=0.99))


@settings(max_examples=15)
@given(planted())
def test_recorded_cuts_satisfy_the_rule(g):
    tree = build_hierarchy(g)
    for node in tree.walk():
        rep = node.surgery
        if rep is None:
            continue
        for _, _, w, kappa in rep.cuts:
            assert abs(kappa) <= rep.epsilon_used and w >= rep.weight_threshold


def test_tree_is_reproducible_bytewise():
    g, _ = block_model([7, 6, 6], noise=0.1, seed=8)
    assert build_hierarchy(g).to_json() == build_hierarchy(g).to_json()


def test_ari_examples():
    nodes = list(range(4))
    assert compare_partitions([[u] for u in nodes], [nodes]) <= 0
    base = [list(range(15)), list(range(15, 30))]
    moved = [list(range(14)), [14, *range(15, 30)]]
    assert 0 < compare_partitions(base, moved) < 1
