import numpy as np
import pytest

from conftest import basis
from vsgm import semantic_graphs as sg
from vsgm.feature_bank import ATTRIBUTE_DIM, NODE_DIM


def det(class_id, k):
    return sg.Detection(class_id=class_id, visual=basis(k), attributes=np.zeros(ATTRIBUTE_DIM))


A, B, C, D = det(1, 0), det(2, 1), det(1, 2), det(3, 3)
DEDUP_FRAMES = [
    ([A, B], [(0, 1)]),
    ([A, C], [(0, 1)]),
    ([A, B], []),
    ([D], []),
    ([A, B], []),
]


def run_global(bank, threshold, same_class_only, mode="cosine"):
    glob = sg.SemanticGraph.empty(sg.GraphRole.GLOBAL)
    prev = sg.SemanticGraph.empty(sg.GraphRole.CURRENT)
    counts = []
    for dets, rels in DEDUP_FRAMES:
        cur = sg.update_current_graph(dets, rels, bank)
        if mode == "cosine":
            glob = sg.update_global_graph(glob, cur, threshold, same_class_only)
        else:
            glob = sg.update_global_graph_jaccard(glob, prev, cur, threshold, same_class_only)
        prev = cur
        counts.append(glob.num_nodes)
    return counts, glob


# -----------------------------------------------------------------------------
# Prior graph
# -----------------------------------------------------------------------------
def test_prior_graph_has_one_node_per_class(zero_bank):
    prior = sg.build_prior_graph([(0, 1), (5, 3)], zero_bank)
    assert prior.num_nodes == 106
    assert prior.features.shape == (106, NODE_DIM)
    assert prior.edges() == [(0, 1), (5, 3)]
    assert prior.adjacency[1, 0] == 1 and prior.adjacency[0, 1] == 0


def test_prior_graph_from_csv(tmp_path, zero_bank):
    kb = tmp_path / "kb.csv"
    kb.write_text("src_id,dst_id\n2,4\n4,2\n", encoding="utf-8")
    prior = sg.build_prior_graph(kb, zero_bank)
    assert prior.num_edges == 2


def test_prior_graph_empty_kb(zero_bank):
    prior = sg.build_prior_graph(None, zero_bank)
    assert prior.num_nodes == 106
    assert prior.num_edges == 0


def test_prior_graph_unknown_class(zero_bank):
    with pytest.raises(ValueError, match="unknown class 200"):
        sg.build_prior_graph([(0, 200)], zero_bank)


def test_prior_graph_uses_attribute_priors():
    from conftest import make_bank

    priors = np.zeros((106, ATTRIBUTE_DIM))
    priors[4, 0] = 1.0
    prior = sg.build_prior_graph(None, make_bank(attribute_priors=priors))
    assert prior.features[4, 2048] == 1.0
    assert np.all(prior.features[:, :2048] == 0.0)


# -----------------------------------------------------------------------------
# Current graph
# -----------------------------------------------------------------------------
def test_current_graph_from_detections(zero_bank):
    cur = sg.update_current_graph([A, B, D], [(0, 2)], zero_bank)
    assert cur.num_nodes == 3
    assert cur.class_ids.tolist() == [1, 2, 3]
    assert cur.edges() == [(0, 2)]


def test_current_graph_empty_frame(zero_bank):
    cur = sg.update_current_graph([], [], zero_bank)
    assert cur.num_nodes == 0
    assert cur.role is sg.GraphRole.CURRENT


def test_current_graph_relation_out_of_bounds(zero_bank):
    with pytest.raises(ValueError, match="relation index out of bounds"):
        sg.update_current_graph([A, B], [(0, 2)], zero_bank)


def test_graphs_are_read_only(zero_bank):
    cur = sg.update_current_graph([A], [], zero_bank)
    with pytest.raises(ValueError):
        cur.features[0, 0] = 5.0


# -----------------------------------------------------------------------------
# Global graph, cosine dedup
# -----------------------------------------------------------------------------
@pytest.mark.parametrize(
    "threshold, same_class_only, expected",
    [
        (0.9, False, [2, 3, 3, 4, 4]),
        (1.0, False, [2, 3, 3, 4, 4]),
        (0.0, False, [2, 2, 2, 2, 2]),
        (0.0, True, [2, 2, 2, 3, 3]),
        (0.9, True, [2, 3, 3, 4, 4]),
    ],
)
def test_global_node_counts_match_hand_trace(zero_bank, threshold, same_class_only, expected):
    """Global node counts per frame for a hand-checked five-frame trace."""
    counts, _ = run_global(zero_bank, threshold, same_class_only)
    assert counts == expected
    assert counts == sorted(counts)


def test_first_frame_adds_everything(zero_bank):
    cur = sg.update_current_graph([A, B], [(0, 1)], zero_bank)
    glob = sg.update_global_graph(sg.SemanticGraph.empty(sg.GraphRole.GLOBAL), cur, 0.9)
    assert glob.num_nodes == 2
    assert glob.edges() == [(0, 1)]


def test_repeating_frame_adds_nothing(zero_bank):
    cur = sg.update_current_graph([A, B], [(0, 1)], zero_bank)
    g1 = sg.update_global_graph(sg.SemanticGraph.empty(sg.GraphRole.GLOBAL), cur, 0.9)
    g2 = sg.update_global_graph(g1, cur, 0.9)
    assert g2.digest() == g1.digest()


def test_edge_remapped_to_matched_global_node(zero_bank):
    """An edge from a merged node is redirected to its best match."""
    _, glob = run_global(zero_bank, 0.9, False)
    # frame 1: A (deduplicated onto node 0) -> C (new node 2)
    assert (0, 2) in glob.edges()
    assert (0, 1) in glob.edges()


def test_threshold_out_of_range(zero_bank):
    cur = sg.update_current_graph([A], [], zero_bank)
    with pytest.raises(ValueError, match="threshold out of range"):
        sg.update_global_graph(sg.SemanticGraph.empty(sg.GraphRole.GLOBAL), cur, 1.5)


def test_prev_global_must_be_global(zero_bank):
    cur = sg.update_current_graph([A], [], zero_bank)
    with pytest.raises(ValueError, match="role 'global'"):
        sg.update_global_graph(cur, cur, 0.9)


# -----------------------------------------------------------------------------
# Jaccard gate
# -----------------------------------------------------------------------------
def test_jaccard_similarity_values():
    assert sg.jaccard_similarity(set(), set()) == 1.0
    assert sg.jaccard_similarity({1, 2}, {1, 2}) == 1.0
    assert sg.jaccard_similarity({1, 2}, {2, 3}) == pytest.approx(1 / 3)
    assert sg.jaccard_similarity({1}, set()) == 0.0


def test_jaccard_counts_match_hand_trace(zero_bank):
    counts, _ = run_global(zero_bank, 0.9, False, mode="jaccard")
    assert counts == [2, 2, 2, 3, 3]
    cosine, _ = run_global(zero_bank, 0.9, False)
    # the gate skips frame 1, whose class set {1} is a subset of frame 0's
    assert [i for i, (a, b) in enumerate(zip(counts, cosine)) if a != b] == [1, 2, 3, 4]


def test_jaccard_identical_class_sets_leave_global_untouched(zero_bank):
    first = sg.update_current_graph([A, B], [], zero_bank)
    glob = sg.update_global_graph_jaccard(
        sg.SemanticGraph.empty(sg.GraphRole.GLOBAL),
        sg.SemanticGraph.empty(sg.GraphRole.CURRENT),
        first,
        0.9,
    )
    # same classes, brand-new features: still gated out
    second = sg.update_current_graph([det(1, 7), det(2, 8)], [], zero_bank)
    after = sg.update_global_graph_jaccard(glob, first, second, 0.9)
    assert after.digest() == glob.digest()
    assert after is glob


def test_jaccard_only_new_class_nodes_are_candidates(zero_bank):
    """Nodes of classes already seen last frame are never added."""
    first = sg.update_current_graph([A], [], zero_bank)
    glob = sg.update_global_graph(sg.SemanticGraph.empty(sg.GraphRole.GLOBAL), first, 0.9)
    # class 1 reappears with a new feature, class 2 is new
    second = sg.update_current_graph([det(1, 9), B], [], zero_bank)
    after = sg.update_global_graph_jaccard(glob, first, second, 0.9, same_class_only=False)
    assert after.num_nodes == 2
    assert after.class_ids.tolist() == [1, 2]
    assert np.array_equal(after.features[1], second.features[1])
