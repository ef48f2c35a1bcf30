import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edgemap.mapgraph import Frame, MapDelta, MapGraph, MapGraphError, edge_weight
from graphs import graph_from_weights, random_connected_weights


def fr(i, pts, slot=0):
    return Frame(i, frozenset(pts), slot)


@pytest.mark.parametrize("a,b,expected", [
    ({1, 2, 3}, {2, 3, 4}, 2),
    ({1, 2}, {1, 2}, 2),
    ({1}, {9}, 0),
])
def test_edge_weight(a, b, expected):
    assert edge_weight(fr(0, a), fr(1, b)) == expected


def test_frame_rejects_empty_points():
    with pytest.raises(MapGraphError):
        Frame(0, frozenset())


def test_insert_into_empty_graph():
    g = MapGraph.empty().insert_frame(fr(0, {1, 2}))
    assert len(g) == 1 and g.edges == {}


def test_insert_creates_weighted_edge():
    g = MapGraph.from_frames([fr(0, {1, 2, 3, 4})]).insert_frame(fr(1, {2, 3, 4, 9}))
    assert len(g) == 2
    assert g.edges == {(0, 1): 3}


def test_insert_only_links_overlapping_nodes():
    g = MapGraph.from_frames([fr(0, {1, 2}), fr(1, {7, 8})])
    g2 = g.insert_frame(fr(2, {2, 5}))
    assert set(g2.edges) == {(0, 2)}


def test_insert_duplicate_id_rejected():
    g = MapGraph.from_frames([fr(0, {1})])
    with pytest.raises(MapGraphError):
        g.insert_frame(fr(0, {2}))


def test_apply_delta_add_and_remove():
    a, b, c = fr(0, {1, 2}), fr(1, {2, 3}), fr(2, {3, 4})
    g = MapGraph.from_frames([a, b])
    out = g.apply_delta(MapDelta((c,), {0}))
    assert out.node_ids == (1, 2)
    assert out.edges == {(1, 2): 1}
    assert g.node_ids == (0, 1)  # input untouched


def test_apply_delta_upload_then_evict_same_frame():
    a, b = fr(0, {1, 2}), fr(1, {2, 3})
    g = MapGraph.from_frames([a])
    out = g.apply_delta(MapDelta((b,), {1}))
    assert out.node_ids == (0,)


def test_apply_delta_identity():
    g = MapGraph.from_frames([fr(0, {1, 2}), fr(1, {2, 3}), fr(2, {3, 4})])
    out = g.apply_delta(MapDelta())
    assert out.node_ids == g.node_ids and out.edges == g.edges


def test_apply_delta_unknown_eviction_rejected():
    g = MapGraph.from_frames([fr(0, {1})])
    with pytest.raises(MapGraphError):
        g.apply_delta(MapDelta((), {42}))


@pytest.mark.parametrize("frames,expected", [
    ([fr(0, {1})], True),
    ([fr(0, {1}), fr(1, {2})], False),
    ([fr(0, {1, 2}), fr(1, {2, 3, 4}), fr(2, {3, 4})], True),
])
def test_is_connected(frames, expected):
    assert MapGraph.from_frames(frames).is_connected() is expected


def test_is_connected_empty_rejected():
    with pytest.raises(MapGraphError):
        MapGraph.empty().is_connected()


def test_reduced_laplacian_two_nodes():
    g = graph_from_weights([[0, 7], [7, 0]])
    np.testing.assert_array_equal(g.reduced_laplacian(), [[7.0]])


def test_reduced_laplacian_unit_triangle():
    g = graph_from_weights(np.ones((3, 3)) - np.eye(3))
    np.testing.assert_array_equal(g.reduced_laplacian(), [[2, -1], [-1, 2]])


def test_reduced_laplacian_weighted_path():
    # a-b weight 2, b-c weight 3, delete a: b has degree 5, c degree 3
    g = graph_from_weights([[0, 2, 0], [2, 0, 3], [0, 3, 0]])
    np.testing.assert_array_equal(g.reduced_laplacian(), [[5, -3], [-3, 3]])


def test_reduced_laplacian_needs_two_nodes():
    with pytest.raises(MapGraphError):
        MapGraph.from_frames([fr(0, {1})]).reduced_laplacian()


point_sets = st.frozensets(st.integers(0, 30), min_size=1, max_size=12)


@settings(max_examples=60, deadline=None)
@given(st.lists(point_sets, min_size=1, max_size=7))
def test_edges_symmetric_and_rederivable(sets):
    frames = [Frame(i, s) for i, s in enumerate(sets)]
    g = MapGraph.from_frames(frames)
    for (a, b), w in g.edges.items():
        assert a < b and w >= 1
        assert w == edge_weight(g.frames[a], g.frames[b]) == edge_weight(g.frames[b], g.frames[a])
    for a, b in itertools.combinations(range(len(frames)), 2):
        if edge_weight(frames[a], frames[b]) == 0:
            assert (a, b) not in g.edges
    assert g.rebuilt().edges == g.edges


@settings(max_examples=60, deadline=None)
@given(st.lists(point_sets, min_size=1, max_size=6),
       st.lists(point_sets, min_size=0, max_size=3),
       st.data())
def test_apply_delta_cardinality(base_sets, add_sets, data):
    base = [Frame(i, s) for i, s in enumerate(base_sets)]
    added = [Frame(100 + i, s) for i, s in enumerate(add_sets)]
    g = MapGraph.from_frames(base)
    pool = [f.id for f in base] + [f.id for f in added]
    removed = data.draw(st.frozensets(st.sampled_from(pool)))
    out = g.apply_delta(MapDelta(tuple(added), removed))
    added_ids = {f.id for f in added}
    expected = len(g) + len(added_ids - removed) - len(removed & set(g.frames))
    assert len(out) == expected
    assert out.edges == out.rebuilt().edges


def test_reduced_laplacian_delete_any_node_same_det():
    rng = np.random.default_rng(3)
    for _ in range(25):
        n = int(rng.integers(2, 7))
        g = graph_from_weights(random_connected_weights(rng, n))
        dets = [np.linalg.det(g.reduced_laplacian(drop=i)) for i in g.node_ids]
        assert max(dets) - min(dets) <= 1e-9 * max(dets)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.frozensets(st.integers(0, 12), min_size=1, max_size=6), min_size=1, max_size=7),
       st.lists(st.frozensets(st.integers(0, 15), min_size=1, max_size=6), min_size=1, max_size=5))
def test_overlap_matrices_match_set_intersection(a_sets, b_sets):
    from edgemap.mapgraph import cross_overlap, overlap_matrix
    fa = [Frame(i, s) for i, s in enumerate(a_sets)]
    fb = [Frame(100 + i, s) for i, s in enumerate(b_sets)]
    w = overlap_matrix(fa)
    for i, j in itertools.product(range(len(fa)), repeat=2):
        assert w[i, j] == (0 if i == j else len(a_sets[i] & a_sets[j]))
    x = cross_overlap(fa, fb)
    for i, j in itertools.product(range(len(fa)), range(len(fb))):
        assert x[i, j] == len(a_sets[i] & b_sets[j])
