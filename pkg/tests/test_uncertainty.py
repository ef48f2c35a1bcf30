import math

import numpy as np
import pytest

from edgemap.mapgraph import Frame, MapGraph, MapGraphError
from edgemap.uncertainty import (
    INF,
    PoseInfoMatrix,
    avg_uncertainty,
    kronecker_uncertainty,
    optimal_cardinalities,
    spanning_tree_weight,
    uncertainty,
)
from graphs import frames_from_weights, graph_from_weights, random_connected_weights, random_spd

TRIANGLE = np.ones((3, 3)) - np.eye(3)


def test_two_nodes_unit_weight_is_zero():
    assert uncertainty(graph_from_weights([[0, 1], [1, 0]])) == pytest.approx(0.0, abs=1e-12)


def test_unit_triangle():
    # three spanning trees of weight 1 each
    assert uncertainty(graph_from_weights(TRIANGLE)) == pytest.approx(-6 * math.log(3), abs=1e-12)


def test_two_components_infinite():
    g = graph_from_weights([[0, 2, 0, 0], [2, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]])
    assert uncertainty(g) == INF


def test_single_node_infinite():
    assert uncertainty(MapGraph.from_frames([Frame(0, frozenset({1}))])) == INF


def test_information_matrix_term():
    pi = PoseInfoMatrix(np.diag([2.0, 1, 1, 1, 1, 1]))
    g = graph_from_weights(TRIANGLE)
    assert uncertainty(g, pi) == pytest.approx(-6 * math.log(3) - 2 * math.log(2))


def test_information_matrix_validation():
    with pytest.raises(ValueError):
        PoseInfoMatrix(np.eye(6) * 0.5)  # det < 1
    with pytest.raises(ValueError):
        PoseInfoMatrix(np.eye(5))


@pytest.mark.parametrize("w,expected", [
    ([[0, 5], [5, 0]], 5),
    (TRIANGLE, 3),
    ([[0, 1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], 0),
])
def test_spanning_tree_weight(w, expected):
    assert spanning_tree_weight(graph_from_weights(w)) == expected


def test_spanning_tree_weight_k4_cayley():
    # Cayley: K4 has 4^2 = 16 spanning trees
    assert spanning_tree_weight(graph_from_weights(np.ones((4, 4)) - np.eye(4))) == 16


def test_spanning_tree_weight_size_limit():
    g = graph_from_weights(np.ones((10, 10)) - np.eye(10))
    with pytest.raises(MapGraphError):
        spanning_tree_weight(g)


def test_matrix_tree_equivalence_small():
    rng = np.random.default_rng(11)
    for _ in range(60):
        n = int(rng.integers(2, 7))
        g = graph_from_weights(random_connected_weights(rng, n))
        det = np.linalg.det(g.reduced_laplacian())
        kappa = spanning_tree_weight(g)
        assert det == pytest.approx(kappa, rel=1e-9)


def test_kronecker_identity_small():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n = int(rng.integers(2, 6))
        g = graph_from_weights(random_connected_weights(rng, n))
        pi = PoseInfoMatrix(random_spd(rng))
        assert kronecker_uncertainty(g, pi) == pytest.approx(uncertainty(g, pi), abs=1e-8)


def test_avg_uncertainty_reduces_to_triangle():
    a, b, c = frames_from_weights(TRIANGLE)
    g = MapGraph.from_frames([a, b])
    assert avg_uncertainty(g, [c]) == pytest.approx(-6 * math.log(3), abs=1e-12)


def test_avg_uncertainty_disjoint_frames_infinite():
    a, b = frames_from_weights([[0, 2], [2, 0]])
    g = MapGraph.from_frames([a, b])
    stray = Frame(50, frozenset({10_000}))
    assert avg_uncertainty(g, [stray, stray]) == INF


def test_avg_uncertainty_identical_frames():
    a, b, c = frames_from_weights(TRIANGLE)
    g = MapGraph.from_frames([a, b])
    twin = Frame(99, c.points)
    expected = uncertainty(g.insert_frame(c))
    assert avg_uncertainty(g, [c, twin]) == pytest.approx(expected, abs=1e-12)


def test_avg_uncertainty_empty_rejected():
    a, b = frames_from_weights([[0, 2], [2, 0]])
    with pytest.raises(ValueError):
        avg_uncertainty(MapGraph.from_frames([a, b]), [])


def test_avg_uncertainty_matches_definition():
    rng = np.random.default_rng(2)
    pi = PoseInfoMatrix(random_spd(rng))
    for _ in range(30):
        n = int(rng.integers(2, 7))
        frames = frames_from_weights(random_connected_weights(rng, n, density=0.6))
        g = MapGraph.from_frames(frames[:-2])
        nxt = frames[-2:] if n >= 4 else frames[-1:]
        if len(g) == 0:
            continue
        direct = [uncertainty(g.insert_frame(f), pi) for f in nxt]
        expected = INF if INF in direct else float(np.mean(direct))
        got = avg_uncertainty(g, nxt, pi)
        if expected == INF:
            assert got == INF
        else:
            assert got == pytest.approx(expected, rel=1e-10, abs=1e-10)


def test_avg_uncertainty_bridging_frame_on_disconnected_map():
    # map = two islands, the new frame links both
    w = np.array([[0, 0, 2], [0, 0, 3], [2, 3, 0]])
    a, b, c = frames_from_weights(w)
    g = MapGraph.from_frames([a, b])
    assert not g.is_connected()
    assert avg_uncertainty(g, [c]) == pytest.approx(-6 * math.log(6))


@pytest.mark.parametrize("rate,expected", [(80, (8, 17)), (40, (4, 21)), (4, (0, 25))])
def test_optimal_cardinalities_formula(rate, expected):
    assert optimal_cardinalities(rate, 5, 0.5, 25) == expected


def test_optimal_cardinalities_fill_to_cap():
    assert optimal_cardinalities(80, 5, 0.5, 25, map_size=25) == (8, 8)
    assert optimal_cardinalities(80, 5, 0.5, 25, map_size=10) == (8, 0)
    assert optimal_cardinalities(80, 5, 0.5, 25, map_size=20) == (8, 3)
    assert optimal_cardinalities(4, 5, 0.5, 25, map_size=25) == (0, 0)


@pytest.mark.parametrize("args", [(80, 0, 0.5, 25), (80, 5, 0, 25), (80, 5, 0.5, 0), (80, -1, 0.5, 25)])
def test_optimal_cardinalities_rejects_bad_parameters(args):
    with pytest.raises(ValueError):
        optimal_cardinalities(*args)


def test_budget_never_exceeds_rate():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        rate, alpha, d_req = rng.uniform(0, 200), rng.uniform(0.1, 10), rng.uniform(0.01, 2)
        up, _ = optimal_cardinalities(rate, alpha, d_req, 25)
        assert up * alpha <= rate * d_req + 1e-9
        assert (up + 1) * alpha > rate * d_req


def test_pendant_unit_edge_with_identity_pi_is_not_strict():
    # weight-1 leaf with det(Pi) = 1 leaves the uncertainty unchanged
    g = graph_from_weights(TRIANGLE)
    leaf = Frame(10, frozenset({0, 77_777}))  # point 0 is private to frame 0
    g2 = g.insert_frame(leaf)
    assert g2.neighbors(10) == {0: 1}
    assert uncertainty(g2) == pytest.approx(uncertainty(g), abs=1e-12)


def test_lemma1_strict_decrease_small():
    rng = np.random.default_rng(8)
    for _ in range(100):
        n = int(rng.integers(2, 8))
        w = random_connected_weights(rng, n + 1, density=0.4)
        frames = frames_from_weights(w)
        g = MapGraph.from_frames(frames[:-1])
        f = frames[-1]
        if not g.is_connected() or not any(w[-1, :-1]):
            continue
        pi = PoseInfoMatrix(random_spd(rng))
        assert uncertainty(g.insert_frame(f), pi) < uncertainty(g, pi)


def test_batched_uncertainty_matches_single():
    from edgemap.uncertainty import batched_uncertainty, uncertainty_from_weights
    rng = np.random.default_rng(4)
    ws = np.stack([random_connected_weights(rng, 5) for _ in range(6)])
    got = batched_uncertainty(ws, 0.3)
    want = [uncertainty_from_weights(w, 0.3) for w in ws]
    assert got == pytest.approx(want, rel=1e-12)
    ws[2, 0, 1:] = ws[2, 1:, 0] = 0.0   # isolate node 0 in one member
    got = batched_uncertainty(ws, 0.3)
    assert got[2] == INF and got[0] == pytest.approx(want[0], rel=1e-12)
