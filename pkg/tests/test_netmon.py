import itertools
import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sketchkf import netmon
from sketchkf.errors import ConfigurationError, ContractError
from sketchkf.kalman import correct_batch
from sketchkf.statespace import MeasurementBatch, predict

A3 = netmon.DEFAULT_INITIATOR


def _path_graph(n):
    A = np.zeros((n, n), dtype=int)
    for i in range(n - 1):
        A[i, i + 1] = A[i + 1, i] = 1
    return netmon.Graph(A)


def _all_shortest_paths(graph, u, v):
    """Every simple ``u``-``v`` path of minimum hop count, by brute force."""
    A = graph.adjacency
    others = [w for w in range(graph.n_nodes) if w not in (u, v)]
    for hops in range(1, graph.n_nodes):
        found = []
        for mid in itertools.permutations(others, hops - 1):
            seq = (u,) + mid + (v,)
            if all(A[a, b] for a, b in zip(seq[:-1], seq[1:])):
                found.append(seq)
        if found:
            return found
    return []


class TestGraph:
    def test_validation(self):
        with pytest.raises(ContractError):
            netmon.Graph(np.array([[0, 1], [0, 0]]))
        with pytest.raises(ContractError):
            netmon.Graph(np.eye(2, dtype=int))
        with pytest.raises(ContractError):
            netmon.Graph(np.array([[0, 2], [2, 0]]))

    def test_edges_sorted(self):
        g = netmon.Graph(np.array([[0, 1, 1], [1, 0, 1], [1, 1, 0]]))
        assert g.edges == ((0, 1), (0, 2), (1, 2))
        np.testing.assert_array_equal(g.degrees, [2, 2, 2])


class TestKronecker:
    def test_single_node(self):
        for levels in range(3):
            g = netmon.kronecker_graph([[1]], levels)
            assert g.n_nodes == 1 and g.n_edges == 0

    def test_index_oracle(self):
        g = netmon.kronecker_graph(A3, 1)
        assert g.n_nodes == 9
        # entry at row (i, k), column (j, l) is A_ij A_kl
        for i, k, j, l in itertools.product(range(3), repeat=4):
            if (i, k) != (j, l):
                assert g.adjacency[3 * i + k, 3 * j + l] == A3[i, j] * A3[k, l]
        # rows (1,2), columns (2,3) in 1-based pairs: A_12 A_23 = 1
        assert g.adjacency[1, 5] == 1

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31))
    def test_dense_oracle(self, seed):
        r = np.random.default_rng(seed)
        A = np.triu(r.integers(0, 2, (3, 3)))
        A = A + np.triu(A, 1).T
        g = netmon.kronecker_graph(A, 1)
        K = np.kron(A, A)
        np.fill_diagonal(K, 0)
        np.testing.assert_array_equal(g.adjacency, K)
        np.testing.assert_array_equal(g.adjacency, g.adjacency.T)

    def test_two_levels(self):
        g = netmon.kronecker_graph(A3, 2)
        assert g.n_nodes == 81
        np.testing.assert_array_equal(g.adjacency, g.adjacency.T)

    def test_size_guard(self):
        with pytest.raises(ConfigurationError):
            netmon.kronecker_graph(A3, 4)

    def test_bad_initiator(self):
        with pytest.raises(ContractError):
            netmon.kronecker_graph([[0, 1], [0, 0]], 1)


class TestPrune:
    def test_complete_graph(self):
        K4 = np.ones((4, 4), dtype=int) - np.eye(4, dtype=int)
        assert netmon.prune_hubs(netmon.Graph(K4)).n_nodes == 0

    def test_star(self):
        A = np.zeros((5, 5), dtype=int)
        A[0, 1:] = A[1:, 0] = 1
        g = netmon.prune_hubs(netmon.Graph(A))
        assert g.n_nodes == 4 and g.n_edges == 0

    def test_golden_pipeline(self):
        g = netmon.kronecker_graph(A3, 2)
        full = netmon.prune_hubs(g)
        assert (full.n_nodes, full.n_edges) == (80, 1080)
        capped = netmon.prune_hubs(g.subgraph(range(50)))
        assert (capped.n_nodes, capped.n_edges) == (48, 490)


class TestRouting:
    def test_path_graph(self):
        g = _path_graph(3)
        rm = netmon.routing_matrix(g, [(0, 2), (0, 1)])
        assert len(rm.flows) == 1
        np.testing.assert_array_equal(rm.matrix, [[1.0], [1.0]])
        assert rm.flows[0].path == (0, 1, 2)

    def test_triangle_tie_break(self):
        # square 0-1-3-2-0: two 2-hop paths from 0 to 3
        A = np.zeros((4, 4), dtype=int)
        for a, b in [(0, 1), (1, 3), (3, 2), (2, 0)]:
            A[a, b] = A[b, a] = 1
        g = netmon.Graph(A)
        paths = _all_shortest_paths(g, 0, 3)
        assert len(paths) == 2
        rm = netmon.routing_matrix(g, [(0, 3)])
        assert rm.flows[0].path == min(paths) == (0, 1, 3)
        assert netmon.routing_matrix(g, [(0, 3)]).flows[0].path == rm.flows[0].path

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31))
    def test_lexicographic_against_enumeration(self, seed):
        r = np.random.default_rng(seed)
        n = 7
        A = np.triu((r.random((n, n)) < 0.4).astype(int), 1)
        g = netmon.Graph(A + A.T)
        rm = netmon.routing_matrix(g)
        got = {(f.origin, f.destination): f.path for f in rm.flows}
        for u, v in netmon.all_ordered_pairs(n):
            paths = _all_shortest_paths(g, u, v)
            if paths and len(paths[0]) > 2:
                assert got[(u, v)] == min(paths)
            else:
                assert (u, v) not in got
        if rm.flows:
            rm.validate(g)

    def test_disconnected_warns(self, caplog):
        A = np.zeros((4, 4), dtype=int)
        A[0, 1] = A[1, 0] = A[1, 2] = A[2, 1] = 1
        with caplog.at_level(logging.WARNING):
            rm = netmon.routing_matrix(netmon.Graph(A), [(0, 2), (0, 3)])
        assert len(rm.flows) == 1 and "disconnected" in caplog.text

    def test_monitored_links(self):
        g = _path_graph(4)  # edges 0:(0,1) 1:(1,2) 2:(2,3)
        rm = netmon.routing_matrix(g, [(0, 2), (1, 3), (0, 3)], monitored_links=[2])
        assert rm.links == (2,)
        assert [(f.origin, f.destination) for f in rm.flows] == [(1, 3), (0, 3)]
        np.testing.assert_array_equal(rm.matrix, [[1.0, 1.0]])

    def test_validate_rejects_bad_column(self):
        g = _path_graph(3)
        rm = netmon.routing_matrix(g, [(0, 2)])
        bad = netmon.RoutingMatrix(np.array([[1.0], [0.0]]), rm.flows, rm.links)
        with pytest.raises(ContractError):
            bad.validate(g)

    def test_default_network(self):
        net = netmon.build_network()
        net.routing.validate(net.graph)
        assert net.routing.matrix.any(axis=1).all() and net.routing.matrix.any(axis=0).all()
        assert len(net.routing.links) <= 189
        again = netmon.build_network()
        np.testing.assert_array_equal(net.routing.matrix, again.routing.matrix)


class TestIO:
    def test_edge_list_round_trip(self, tmp_path):
        g = netmon.prune_hubs(netmon.kronecker_graph(A3, 1))
        netmon.write_edge_list(g, tmp_path / "g.edges")
        lines = (tmp_path / "g.edges").read_text().splitlines()
        assert lines[0] == "{} {}".format(*g.edges[0]) and len(lines) == g.n_edges
        back = netmon.read_edge_list(tmp_path / "g.edges", g.n_nodes)
        np.testing.assert_array_equal(back.adjacency, g.adjacency)

    def test_routing_round_trip(self, tmp_path):
        net = netmon.build_network(netmon.NetworkConfig(levels=1, max_nodes=None, sampled_links=None))
        netmon.write_routing_triplets(net.routing, tmp_path / "r.csv")
        text = (tmp_path / "r.csv").read_text().splitlines()
        assert text[0] == "row,col,value" and all(line.endswith(",1") for line in text[1:])
        back = netmon.read_routing_triplets(tmp_path / "r.csv", net.routing.shape)
        np.testing.assert_array_equal(back, net.routing.matrix)


SMALL = netmon.NetworkConfig(levels=2, max_nodes=20, sampled_links=30)


class TestTracking:
    def test_small_network(self):
        net = netmon.build_network(SMALL)
        assert net.routing.shape[0] <= 30

    @pytest.mark.parametrize("kind", ["traffic", "linkcost"])
    def test_full_budget_matches_full_kf(self, kind):
        cfg = netmon.TrackingConfig(1.0, N=8, runs=2, methods=("us", "random", "full"), network=SMALL)
        m = (netmon.traffic_experiment if kind == "traffic" else netmon.linkcost_experiment)(cfg)
        np.testing.assert_allclose(m.mse["us"], m.mse["full"], rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(m.mse["random"], m.mse["full"], rtol=1e-8, atol=1e-10)

    def test_noiseless_identifiable(self):
        traffic = netmon.TrafficModel(sigma_f=1e-9, sigma=1e-6)
        cfg = netmon.TrackingConfig(1.0, N=6, runs=1, methods=("full",), network=SMALL, traffic=traffic)
        net = netmon.build_network(SMALL)
        if np.linalg.matrix_rank(net.routing.matrix) < net.routing.shape[1]:
            # flows outnumber links: use link costs, fully observed through the paths
            linkcost = netmon.LinkCostModel(sigma_c=1e-9, sigma=1e-6)
            m = netmon.linkcost_experiment(netmon.TrackingConfig(1.0, N=6, runs=1, methods=("full",), network=SMALL, linkcost=linkcost))
        else:
            m = netmon.traffic_experiment(cfg)
        mse = m.mse["full"]
        assert np.all(np.diff(mse) <= 1e-12) and mse[-1] < 1e-6

    def test_single_slot_is_regularized_wls(self):
        net = netmon.build_network(SMALL)
        model = netmon.LinkCostModel()
        system, meas = netmon.linkcost_system(net, model)
        Rt, var = meas(1, None)
        rng = np.random.default_rng(0)
        y = rng.standard_normal(Rt.shape[0]) + 1
        post = correct_batch(predict(system.initial_belief(), system, 1), MeasurementBatch(1, y, Rt, noise_var=var))
        P = model.sigma_0**2 * np.eye(Rt.shape[1]) + model.sigma_c**2 * np.eye(Rt.shape[1])
        H = Rt.T @ (Rt / var[:, None]) + np.linalg.inv(P)
        wls = np.linalg.solve(H, Rt.T @ (y / var) + np.linalg.solve(P, np.full(Rt.shape[1], model.initial_mean)))
        np.testing.assert_allclose(post.mean, wls, atol=1e-8)

    def test_traffic_us_tracks_closer(self):
        cfg = netmon.TrackingConfig(0.06, N=40, runs=10, network=SMALL)
        m = netmon.traffic_experiment(cfg)
        assert np.mean(m.mse["us"][19:]) <= np.mean(m.mse["random"][19:])

    def test_bad_budget(self):
        with pytest.raises(ConfigurationError):
            netmon.linkcost_experiment(netmon.TrackingConfig(0.0, network=SMALL))
