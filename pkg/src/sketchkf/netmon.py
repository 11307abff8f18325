"""Network monitoring: Kronecker topologies, routing matrices and tracking experiments.

Two tracking problems share one graph and one routing matrix ``R`` (links x
flows).  Traffic tracking observes link loads ``l = R f`` of random-walk OD
flows; link-cost tracking observes path costs ``p = R^T c`` of random-walk
link costs.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse.csgraph import shortest_path

from .errors import ConfigurationError, ContractError
from .rng import GRAPH, stream
from .statespace import LinearDynamicalSystem, ar1_covariance

log = logging.getLogger(__name__)

MAX_NODES = 10_000

#: initiator used for the monitoring experiments
DEFAULT_INITIATOR = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]])


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph; edges are ``(u, v)`` with ``u < v`` in lexicographic order."""

    adjacency: np.ndarray
    edges: tuple = field(init=False)

    def __post_init__(self):
        A = np.array(self.adjacency, dtype=np.int8)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ContractError("adjacency must be square")
        if not np.array_equal(A, A.T):
            raise ContractError("adjacency must be symmetric")
        if np.any(np.diag(A)):
            raise ContractError("adjacency must have a zero diagonal")
        if not np.all((A == 0) | (A == 1)):
            raise ContractError("adjacency must be 0/1")
        A.setflags(write=False)
        object.__setattr__(self, "adjacency", A)
        u, v = np.nonzero(np.triu(A, 1))
        object.__setattr__(self, "edges", tuple(zip(u.tolist(), v.tolist())))

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def edge_index(self) -> dict:
        return {e: i for i, e in enumerate(self.edges)}

    def subgraph(self, nodes: Sequence[int]) -> "Graph":
        idx = np.asarray(nodes, dtype=int)
        return Graph(self.adjacency[np.ix_(idx, idx)])


@dataclass(frozen=True)
class Flow:
    origin: int
    destination: int
    path: tuple  # node sequence
    edges: tuple  # graph edge indices along the path


@dataclass(frozen=True)
class RoutingMatrix:
    """0/1 matrix with one row per monitored link and one column per flow."""

    matrix: np.ndarray
    flows: tuple
    links: tuple  # graph edge index of each row

    @property
    def shape(self) -> tuple:
        return self.matrix.shape

    def validate(self, graph: Graph) -> None:
        """Check that every column marks exactly the monitored edges of a connected path."""
        row_of = {e: r for r, e in enumerate(self.links)}
        for j, flow in enumerate(self.flows):
            path = flow.path
            if path[0] != flow.origin or path[-1] != flow.destination:
                raise ContractError(f"flow {j} path does not join its OD pair")
            for a, b in zip(path[:-1], path[1:]):
                if not graph.adjacency[a, b]:
                    raise ContractError(f"flow {j} uses a missing edge ({a}, {b})")
            expected = np.zeros(self.matrix.shape[0])
            for e in flow.edges:
                if e in row_of:
                    expected[row_of[e]] = 1.0
            if not np.array_equal(self.matrix[:, j], expected):
                raise ContractError(f"column {j} does not match its path")


def kronecker_graph(initiator, levels: int) -> Graph:
    """Graph of ``A_{k} = A_{k-1} (x) A_{k-1}`` after ``levels`` self-products.

    ``levels = 0`` returns the initiator itself.  Self-loops are removed
    only at the end.
    """
    A = np.array(initiator, dtype=np.int64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ContractError("initiator must be square")
    if not np.array_equal(A, A.T) or not np.all((A == 0) | (A == 1)):
        raise ContractError("initiator must be a symmetric 0/1 matrix")
    if levels < 0:
        raise ConfigurationError("levels must be nonnegative")
    n = A.shape[0]
    for _ in range(levels):
        n = n * n
        if n > MAX_NODES:
            raise ConfigurationError(f"Kronecker graph would have {n} nodes (limit {MAX_NODES})")
    for _ in range(levels):
        A = np.kron(A, A)
    np.fill_diagonal(A, 0)
    return Graph(A)


def prune_hubs(graph: Graph) -> Graph:
    """Repeatedly drop nodes adjacent to every other node."""
    keep = np.arange(graph.n_nodes)
    A = graph.adjacency
    while keep.size:
        sub = A[np.ix_(keep, keep)]
        hubs = sub.sum(axis=1) == keep.size - 1
        if not hubs.any():
            break
        keep = keep[~hubs]
    return graph.subgraph(keep)


def _lexicographic_path(graph: Graph, dist: np.ndarray, u: int, v: int) -> tuple:
    """Lexicographically smallest shortest path from ``u`` to ``v``."""
    path = [u]
    node = u
    A = graph.adjacency
    while node != v:
        nbrs = np.flatnonzero(A[node])
        step = nbrs[dist[nbrs, v] == dist[node, v] - 1]
        node = int(step[0])  # flatnonzero is ascending
        path.append(node)
    return tuple(path)


def all_ordered_pairs(n: int) -> list:
    return [(u, v) for u in range(n) for v in range(n) if u != v]


def routing_matrix(
    graph: Graph,
    od_pairs: Iterable[tuple] | None = None,
    monitored_links: Sequence[int] | None = None,
) -> RoutingMatrix:
    """Hop-count shortest-path routing of ``od_pairs`` over ``graph``.

    Ties are broken towards the lexicographically smallest node sequence.
    Single-hop and disconnected flows are dropped, as are flows crossing no
    monitored link; links carrying no remaining flow are removed.
    """
    if od_pairs is None:
        od_pairs = all_ordered_pairs(graph.n_nodes)
    A = np.ascontiguousarray(graph.adjacency, dtype=float)
    dist = shortest_path(A, method="D", unweighted=True, directed=False)
    index = graph.edge_index()
    monitored = set(range(graph.n_edges)) if monitored_links is None else {int(e) for e in monitored_links}
    flows = []
    disconnected = 0
    for u, v in od_pairs:
        u, v = int(u), int(v)
        if u == v:
            raise ContractError(f"OD pair ({u}, {v}) has equal endpoints")
        if not np.isfinite(dist[u, v]):
            disconnected += 1
            continue
        if dist[u, v] < 2:
            continue
        path = _lexicographic_path(graph, dist, u, v)
        edges = tuple(index[(min(a, b), max(a, b))] for a, b in zip(path[:-1], path[1:]))
        if not monitored.intersection(edges):
            continue
        flows.append(Flow(u, v, path, edges))
    if disconnected:
        log.warning("dropped %d disconnected OD pairs", disconnected)
    used = sorted({e for f in flows for e in f.edges} & monitored)
    row_of = {e: r for r, e in enumerate(used)}
    R = np.zeros((len(used), len(flows)))
    for j, f in enumerate(flows):
        for e in f.edges:
            if e in row_of:
                R[row_of[e], j] = 1.0
    return RoutingMatrix(R, tuple(flows), tuple(used))


# -- text formats -------------------------------------------------------------


def write_edge_list(graph: Graph, path) -> None:
    with open(path, "w") as fh:
        for u, v in graph.edges:
            fh.write(f"{u} {v}\n")


def read_edge_list(path, n_nodes: int | None = None) -> Graph:
    pairs = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                u, v = line.split()
                pairs.append((int(u), int(v)))
    n = n_nodes if n_nodes is not None else 1 + max((max(p) for p in pairs), default=-1)
    A = np.zeros((n, n), dtype=np.int8)
    for u, v in pairs:
        A[u, v] = A[v, u] = 1
    return Graph(A)


def write_routing_triplets(routing: RoutingMatrix, path) -> None:
    rows, cols = np.nonzero(routing.matrix)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "value"])
        for r, c in zip(rows.tolist(), cols.tolist()):
            w.writerow([r, c, 1])


def read_routing_triplets(path, shape: tuple | None = None) -> np.ndarray:
    with open(path, newline="") as fh:
        entries = [(int(r["row"]), int(r["col"]), float(r["value"])) for r in csv.DictReader(fh)]
    if shape is None:
        shape = (1 + max(e[0] for e in entries), 1 + max(e[1] for e in entries))
    M = np.zeros(shape)
    for r, c, val in entries:
        M[r, c] = val
    return M


# -- experiment setup ---------------------------------------------------------


@dataclass(frozen=True)
class NetworkConfig:
    """Topology recipe: Kronecker levels, node cap before pruning, link sample size."""

    levels: int = 2
    max_nodes: int | None = 50
    sampled_links: int | None = 189
    seed: int = 0


@dataclass(frozen=True)
class Network:
    graph: Graph
    routing: RoutingMatrix


def build_network(config: NetworkConfig = NetworkConfig(), initiator=DEFAULT_INITIATOR) -> Network:
    """Kronecker graph, induced on the first ``max_nodes`` nodes, hubs pruned, links sampled."""
    g = kronecker_graph(initiator, config.levels)
    if config.max_nodes is not None and config.max_nodes < g.n_nodes:
        g = g.subgraph(range(config.max_nodes))
    g = prune_hubs(g)
    links = None
    if config.sampled_links is not None and config.sampled_links < g.n_edges:
        rng = stream(config.seed, GRAPH)
        links = np.sort(rng.choice(g.n_edges, size=config.sampled_links, replace=False))
    return Network(g, routing_matrix(g, monitored_links=links))


@dataclass(frozen=True)
class TrafficModel:
    """Random-walk OD flows observed through link loads."""

    sigma_f: float = 0.02
    rho: float = 0.2
    sigma: float = 0.5
    initial_level: float = 2.0


@dataclass(frozen=True)
class LinkCostModel:
    """Random-walk link costs observed through path costs."""

    sigma_c: float = 0.04
    sigma: float = 0.1
    initial_mean: float = 1.0
    sigma_0: float = 0.1


def traffic_system(network: Network, model: TrafficModel = TrafficModel()):
    """``(system, measurement_model)`` for traffic tracking; state = flows."""
    R = network.routing.matrix
    n_links, n_flows = R.shape
    Q0 = ar1_covariance(n_flows, model.rho)
    system = LinearDynamicalSystem(
        n_flows, np.eye(n_flows), model.sigma_f**2 * Q0,
        np.full(n_flows, model.initial_level), Q0,
    )
    noise = np.full(n_links, model.sigma**2)
    return system, lambda n, rng: (R, noise)


def linkcost_system(network: Network, model: LinkCostModel = LinkCostModel()):
    """``(system, measurement_model)`` for link-cost tracking; state = link costs."""
    Rt = np.ascontiguousarray(network.routing.matrix.T)
    n_paths, n_links = Rt.shape
    system = LinearDynamicalSystem(
        n_links, np.eye(n_links), model.sigma_c**2 * np.eye(n_links),
        np.full(n_links, model.initial_mean), model.sigma_0**2 * np.eye(n_links),
    )
    noise = np.full(n_paths, model.sigma**2)
    return system, lambda n, rng: (Rt, noise)


@dataclass(frozen=True)
class TrackingConfig:
    budget: float
    N: int = 100
    runs: int = 100
    seed: int = 0
    methods: tuple = ("us", "random")  # kinds or MethodSpec instances
    network: NetworkConfig = NetworkConfig()
    traffic: TrafficModel = TrafficModel()
    linkcost: LinkCostModel = LinkCostModel()
    threads: int = 1


@dataclass(frozen=True)
class TrackingMetrics:
    """Per-slot MSE averaged over runs, keyed by method."""

    mse: dict
    updates: dict
    n_state: int
    n_measurements: int


def _tracking(config: TrackingConfig, kind: str) -> TrackingMetrics:
    from .harness.experiments import NetworkProblem, budget_rows, monte_carlo
    from .harness.methods import MethodSpec

    if not 0 < config.budget <= 1:
        raise ConfigurationError("budget must lie in (0, 1]")
    problem = NetworkProblem(kind, config.N, config.network, config.traffic, config.linkcost)
    d, D = budget_rows(problem, config.budget)
    specs = [m if isinstance(m, MethodSpec) else MethodSpec(m) for m in config.methods]
    results = monte_carlo(problem, specs, d, config.runs, config.seed, threads=config.threads)
    mse = {label: np.mean([r.mse for r in runs], axis=0) for label, runs in results.items()}
    upd = {label: np.mean([r.updates for r in runs], axis=0) for label, runs in results.items()}
    system = problem.build()[0]
    return TrackingMetrics(mse, upd, system.state_dim, D)


def traffic_experiment(config: TrackingConfig) -> TrackingMetrics:
    """US-KF against the random-sampling KF on traffic tracking."""
    return _tracking(config, "traffic")


def linkcost_experiment(config: TrackingConfig) -> TrackingMetrics:
    """US-KF against the random-sampling KF on link-cost tracking."""
    return _tracking(config, "linkcost")
