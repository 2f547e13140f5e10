"""Synthetic networked-SVM benchmark: groups of nodes sharing a hyperplane."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..graph import ProblemGraph, build_graph
from ..objectives import SvmObjective


@dataclass(frozen=True)
class SvmBenchmarkSpec:
    n_nodes: int = 1000
    n_groups: int = 20
    dim: int = 50
    train_per_node: int = 25
    test_per_node: int = 10
    p_intra: float = 0.5
    p_inter: float = 0.01
    noise_sd: float = 1.0
    c: float = 0.75
    seed: int = 0

    def __post_init__(self):
        if self.n_nodes < 1 or self.n_groups < 1 or self.n_nodes % self.n_groups:
            raise ValueError("n_nodes must be a positive multiple of n_groups")
        if not (0 <= self.p_intra <= 1 and 0 <= self.p_inter <= 1):
            raise ValueError("edge probabilities must lie in [0, 1]")


@dataclass
class SvmBenchmark:
    spec: SvmBenchmarkSpec
    graph: ProblemGraph
    groups: np.ndarray
    hyperplanes: np.ndarray
    test_W: np.ndarray
    test_y: np.ndarray

    @property
    def inter_group_fraction(self):
        e = self.graph.edges
        if not len(e):
            return 0.0
        return float(np.mean(self.groups[e[:, 0]] != self.groups[e[:, 1]]))


def expected_edge_count(spec: SvmBenchmarkSpec) -> float:
    size = spec.n_nodes // spec.n_groups
    intra = spec.n_groups * size * (size - 1) / 2
    total = spec.n_nodes * (spec.n_nodes - 1) / 2
    return spec.p_intra * intra + spec.p_inter * (total - intra)


def _labels(W, hyper, noise):
    score = np.einsum("mtd,md->mt", W, hyper[:, :-1]) + hyper[:, -1:] + noise
    return np.where(score >= 0, 1.0, -1.0)


def gen_svm_benchmark(spec: SvmBenchmarkSpec = SvmBenchmarkSpec()) -> SvmBenchmark:
    """Draw hyperplanes, train/test samples and a planted-partition graph.

    All randomness comes from ``numpy.random.default_rng(spec.seed)`` (PCG64),
    consumed in a fixed order so equal specs give identical benchmarks.
    """
    rng = np.random.default_rng(spec.seed)
    m, d = spec.n_nodes, spec.dim
    groups = np.repeat(np.arange(spec.n_groups), m // spec.n_groups)
    group_hyper = rng.standard_normal((spec.n_groups, d + 1))
    hyper = group_hyper[groups]

    W = rng.standard_normal((m, spec.train_per_node, d))
    y = _labels(W, hyper, rng.normal(0.0, spec.noise_sd, (m, spec.train_per_node)))
    test_W = rng.standard_normal((m, spec.test_per_node, d))
    test_y = _labels(test_W, hyper, rng.normal(0.0, spec.noise_sd, (m, spec.test_per_node)))

    iu, ju = np.triu_indices(m, 1)
    prob = np.where(groups[iu] == groups[ju], spec.p_intra, spec.p_inter)
    keep = rng.random(len(iu)) < prob
    edges = [(int(i), int(j), 1.0) for i, j in zip(iu[keep], ju[keep])]

    objectives = [SvmObjective(W[i], y[i], spec.c) for i in range(m)]
    graph = build_graph(m, d + 1, edges, objectives)
    return SvmBenchmark(spec, graph, groups, group_hyper, test_W, test_y)


def svm_accuracy(bench: SvmBenchmark, X) -> float:
    """Fraction of held-out samples classified correctly by each node's own x."""
    X = np.asarray(X, dtype=float)
    score = np.einsum("mtd,md->mt", bench.test_W, X[:, :-1]) + X[:, -1:]
    pred = np.where(score >= 0, 1.0, -1.0)
    return float(np.mean(pred == bench.test_y))
