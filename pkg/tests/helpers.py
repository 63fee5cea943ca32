"""Shared builders for the test suite."""
from __future__ import annotations

import numpy as np

from rlhgnn.hin import HinGraph, HinSchema, RelationType, build_graph


def imdb_like_schema(dim_m=4, dim_d=3, dim_a=3) -> HinSchema:
    return HinSchema(
        node_types=("Movie", "Director", "Actor"),
        relation_types=(
            RelationType("M-D", "Movie", "Director"),
            RelationType("D-M", "Director", "Movie"),
            RelationType("M-A", "Movie", "Actor"),
            RelationType("A-M", "Actor", "Movie"),
        ),
        attribute_dims={"Movie": dim_m, "Director": dim_d, "Actor": dim_a},
    )


def imdb_like_graph(n_m=8, n_d=4, n_a=6, seed=0, edges_per_node=2) -> HinGraph:
    """Small movie/director/actor graph with random attributes and edges."""
    rng = np.random.default_rng(seed)
    schema = imdb_like_schema()
    counts = {"Movie": n_m, "Director": n_d, "Actor": n_a}
    edge_lists: dict[str, list[tuple[int, int]]] = {}
    for r in schema.relation_types:
        pairs = []
        for s in range(counts[r.src]):
            k = min(edges_per_node, counts[r.dst])
            for d in sorted(rng.choice(counts[r.dst], size=k, replace=False).tolist()):
                pairs.append((s, int(d)))
        edge_lists[r.name] = pairs
    attrs = {t: rng.normal(size=(counts[t], schema.attribute_dims[t])) for t in counts}
    labels = rng.integers(0, 3, size=n_m)
    return build_graph(schema, counts, edge_lists, attrs, "Movie", 3, labels)


def random_hin(seed: int, max_nodes: int = 50) -> HinGraph:
    """Random typed graph: <=4 node types, <=8 relations, sparse enough that
    dead ends and empty relations occur."""
    rng = np.random.default_rng(seed)
    n_types = int(rng.integers(2, 5))
    types = tuple(f"T{i}" for i in range(n_types))
    counts = {}
    budget = max_nodes
    for i, t in enumerate(types):
        remaining_types = n_types - i
        hi = max(2, budget - 2 * (remaining_types - 1))
        n = int(rng.integers(2, min(hi, 20) + 1))
        counts[t] = n
        budget -= n
    dims = {t: int(rng.integers(2, 6)) for t in types}
    n_rel = int(rng.integers(2, 9))
    rels = []
    for i in range(n_rel):
        src = types[int(rng.integers(n_types))]
        dst = types[int(rng.integers(n_types))]
        rels.append(RelationType(f"r{i}", src, dst))
    schema = HinSchema(types, tuple(rels), dims)
    edge_lists = {}
    for r in rels:
        pairs = []
        for s in range(counts[r.src]):
            k = int(rng.integers(0, 4))  # zero-degree sources make dead ends
            if k:
                kk = min(k, counts[r.dst])
                for d in sorted(rng.choice(counts[r.dst], size=kk, replace=False).tolist()):
                    pairs.append((s, int(d)))
        edge_lists[r.name] = pairs
    attrs = {t: rng.normal(size=(counts[t], dims[t])) for t in types}
    target = types[0]
    labels = rng.integers(0, 2, size=counts[target])
    return build_graph(schema, counts, edge_lists, attrs, target, 2, labels)
