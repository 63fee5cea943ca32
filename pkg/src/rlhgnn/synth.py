"""Synthetic graphs with a planted meta-path carrying the label signal.

The generator wires the planted relations class-consistently: every node
reachable from a target node along the planted path belongs to that node's
class pool, and only the path's end type carries class one-hots in its
attributes. Labels are therefore a deterministic function of attributes
reachable via the planted path alone (mixed with noise per signal strength),
and every non-planted relation is wired class-independently.

With an empty planted path the end type is the target type itself, so labels
are a function of the node's own attributes. If a non-empty planted path ends
at the target type, target attributes become informative too; verification
specs should avoid that shape.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hin import (
    DataSplit,
    HinGraph,
    HinSchema,
    RelationType,
    SchemaError,
    build_graph,
    split_nodes,
)
from .metapath import MetaPath, neighbors_local

_NOISE_AMP = 0.2


@dataclass
class SyntheticSpec:
    node_counts: dict[str, int]
    relations: list[tuple[str, str, str]]  # (name, src type, dst type)
    out_degree: dict[str, int]  # edges per source node, per relation
    target_type: str
    planted_path: tuple[str, ...]  # relation names starting at target_type
    signal_strength: float = 1.0
    num_classes: int = 3
    noise_dims: int = 4
    train_count: int | None = None
    val_count: int | None = None
    seed: int = 0

    def schema(self) -> HinSchema:
        dim = self.num_classes + self.noise_dims
        return HinSchema(
            node_types=tuple(self.node_counts),
            relation_types=tuple(RelationType(*r) for r in self.relations),
            attribute_dims={t: dim for t in self.node_counts},
        )

    def validate(self) -> None:
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ValueError("signal strength must lie in [0, 1]")
        schema = self.schema()
        MetaPath(self.target_type, tuple(self.planted_path)).validate(schema)
        for t in self._planted_types(schema):
            if self.node_counts[t] < self.num_classes:
                raise ValueError(
                    f"type {t!r} needs at least {self.num_classes} nodes for class pools"
                )

    def _planted_types(self, schema: HinSchema) -> list[str]:
        return MetaPath(self.target_type, tuple(self.planted_path)).node_type_sequence(schema)

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticSpec":
        return cls(
            node_counts={str(k): int(v) for k, v in doc["node_counts"].items()},
            relations=[tuple(r) for r in doc["relations"]],
            out_degree={str(k): int(v) for k, v in doc["out_degree"].items()},
            target_type=doc["target_type"],
            planted_path=tuple(doc.get("planted_path", ())),
            signal_strength=float(doc.get("signal_strength", 1.0)),
            num_classes=int(doc.get("num_classes", 3)),
            noise_dims=int(doc.get("noise_dims", 4)),
            train_count=doc.get("train_count"),
            val_count=doc.get("val_count"),
            seed=int(doc.get("seed", 0)),
        )

    def to_dict(self) -> dict:
        return {
            "node_counts": dict(self.node_counts),
            "relations": [list(r) for r in self.relations],
            "out_degree": dict(self.out_degree),
            "target_type": self.target_type,
            "planted_path": list(self.planted_path),
            "signal_strength": self.signal_strength,
            "num_classes": self.num_classes,
            "noise_dims": self.noise_dims,
            "train_count": self.train_count,
            "val_count": self.val_count,
            "seed": self.seed,
        }


def generate_planted_hin(spec: SyntheticSpec) -> tuple[HinGraph, DataSplit]:
    """Build the graph and a train/val/test split, reproducibly from spec.seed."""
    spec.validate()
    schema = spec.schema()
    rng = np.random.default_rng(spec.seed)
    C = spec.num_classes

    planted_types = spec._planted_types(schema)
    end_type = planted_types[-1]

    # class pools for every type on the planted path; the target type's pool
    # doubles as the ground-truth label rule
    pools: dict[str, np.ndarray] = {}
    for t in schema.node_types:
        if t in planted_types:
            n = spec.node_counts[t]
            pool = np.arange(n) % C  # every class non-empty
            rng.shuffle(pool)
            pools[t] = pool

    planted_rels = set(spec.planted_path)
    edge_lists: dict[str, list[tuple[int, int]]] = {}
    for r in schema.relation_types:
        k = spec.out_degree.get(r.name, 0)
        n_src, n_dst = spec.node_counts[r.src], spec.node_counts[r.dst]
        pairs: list[tuple[int, int]] = []
        if k > 0 and n_dst > 0:
            if r.name in planted_rels:
                by_class = [np.flatnonzero(pools[r.dst] == c) for c in range(C)]
                for s in range(n_src):
                    pool = by_class[pools[r.src][s]]
                    take = min(k, len(pool))
                    picked = rng.choice(pool, size=take, replace=False)
                    pairs.extend((s, int(d)) for d in np.sort(picked))
            else:
                for s in range(n_src):
                    take = min(k, n_dst)
                    picked = rng.choice(n_dst, size=take, replace=False)
                    pairs.extend((s, int(d)) for d in np.sort(picked))
        edge_lists[r.name] = pairs

    attributes: dict[str, np.ndarray] = {}
    for t in schema.node_types:
        n = spec.node_counts[t]
        a = rng.uniform(0.0, _NOISE_AMP, size=(n, C + spec.noise_dims))
        if t == end_type:
            a[np.arange(n), pools[t]] += 1.0
        attributes[t] = a

    rule_labels = pools[spec.target_type]
    n_target = spec.node_counts[spec.target_type]
    keep = rng.random(n_target) < spec.signal_strength
    random_labels = rng.integers(0, C, size=n_target)
    labels = np.where(keep, rule_labels, random_labels).astype(np.int64)

    g = build_graph(
        schema,
        dict(spec.node_counts),
        edge_lists,
        attributes,
        spec.target_type,
        C,
        labels,
    )

    n_train = spec.train_count if spec.train_count is not None else max(1, int(0.4 * n_target))
    n_val = spec.val_count if spec.val_count is not None else max(1, int(0.3 * n_target))
    if n_train + n_val > n_target:
        raise ValueError("train_count + val_count exceeds target node count")
    split = split_nodes(g, (n_train, n_val), spec.seed)
    return g, split


def planted_oracle_predict(g: HinGraph, planted_path: tuple[str, ...], nodes: np.ndarray) -> np.ndarray:
    """Brute-force decision rule: follow the planted path by plain set-BFS and
    take the majority of class one-hots read off the reached attributes."""
    C = g.num_classes
    preds = np.zeros(len(nodes), dtype=np.int64)
    for i, v in enumerate(nodes):
        level = {int(v)}
        cur_type = g.target_type
        for rel in planted_path:
            r = g.schema.relation(rel)
            if r.src != cur_type:
                raise SchemaError(f"planted path broken at relation {rel!r}")
            nxt: set[int] = set()
            for p in level:
                nxt.update(int(c) for c in neighbors_local(g, cur_type, p, rel))
            level = nxt
            cur_type = r.dst
        if not level:
            preds[i] = 0
            continue
        votes = np.zeros(C)
        attrs = g.attributes[cur_type]
        for u in level:
            votes[int(np.argmax(attrs[u, :C]))] += 1
        preds[i] = int(np.argmax(votes))
    return preds


def planted_oracle_accuracy(g: HinGraph, planted_path: tuple[str, ...], nodes: np.ndarray) -> float:
    preds = planted_oracle_predict(g, planted_path, nodes)
    return float(np.mean(preds == g.labels[nodes]))
