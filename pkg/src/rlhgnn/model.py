"""Dense neural stack with exact gradients: type projections, shared
attention aggregators, classifier head, losses, Adam, checkpoints and a
finite-difference gradient checker.

There are exactly T aggregator parameter sets; layer l of every plan runs
parameter set l, whatever the episode lengths are, so aggregator parameters
total T*u for a single layer's count u. Heads are concatenated at every
layer: each head maps d -> d/heads, so a layer's output stays d-dimensional
and can feed the next layer, the classifier, or both at once when a step is
one episode's final result and another's intermediate.

Attention on a step compares each source's previous-layer representation
with the target's projected raw attributes (the target has received no
update at earlier layers of its own aggregation chain). A degenerate
variant that aggregates the target's features in place of each source's is
available via messages_from_target=True for comparison; it makes every
source contribute an identical term.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .aggplan import AggregationDag
from .hin import HinGraph, HinSchema, NodeId

LEAKY_SLOPE = 0.2


@dataclass
class HgnnParams:
    schema: HinSchema
    projections: dict[str, ad.Var]  # per type: (attr_dim, d)
    layer_w: list[ad.Var]  # per aggregator: (d, d), head h owns columns h*hd:(h+1)*hd
    layer_attn_src: list[ad.Var]  # per aggregator: (heads, hd)
    layer_attn_dst: list[ad.Var]  # per aggregator: (heads, hd)
    classifier_w: ad.Var  # (d, C)
    classifier_b: ad.Var  # (1, C)
    d: int
    heads: int
    num_classes: int
    dropout: float
    seed: int

    @property
    def T(self) -> int:
        return len(self.layer_w)

    @property
    def head_dim(self) -> int:
        return self.d // self.heads

    def all_vars(self) -> list[ad.Var]:
        out = [self.projections[t] for t in self.schema.node_types]
        for i in range(self.T):
            out += [self.layer_w[i], self.layer_attn_src[i], self.layer_attn_dst[i]]
        out += [self.classifier_w, self.classifier_b]
        return out

    def aggregator_vars(self) -> list[ad.Var]:
        out = []
        for i in range(self.T):
            out += [self.layer_w[i], self.layer_attn_src[i], self.layer_attn_dst[i]]
        return out

    def aggregator_param_count(self) -> int:
        return sum(v.value.size for v in self.aggregator_vars())

    def single_layer_param_count(self) -> int:
        return (
            self.layer_w[0].value.size
            + self.layer_attn_src[0].value.size
            + self.layer_attn_dst[0].value.size
        )


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


def init_params(
    schema: HinSchema,
    num_classes: int,
    max_timesteps: int,
    d: int = 128,
    heads: int = 8,
    dropout: float = 0.5,
    seed: int = 0,
) -> HgnnParams:
    if d % heads != 0:
        raise ValueError("representation dim must be divisible by the head count")
    hd = d // heads
    rng = np.random.default_rng(seed)
    projections = {}
    for t in schema.node_types:
        lam = schema.attribute_dims[t]
        projections[t] = ad.param(_glorot(rng, lam, d, (lam, d)))
    layer_w, a_src, a_dst = [], [], []
    for _ in range(max_timesteps):
        layer_w.append(ad.param(_glorot(rng, d, d, (d, d))))
        a_src.append(ad.param(_glorot(rng, hd, 1, (heads, hd))))
        a_dst.append(ad.param(_glorot(rng, hd, 1, (heads, hd))))
    cw = ad.param(_glorot(rng, d, num_classes, (d, num_classes)))
    cb = ad.param(np.zeros((1, num_classes)))
    return HgnnParams(
        schema=schema,
        projections=projections,
        layer_w=layer_w,
        layer_attn_src=a_src,
        layer_attn_dst=a_dst,
        classifier_w=cw,
        classifier_b=cb,
        d=d,
        heads=heads,
        num_classes=num_classes,
        dropout=dropout,
        seed=seed,
    )


def project_attributes(
    params: HgnnParams, g: HinGraph, nodes: list[NodeId]
) -> tuple[ad.Var, dict[NodeId, int]]:
    """H0 rows for `nodes` (kept in the given order): H0[i] = x_i . M_type."""
    parts: list[ad.Var] = []
    rows: dict[NodeId, int] = {}
    i = 0
    while i < len(nodes):
        t = nodes[i][0]
        if t not in params.projections:
            raise ValueError(f"no projection for node type {t!r}")
        j = i
        locals_ = []
        while j < len(nodes) and nodes[j][0] == t:
            locals_.append(nodes[j][1])
            j += 1
        X = ad.const(g.attributes[t][np.asarray(locals_, dtype=np.intp)])
        parts.append(ad.matmul(X, params.projections[t]))
        for k, n in enumerate(nodes[i:j]):
            rows[n] = i + k
        i = j
    if not parts:
        return ad.const(np.zeros((0, params.d))), {}
    return ad.vstack(parts) if len(parts) > 1 else parts[0], rows


def attention_coefficients(
    params: HgnnParams,
    layer: int,
    head: int,
    source_reps: np.ndarray,
    target_rep: np.ndarray,
) -> np.ndarray:
    """Per-traversal attention weights of one step (plain-numpy view).

    source_reps has one row per traversed edge (a source reached through two
    edges appears twice); the returned weights sum to 1 over those rows.
    """
    if len(source_reps) == 0:
        raise ValueError("attention over an empty source set")
    hd = params.head_dim
    lo, hi = head * hd, (head + 1) * hd
    W = params.layer_w[layer - 1].value
    ws = source_reps @ W[:, lo:hi]
    wt = target_rep @ W[:, lo:hi]
    e = ws @ params.layer_attn_src[layer - 1].value[head] + wt @ params.layer_attn_dst[layer - 1].value[head]
    e = np.where(e > 0, e, LEAKY_SLOPE * e)
    e = e - e.max()
    z = np.exp(e)
    return z / z.sum()


def _layer_compute(
    params: HgnnParams,
    layer: int,
    S: ad.Var,
    T0: ad.Var,
    starts: np.ndarray,
    lengths: np.ndarray,
    messages_from_target: bool = False,
) -> ad.Var:
    """Aggregate per-traversal rows into per-step outputs with parameter set `layer`."""
    heads, hd = params.heads, params.head_dim
    W = params.layer_w[layer - 1]
    WS = ad.matmul(S, W)
    WT = ad.matmul(T0, W)
    a_src = params.layer_attn_src[layer - 1]
    a_dst = params.layer_attn_dst[layer - 1]
    inv_len = (1.0 / lengths)[:, None]
    outs = []
    for h in range(heads):
        lo, hi = h * hd, (h + 1) * hd
        WS_h = ad.slice_cols(WS, lo, hi)
        WT_h = ad.slice_cols(WT, lo, hi)
        a_s = ad.gather_rows(a_src, [h])  # (1, hd)
        a_d = ad.gather_rows(a_dst, [h])
        es = ad.reshape(ad.sum_cols(ad.mul(WS_h, a_s)), (-1, 1))
        et = ad.reshape(ad.sum_cols(ad.mul(WT_h, a_d)), (-1, 1))
        e = ad.leaky_relu(ad.add(es, et), LEAKY_SLOPE)
        seg_max = np.maximum.reduceat(e.value[:, 0], starts)  # shift-invariant, no grad
        z = ad.exp(ad.add_const(e, -np.repeat(seg_max, lengths)[:, None]))
        denom = ad.repeat_rows(ad.segment_sum(z, starts, lengths), lengths)
        alpha = ad.div(z, denom)
        val = WT_h if messages_from_target else WS_h
        summed = ad.segment_sum(ad.mul(alpha, val), starts, lengths)
        outs.append(ad.mul_const(summed, inv_len))
    return ad.relu(ad.hstack(outs))


@dataclass
class ForwardResult:
    outputs: ad.Var  # (num episodes, d), aligned with dag.outputs
    key_rows: dict  # plan key -> (layer index, row)
    matrices: list[ad.Var]  # matrices[0] = H0, matrices[l] = layer-l outputs


def hgnn_forward(
    params: HgnnParams,
    g: HinGraph,
    dag: AggregationDag,
    mode: str = "eval",
    seed: int = 0,
    messages_from_target: bool = False,
) -> ForwardResult:
    """Evaluate the plan layer by layer; episodes that stopped at once return
    their projected attributes directly."""
    if mode not in ("eval", "train"):
        raise ValueError(f"unknown mode {mode!r}")
    if not dag.outputs:
        raise ValueError("plan has no episodes")
    train = mode == "train"
    keep = 1.0 - params.dropout
    rng = np.random.default_rng([seed]) if train else None

    h0_var, h0_rows = project_attributes(params, g, dag.h0_nodes)
    key_rows: dict = {}
    for node, row in h0_rows.items():
        key_rows[("h0",) + node] = (0, row)
    matrices = [h0_var]

    for layer_idx, steps in enumerate(dag.layers, start=1):
        if not steps:
            raise ValueError(f"layer {layer_idx} of the plan is empty")
        prev = matrices[layer_idx - 1]
        src_rows: list[int] = []
        tgt_rows: list[int] = []
        lengths = np.zeros(len(steps), dtype=np.intp)
        for si, step in enumerate(steps):
            t_row = h0_rows[step.target_node]
            cnt = 0
            for src_key, mult in step.sources:
                if layer_idx == 1:
                    row = h0_rows[src_key[1], src_key[2]]
                else:
                    owner, row = key_rows[src_key]
                    if owner != layer_idx - 1:
                        raise ValueError("plan source does not come from the previous layer")
                src_rows.extend([row] * mult)
                cnt += mult
            tgt_rows.extend([t_row] * cnt)
            lengths[si] = cnt
        starts = np.concatenate(([0], np.cumsum(lengths)[:-1]))
        S = ad.gather_rows(prev, np.asarray(src_rows, dtype=np.intp))
        T0 = ad.gather_rows(h0_var, np.asarray(tgt_rows, dtype=np.intp))
        if train and params.dropout > 0:
            S = ad.mul_const(S, (rng.random(S.value.shape) < keep) / keep)
            T0 = ad.mul_const(T0, (rng.random(T0.value.shape) < keep) / keep)
        out = _layer_compute(params, layer_idx, S, T0, starts, lengths, messages_from_target)
        for si, step in enumerate(steps):
            key_rows[step.target] = (layer_idx, si)
        matrices.append(out)

    # stack episode outputs in episode order
    by_matrix: dict[int, list[int]] = {}
    positions: list[tuple[int, int]] = []
    for key in dag.outputs:
        owner, row = key_rows[key]
        by_matrix.setdefault(owner, []).append(row)
        positions.append((owner, len(by_matrix[owner]) - 1))
    offsets: dict[int, int] = {}
    off = 0
    parts = []
    for owner in sorted(by_matrix):
        offsets[owner] = off
        parts.append(ad.gather_rows(matrices[owner], np.asarray(by_matrix[owner], dtype=np.intp)))
        off += len(by_matrix[owner])
    stacked = ad.vstack(parts) if len(parts) > 1 else parts[0]
    perm = np.asarray([offsets[o] + i for o, i in positions], dtype=np.intp)
    outputs = ad.gather_rows(stacked, perm)
    outputs.check_finite("episode representations")
    return ForwardResult(outputs=outputs, key_rows=key_rows, matrices=matrices)


def classify(params: HgnnParams, reps: ad.Var) -> ad.Var:
    """Class probability rows: softmax(reps . W_c + b_c); every row sums to 1."""
    logits = ad.add(ad.matmul(reps, params.classifier_w), params.classifier_b)
    zmax = logits.value.max(axis=1, keepdims=True)  # shift-invariant, no grad
    ez = ad.exp(ad.add_const(logits, -zmax))
    return ad.div(ez, ad.reshape(ad.sum_cols(ez), (-1, 1)))


def cross_entropy(probs: ad.Var, labels: np.ndarray, rows: np.ndarray) -> ad.Var:
    """-sum over `rows` of log probability of the true class."""
    rows = np.asarray(rows, dtype=np.intp)
    if len(rows) == 0:
        raise ValueError("cross entropy over an empty node set")
    sel = ad.gather_rows(probs, rows)
    onehot = np.zeros(sel.value.shape)
    onehot[np.arange(len(rows)), labels[rows]] = 1.0
    picked = ad.sum_cols(ad.mul_const(sel, onehot))
    return ad.scale(ad.total_sum(ad.log(picked)), -1.0)


def backward(loss: ad.Var, params: list[ad.Var]) -> list[np.ndarray]:
    """Gradients of a recorded scalar loss for each parameter, in order.

    Parameters that do not participate in the loss graph get zero gradients;
    their .grad is cleared first so nothing stale from an earlier pass leaks.
    """
    if loss.bw is None and not loss.parents:
        raise ValueError("loss carries no recording; run the forward pass first")
    for p in params:
        p.grad = None
    ad.backward(loss)
    return [p.grad if p.grad is not None else np.zeros_like(p.value) for p in params]


# ---------------------------------------------------------------------------
# Optimizer


@dataclass
class AdamState:
    lr: float
    weight_decay: float
    beta1: float
    beta2: float
    eps: float
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int


def init_adam(params: list[ad.Var], lr: float = 0.005, weight_decay: float = 0.0001) -> AdamState:
    return AdamState(
        lr=lr,
        weight_decay=weight_decay,
        beta1=0.9,
        beta2=0.999,
        eps=1e-8,
        m=[np.zeros_like(p.value) for p in params],
        v=[np.zeros_like(p.value) for p in params],
        t=0,
    )


def optimizer_step(params: list[ad.Var], grads: list[np.ndarray], state: AdamState) -> None:
    """Adaptive-moment update with bias correction and decoupled weight decay."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("parameter/gradient/state count mismatch")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.value.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.value.shape}")
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        state.v[i] = b2 * state.v[i] + (1 - b2) * g * g
        mh = state.m[i] / (1 - b1 ** state.t)
        vh = state.v[i] / (1 - b2 ** state.t)
        p.value = p.value - state.lr * (mh / (np.sqrt(vh) + state.eps) + state.weight_decay * p.value)


def finite_diff_check(
    params: list[ad.Var],
    loss_fn,
    eps: float = 1e-5,
    num_coords: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between recorded gradients and central differences.

    loss_fn() must rebuild the graph from the current parameter values and
    return the scalar loss Var. Relative error per coordinate is
    |g_ad - g_fd| / max(1e-6, |g_ad| + |g_fd|).
    """
    if eps <= 0:
        raise ValueError("finite-difference step must be positive")
    loss = loss_fn()
    if not np.isfinite(loss.value):
        raise ValueError("non-finite loss")
    grads = backward(loss, params)
    sizes = np.array([p.value.size for p in params])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(num_coords, total), replace=False)
    bounds = np.concatenate(([0], np.cumsum(sizes)))
    worst = 0.0
    for flat in np.sort(picks):
        pi = int(np.searchsorted(bounds, flat, side="right") - 1)
        local = int(flat - bounds[pi])
        p = params[pi]
        idx = np.unravel_index(local, p.value.shape)
        orig = p.value[idx]
        p.value[idx] = orig + eps
        up = float(loss_fn().value)
        p.value[idx] = orig - eps
        down = float(loss_fn().value)
        p.value[idx] = orig
        g_fd = (up - down) / (2 * eps)
        g_ad = float(grads[pi][idx])
        err = abs(g_ad - g_fd) / max(1e-6, abs(g_ad) + abs(g_fd))
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Checkpoints: one binary file = JSON header line + concatenated float64 bytes


def _named_arrays(params: HgnnParams) -> list[tuple[str, np.ndarray]]:
    out = [(f"proj:{t}", params.projections[t].value) for t in params.schema.node_types]
    for i in range(params.T):
        out.append((f"layer{i}:W", params.layer_w[i].value))
        out.append((f"layer{i}:attn_src", params.layer_attn_src[i].value))
        out.append((f"layer{i}:attn_dst", params.layer_attn_dst[i].value))
    out.append(("classifier:W", params.classifier_w.value))
    out.append(("classifier:b", params.classifier_b.value))
    return out


def save_params(params: HgnnParams, path) -> None:
    arrays = _named_arrays(params)
    header = {
        "kind": "hgnn-params",
        "dtype": "float64",
        "T": params.T,
        "d": params.d,
        "heads": params.heads,
        "num_classes": params.num_classes,
        "dropout": params.dropout,
        "seed": params.seed,
        "schema": {
            "node_types": list(params.schema.node_types),
            "relation_types": [[r.name, r.src, r.dst] for r in params.schema.relation_types],
            "attribute_dims": dict(params.schema.attribute_dims),
        },
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode("utf-8"))
        f.write(b"\n")
        for _, a in arrays:
            f.write(np.ascontiguousarray(a, dtype=np.float64).tobytes())


def load_params(path) -> HgnnParams:
    from .hin import RelationType

    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        blob = f.read()
    if header.get("kind") != "hgnn-params":
        raise ValueError("not a model checkpoint")
    schema = HinSchema(
        node_types=tuple(header["schema"]["node_types"]),
        relation_types=tuple(RelationType(*r) for r in header["schema"]["relation_types"]),
        attribute_dims={k: int(v) for k, v in header["schema"]["attribute_dims"].items()},
    )
    arrays: dict[str, np.ndarray] = {}
    off = 0
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        n = int(np.prod(shape)) if shape else 1
        arrays[spec["name"]] = np.frombuffer(
            blob, dtype=np.float64, count=n, offset=off
        ).reshape(shape).copy()
        off += n * 8
    T = int(header["T"])
    return HgnnParams(
        schema=schema,
        projections={t: ad.param(arrays[f"proj:{t}"]) for t in schema.node_types},
        layer_w=[ad.param(arrays[f"layer{i}:W"]) for i in range(T)],
        layer_attn_src=[ad.param(arrays[f"layer{i}:attn_src"]) for i in range(T)],
        layer_attn_dst=[ad.param(arrays[f"layer{i}:attn_dst"]) for i in range(T)],
        classifier_w=ad.param(arrays["classifier:W"]),
        classifier_b=ad.param(arrays["classifier:b"]),
        d=int(header["d"]),
        heads=int(header["heads"]),
        num_classes=int(header["num_classes"]),
        dropout=float(header["dropout"]),
        seed=int(header["seed"]),
    )
