"""End-to-end training loops for both model variants, evaluation metrics,
action/meta-path reporting and the aggregation/runtime benchmarks.

Loop shape: the base variant reinitialises the aggregation network every
round and walks one node batch through timesteps 0..T, retraining the
network for B inner rounds at each timestep before scoring on validation.
The fast variant keeps one persistent network, advances one timestep per
round (t cycles 1..T, a fresh batch per cycle) and does a single network
optimizer step plus a single DQN update per round.

Every round's node set is the drawn training batch plus the full validation
set, so the reward metric is always computed on all validation nodes with
their own designed meta-paths.
"""
from __future__ import annotations

import io
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import agent as rl
from . import model as nn
from .aggplan import AggregationDag, AggregationStats, Episode, build_plan, naive_plan, plan_stats
from .hin import DataSplit, HinGraph, NodeId
from .metapath import (
    Frontier,
    MetaPath,
    action_space_size,
    expand_frontier,
    extend_path,
    stop_index,
    valid_actions,
)


@dataclass
class TrainConfig:
    variant: str = "rl-hgnn-pp"
    max_timesteps: int = 2  # T
    rounds: int | None = None  # K; default 20 (rl-hgnn) / 200 (rl-hgnn-pp)
    inner_rounds: int = 10  # B: inner training rounds / normalizer fit count
    node_batch: int = 256
    gamma: float = 0.95
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.5  # fraction of total steps over which eps anneals
    target_sync_every: int = 20  # c
    reward_window: int = 5  # b
    memory_multiplier: int = 50  # buffer capacity = multiplier * |validation|
    dqn_batch: int = 64
    learning_rate: float = 0.005
    weight_decay: float = 0.0001
    hidden_dim: int = 128  # d
    heads: int = 8
    dropout: float = 0.5
    fan_out_cap: int | None = 64
    seed: int = 0
    fixed_path: tuple[str, ...] | None = None  # ablation: force this path, skip the agent
    messages_from_target: bool = False

    def resolved_rounds(self) -> int:
        if self.rounds is not None:
            return self.rounds
        return 20 if self.variant == "rl-hgnn" else 200

    def validate(self) -> None:
        if self.variant not in ("rl-hgnn", "rl-hgnn-pp"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.max_timesteps < 1:
            raise ValueError("max_timesteps must be >= 1")
        if self.resolved_rounds() < 1:
            raise ValueError("rounds must be >= 1")
        if self.hidden_dim % self.heads != 0:
            raise ValueError("hidden_dim must be divisible by heads")

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        kwargs = dict(doc)
        if "fixed_path" in kwargs and kwargs["fixed_path"] is not None:
            kwargs["fixed_path"] = tuple(kwargs["fixed_path"])
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        if out["fixed_path"] is not None:
            out["fixed_path"] = list(out["fixed_path"])
        return out


@dataclass
class StepRecord:
    round: int
    timestep: int
    acting_nodes: list[int]
    actions: list[int]
    reward: float
    micro_f1: float
    macro_f1: float
    q_loss: float | None
    hgnn_loss: float | None
    wall_ms: float


@dataclass
class RoundRecord:
    round: int
    val_metric: float
    nodes: list[int]
    paths: list[tuple[str, ...]]


@dataclass
class EpisodeReport:
    variant: str
    num_actions: int
    steps: list[StepRecord] = field(default_factory=list)
    rounds: list[RoundRecord] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def best_round(self) -> RoundRecord:
        if not self.rounds:
            raise ValueError("empty report")
        best = max(self.rounds, key=lambda r: (r.val_metric, -r.round))
        return best

    def to_csv(self, include_wall: bool = False) -> str:
        """Deterministic metrics table; wall times are opt-in because they
        change between equal-seed runs."""
        buf = io.StringIO()
        cols = ["step", "round", "timestep"]
        cols += [f"action_{i}_ratio" for i in range(self.num_actions)]
        cols += ["reward", "micro_f1", "macro_f1", "q_loss", "hgnn_loss"]
        if include_wall:
            cols.append("wall_ms")
        buf.write(",".join(cols) + "\n")
        for i, s in enumerate(self.steps):
            counts = np.zeros(self.num_actions)
            for a in s.actions:
                counts[a] += 1
            ratios = counts / max(1, len(s.actions))
            row = [str(i), str(s.round), str(s.timestep)]
            row += [_fmt(x) for x in ratios]
            row += [_fmt(s.reward), _fmt(s.micro_f1), _fmt(s.macro_f1)]
            row += ["" if s.q_loss is None else _fmt(s.q_loss)]
            row += ["" if s.hgnn_loss is None else _fmt(s.hgnn_loss)]
            if include_wall:
                row.append(_fmt(s.wall_ms))
            buf.write(",".join(row) + "\n")
        return buf.getvalue()


def _fmt(x: float) -> str:
    return f"{float(x):.10g}"


@dataclass
class ActionStats:
    best_round: int
    per_timestep: dict[int, dict[str, float]]
    path_table: list[tuple[str, float]]  # arrow string -> fraction of nodes
    stop_at_zero_fraction: float

    def render(self) -> str:
        lines = [f"best round: {self.best_round}"]
        for t in sorted(self.per_timestep):
            freqs = ", ".join(f"{k}={v:.3f}" for k, v in sorted(self.per_timestep[t].items()))
            lines.append(f"  t={t}: {freqs}")
        lines.append(f"stop-at-0 fraction: {self.stop_at_zero_fraction:.3f}")
        lines.append("meta-path table:")
        for arrow, frac in self.path_table:
            lines.append(f"  {100 * frac:5.1f}%  {arrow}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# Metrics


def evaluate_f1(predictions: np.ndarray, labels: np.ndarray, nodes: np.ndarray) -> tuple[float, float]:
    """(micro, macro) F1 over `nodes`; predictions/labels indexed by node id.

    Micro pools TP/FP/FN globally; macro averages per-class F1 over classes
    present in either predictions or labels on this node set.
    """
    nodes = np.asarray(nodes)
    if len(nodes) == 0:
        raise ValueError("empty node set")
    y = labels[nodes]
    p = predictions[nodes]
    classes = sorted(set(y.tolist()) | set(p.tolist()))
    tp_total = fp_total = fn_total = 0
    f1s = []
    for c in classes:
        tp = int(np.sum((p == c) & (y == c)))
        fp = int(np.sum((p == c) & (y != c)))
        fn = int(np.sum((p != c) & (y == c)))
        tp_total += tp
        fp_total += fp
        fn_total += fn
        denom = 2 * tp + fp + fn
        f1s.append(0.0 if denom == 0 else 2 * tp / denom)
    micro_denom = 2 * tp_total + fp_total + fn_total
    micro = 0.0 if micro_denom == 0 else 2 * tp_total / micro_denom
    macro = float(np.mean(f1s)) if f1s else 0.0
    return float(micro), macro


# ---------------------------------------------------------------------------
# Episode bookkeeping shared by both loops


@dataclass
class _Ep:
    node: NodeId
    path: MetaPath
    frontier: Frontier
    stopped: bool = False
    state: np.ndarray | None = None  # static-variant state vector


def _fresh_episodes(g: HinGraph, nodes: np.ndarray) -> list[_Ep]:
    out = []
    t = g.target_type
    for local in nodes:
        node = (t, int(local))
        out.append(_Ep(node=node, path=MetaPath(t), frontier=Frontier.initial(node)))
    return out


def _episodes_for_plan(eps: list[_Ep]) -> list[Episode]:
    return [Episode(e.node, e.path, e.frontier) for e in eps]


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


class _BatchCursor:
    """Cycles through a node pool without replacement, reshuffling on wrap."""

    def __init__(self, pool: np.ndarray, rng: np.random.Generator):
        self.pool = np.array(pool)
        self.rng = rng
        self.order = self.rng.permutation(self.pool)
        self.pos = 0

    def draw(self, n: int) -> np.ndarray:
        n = min(n, len(self.pool))
        if self.pos + n > len(self.order):
            self.order = self.rng.permutation(self.pool)
            self.pos = 0
        out = self.order[self.pos:self.pos + n]
        self.pos += n
        return np.sort(out)


def _eps_at(cfg: TrainConfig, step: int, total: int) -> float:
    if cfg.fixed_path is not None:
        return 0.0
    horizon = max(1.0, cfg.eps_fraction * total)
    frac = min(1.0, step / horizon)
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac


def _act(
    g: HinGraph,
    cfg: TrainConfig,
    episodes: list[_Ep],
    states: np.ndarray,
    qnet: rl.QNetwork,
    eps: float,
    rng: np.random.Generator,
    timestep_for_fixed: int | None = None,
) -> tuple[list[int], list[int], list[dict]]:
    """Select and apply one action per active episode.

    Returns (acting locals, actions, pending transition stubs). Extension to
    an empty frontier force-stops the episode with its state unchanged.
    """
    schema = g.schema
    stop = stop_index(schema)
    acting, actions, pending = [], [], []
    active = [e for e in episodes if not e.stopped]
    if not active:
        return acting, actions, pending
    qvals = None
    if cfg.fixed_path is None:
        qvals = qnet.values(states)
    for i, e in enumerate(active):
        at_max = len(e.path) >= cfg.max_timesteps
        mask = valid_actions(schema, e.path.end_type(schema), at_max)
        if cfg.fixed_path is not None:
            k = len(e.path)
            if timestep_for_fixed is not None and k < len(cfg.fixed_path) and not at_max:
                a = schema.relation_index(cfg.fixed_path[k])
                if not mask[a]:
                    raise ValueError(f"fixed path relation {cfg.fixed_path[k]!r} illegal here")
            else:
                a = stop
        else:
            a = rl.select_action(qvals[i], mask, eps, rng)
        s_before = states[i].copy()
        acting.append(e.node[1])
        actions.append(a)
        if a == stop:
            e.stopped = True
            pending.append(dict(ep=e, s=s_before, a=a, s_next=s_before, terminal=True,
                                next_mask=mask.copy()))
            continue
        rel = schema.relation_types[a].name
        nxt = expand_frontier(g, e.frontier, rel, cfg.fan_out_cap, cfg.seed)
        if len(nxt.reached) == 0:
            # dead end: force-stop at the previous step, state unchanged
            e.stopped = True
            pending.append(dict(ep=e, s=s_before, a=a, s_next=s_before, terminal=True,
                                next_mask=mask.copy()))
            continue
        e.path = extend_path(e.path, rel, schema)
        e.frontier = nxt
        now_max = len(e.path) >= cfg.max_timesteps
        next_mask = valid_actions(schema, e.path.end_type(schema), now_max)
        pending.append(dict(ep=e, s=s_before, a=a, s_next=None, terminal=False,
                            next_mask=next_mask))
    return acting, actions, pending


def _push_transitions(agent: rl.DqnAgent, pending: list[dict], reward: float) -> None:
    for p in pending:
        s_next = p["s_next"] if p["s_next"] is not None else p["s"]
        agent.buffer.push(rl.Transition(
            s=p["s"], a=p["a"], s_next=s_next, r=reward,
            terminal=p["terminal"], next_mask=p["next_mask"],
        ))


def _forward_metrics(
    params: nn.HgnnParams,
    g: HinGraph,
    plan: AggregationDag,
    ep_nodes: np.ndarray,
    split: DataSplit,
    cfg: TrainConfig,
) -> tuple[np.ndarray, float, float]:
    """Eval-mode pass over the plan: per-episode reps + validation F1 pair."""
    fwd = nn.hgnn_forward(params, g, plan, mode="eval",
                          messages_from_target=cfg.messages_from_target)
    probs = nn.classify(params, fwd.outputs)
    preds_rows = np.argmax(probs.value, axis=1)
    n_target = g.num_nodes[g.target_type]
    preds = np.zeros(n_target, dtype=np.int64)
    preds[ep_nodes] = preds_rows
    micro, macro = evaluate_f1(preds, g.labels, split.validation)
    return fwd.outputs.value, micro, macro


def _train_step(
    params: nn.HgnnParams,
    opt: nn.AdamState,
    g: HinGraph,
    plan: AggregationDag,
    ep_nodes: np.ndarray,
    train_rows: np.ndarray,
    cfg: TrainConfig,
    seed: int,
) -> float:
    fwd = nn.hgnn_forward(params, g, plan, mode="train", seed=seed,
                          messages_from_target=cfg.messages_from_target)
    probs = nn.classify(params, fwd.outputs)
    loss = nn.cross_entropy(probs, g.labels[ep_nodes], train_rows)
    grads = nn.backward(loss, params.all_vars())
    nn.optimizer_step(params.all_vars(), grads, opt)
    return float(loss.value)


def _make_agent(g: HinGraph, cfg: TrainConfig, split: DataSplit, input_dim: int,
                with_normalizer: bool) -> rl.DqnAgent:
    return rl.DqnAgent.create(
        input_dim=input_dim,
        num_actions=action_space_size(g.schema),
        buffer_capacity=max(1, cfg.memory_multiplier * len(split.validation)),
        gamma=cfg.gamma,
        sync_every=cfg.target_sync_every,
        reward_window=cfg.reward_window,
        lr=cfg.learning_rate,
        weight_decay=cfg.weight_decay,
        normalizer_fit=cfg.inner_rounds if with_normalizer else None,
        seed=_derive_seed(cfg.seed, 11),
    )


# ---------------------------------------------------------------------------
# Algorithm variant 1: per-round network reinitialisation


def run_rl_hgnn(cfg: TrainConfig, g: HinGraph, split: DataSplit):
    """Base loop: K rounds, each walking one batch through timesteps 0..T."""
    cfg.validate()
    if cfg.variant != "rl-hgnn":
        raise ValueError("config variant must be rl-hgnn")
    K, T = cfg.resolved_rounds(), cfg.max_timesteps
    state_dim = rl.static_state_dim(g)
    agent = _make_agent(g, cfg, split, state_dim, with_normalizer=False)
    rng_batch = np.random.default_rng(_derive_seed(cfg.seed, 1))
    rng_eps = np.random.default_rng(_derive_seed(cfg.seed, 2))
    rng_dqn = np.random.default_rng(_derive_seed(cfg.seed, 3))
    cursor = _BatchCursor(split.train, rng_batch)
    report = EpisodeReport(variant=cfg.variant, num_actions=action_space_size(g.schema))
    total_steps = K * (T + 1)
    step_counter = 0
    reinits = 0
    update_opportunities = 0
    best_params = None
    best_metric = -1.0
    design_wall_ms = 0.0

    for k in range(K):
        round_t0 = time.perf_counter()
        params = nn.init_params(g.schema, g.num_classes, T, cfg.hidden_dim, cfg.heads,
                                cfg.dropout, seed=_derive_seed(cfg.seed, 20, k))
        opt = nn.init_adam(params.all_vars(), cfg.learning_rate, cfg.weight_decay)
        reinits += 1
        batch = cursor.draw(cfg.node_batch)
        ep_nodes = np.unique(np.concatenate([batch, split.validation]))
        episodes = _fresh_episodes(g, ep_nodes)
        for e in episodes:
            e.state = rl.initial_state_static(g, e.node, state_dim)
        node_row = {int(n): i for i, n in enumerate(ep_nodes)}
        train_rows = np.asarray([node_row[int(n)] for n in batch], dtype=np.intp)
        last_micro = 0.0

        for t in range(T + 1):
            step_t0 = time.perf_counter()
            eps = _eps_at(cfg, step_counter, total_steps)
            active = [e for e in episodes if not e.stopped]
            states = np.stack([e.state for e in active]) if active else np.zeros((0, state_dim))
            acting, actions, pending = _act(g, cfg, episodes, states, agent.qnet, eps,
                                            rng_eps, timestep_for_fixed=t)
            for p in pending:
                if not p["terminal"]:
                    e = p["ep"]
                    e.state = rl.state_static(g, e.frontier, p["s"])
                    p["s_next"] = e.state.copy()
            plan = build_plan(g, _episodes_for_plan(episodes))
            hgnn_loss = None
            for beta in range(cfg.inner_rounds):
                hgnn_loss = _train_step(params, opt, g, plan, ep_nodes, train_rows, cfg,
                                        seed=_derive_seed(cfg.seed, 30, k, t, beta))
            _, micro, macro = _forward_metrics(params, g, plan, ep_nodes, split, cfg)
            last_micro = micro
            reward = rl.compute_reward(agent.history, micro)
            q_loss = None
            if cfg.fixed_path is None:
                _push_transitions(agent, pending, reward)
                q_loss = agent.maybe_update(cfg.dqn_batch, rng_dqn)
                update_opportunities += 1
            step_counter += 1
            report.steps.append(StepRecord(
                round=k, timestep=t, acting_nodes=acting, actions=actions,
                reward=reward, micro_f1=micro, macro_f1=macro,
                q_loss=q_loss, hgnn_loss=hgnn_loss,
                wall_ms=1000 * (time.perf_counter() - step_t0),
            ))
        design_wall_ms += 1000 * (time.perf_counter() - round_t0)
        report.rounds.append(RoundRecord(
            round=k, val_metric=last_micro,
            nodes=[int(n) for n in ep_nodes],
            paths=[e.path.relations for e in episodes],
        ))
        if last_micro > best_metric:
            best_metric = last_micro
            best_params = _clone_params(params)

    report.meta = {
        "dqn_update_opportunities": update_opportunities,
        "hgnn_reinits": reinits,
        "design_wall_ms": design_wall_ms,
        "best_val_metric": best_metric,
        "final_eps": _eps_at(cfg, step_counter, total_steps),
    }
    return best_params, agent, report


# ---------------------------------------------------------------------------
# Algorithm variant 2: persistent network, one timestep per round


def run_rl_hgnn_pp(cfg: TrainConfig, g: HinGraph, split: DataSplit):
    """Fast loop: timestep t = (k mod T) + 1, one optimizer step and one DQN
    update per round, states from the normalised current representations."""
    cfg.validate()
    if cfg.variant != "rl-hgnn-pp":
        raise ValueError("config variant must be rl-hgnn-pp")
    K, T = cfg.resolved_rounds(), cfg.max_timesteps
    agent = _make_agent(g, cfg, split, cfg.hidden_dim, with_normalizer=True)
    rng_batch = np.random.default_rng(_derive_seed(cfg.seed, 1))
    rng_eps = np.random.default_rng(_derive_seed(cfg.seed, 2))
    rng_dqn = np.random.default_rng(_derive_seed(cfg.seed, 3))
    cursor = _BatchCursor(split.train, rng_batch)
    params = nn.init_params(g.schema, g.num_classes, T, cfg.hidden_dim, cfg.heads,
                            cfg.dropout, seed=_derive_seed(cfg.seed, 21))
    opt = nn.init_adam(params.all_vars(), cfg.learning_rate, cfg.weight_decay)
    report = EpisodeReport(variant=cfg.variant, num_actions=action_space_size(g.schema))
    hgnn_steps = 0
    update_opportunities = 0
    best_params = None
    best_metric = -1.0
    design_wall_ms = 0.0

    episodes: list[_Ep] = []
    ep_nodes = np.zeros(0, dtype=np.int64)
    train_rows = np.zeros(0, dtype=np.intp)
    norm_states: np.ndarray | None = None  # per-episode state used at the current round
    cycle_t0 = 0.0

    for k in range(K):
        t = (k % T) + 1
        step_t0 = time.perf_counter()
        if t == 1:
            cycle_t0 = step_t0
            batch = cursor.draw(cfg.node_batch)
            ep_nodes = np.unique(np.concatenate([batch, split.validation]))
            episodes = _fresh_episodes(g, ep_nodes)
            node_row = {int(n): i for i, n in enumerate(ep_nodes)}
            train_rows = np.asarray([node_row[int(n)] for n in batch], dtype=np.intp)
            h0, _ = nn.project_attributes(
                params, g, [(g.target_type, int(n)) for n in ep_nodes])
            reps = h0.value  # row i aligns with episode i
            norm_states = agent.normalizer.transform(reps)
        eps = _eps_at(cfg, k, K)
        active_idx = [i for i, e in enumerate(episodes) if not e.stopped]
        states = norm_states[active_idx] if active_idx else np.zeros((0, cfg.hidden_dim))
        acting, actions, pending = _act(g, cfg, episodes, states, agent.qnet, eps,
                                        rng_eps, timestep_for_fixed=t - 1)
        plan = build_plan(g, _episodes_for_plan(episodes))

        # recorded pass for the optimizer step; clean pass for states/metrics
        fwd = nn.hgnn_forward(params, g, plan, mode="train",
                              seed=_derive_seed(cfg.seed, 31, k),
                              messages_from_target=cfg.messages_from_target)
        probs = nn.classify(params, fwd.outputs)
        loss = nn.cross_entropy(probs, g.labels[ep_nodes], train_rows)
        reps, micro, macro = _forward_metrics(params, g, plan, ep_nodes, split, cfg)
        reward = rl.compute_reward(agent.history, micro)

        norm_states = agent.normalizer.transform(reps)
        row_of = {e.node[1]: i for i, e in enumerate(episodes)}
        for p in pending:
            if not p["terminal"]:
                p["s_next"] = norm_states[row_of[p["ep"].node[1]]].copy()
                if t == T:
                    p["terminal"] = True
        q_loss = None
        if cfg.fixed_path is None:
            _push_transitions(agent, pending, reward)
            q_loss = agent.maybe_update(cfg.dqn_batch, rng_dqn)
            update_opportunities += 1

        grads = nn.backward(loss, params.all_vars())
        nn.optimizer_step(params.all_vars(), grads, opt)
        hgnn_steps += 1

        report.steps.append(StepRecord(
            round=k, timestep=t, acting_nodes=acting, actions=actions,
            reward=reward, micro_f1=micro, macro_f1=macro,
            q_loss=q_loss, hgnn_loss=float(loss.value),
            wall_ms=1000 * (time.perf_counter() - step_t0),
        ))
        if t == T or k == K - 1:
            design_wall_ms += 1000 * (time.perf_counter() - cycle_t0)
            report.rounds.append(RoundRecord(
                round=k // T, val_metric=micro,
                nodes=[int(n) for n in ep_nodes],
                paths=[e.path.relations for e in episodes],
            ))
            if micro > best_metric:
                best_metric = micro
                best_params = _clone_params(params)

    report.meta = {
        "dqn_update_opportunities": update_opportunities,
        "hgnn_steps": hgnn_steps,
        "design_wall_ms": design_wall_ms,
        "best_val_metric": best_metric,
        "final_eps": _eps_at(cfg, K, K),
    }
    return best_params, agent, report


def _clone_params(params: nn.HgnnParams) -> nn.HgnnParams:
    from . import autodiff as ad

    return nn.HgnnParams(
        schema=params.schema,
        projections={t: ad.param(v.value.copy()) for t, v in params.projections.items()},
        layer_w=[ad.param(v.value.copy()) for v in params.layer_w],
        layer_attn_src=[ad.param(v.value.copy()) for v in params.layer_attn_src],
        layer_attn_dst=[ad.param(v.value.copy()) for v in params.layer_attn_dst],
        classifier_w=ad.param(params.classifier_w.value.copy()),
        classifier_b=ad.param(params.classifier_b.value.copy()),
        d=params.d,
        heads=params.heads,
        num_classes=params.num_classes,
        dropout=params.dropout,
        seed=params.seed,
    )


def run(cfg: TrainConfig, g: HinGraph, split: DataSplit):
    return run_rl_hgnn(cfg, g, split) if cfg.variant == "rl-hgnn" else run_rl_hgnn_pp(cfg, g, split)


# ---------------------------------------------------------------------------
# Greedy inference with a trained agent


def design_episodes_greedy(
    params: nn.HgnnParams,
    agent: rl.DqnAgent,
    g: HinGraph,
    cfg: TrainConfig,
    nodes: np.ndarray,
) -> list[Episode]:
    """Design meta-paths for `nodes` with the greedy policy (no exploration)."""
    episodes = _fresh_episodes(g, nodes)
    frozen = replace(cfg, eps_start=0.0, eps_end=0.0)
    rng = np.random.default_rng(0)
    if cfg.variant == "rl-hgnn":
        state_dim = rl.static_state_dim(g)
        for e in episodes:
            e.state = rl.initial_state_static(g, e.node, state_dim)
        for t in range(cfg.max_timesteps + 1):
            active = [e for e in episodes if not e.stopped]
            if not active:
                break
            states = np.stack([e.state for e in active])
            _, _, pending = _act(g, frozen, episodes, states, agent.qnet, 0.0, rng,
                                 timestep_for_fixed=t)
            for p in pending:
                if not p["terminal"]:
                    e = p["ep"]
                    e.state = rl.state_static(g, e.frontier, p["s"])
    else:
        h0, _ = nn.project_attributes(params, g, [(g.target_type, int(n)) for n in nodes])
        reps = h0.value
        for t in range(1, cfg.max_timesteps + 1):
            active_idx = [i for i, e in enumerate(episodes) if not e.stopped]
            if not active_idx:
                break
            states = agent.normalizer.apply(reps)[active_idx] if agent.normalizer \
                else reps[active_idx]
            _act(g, frozen, episodes, states, agent.qnet, 0.0, rng, timestep_for_fixed=t - 1)
            plan = build_plan(g, _episodes_for_plan(episodes))
            fwd = nn.hgnn_forward(params, g, plan, mode="eval",
                                  messages_from_target=cfg.messages_from_target)
            reps = fwd.outputs.value
    return _episodes_for_plan(episodes)


def predict(
    params: nn.HgnnParams,
    agent: rl.DqnAgent,
    g: HinGraph,
    cfg: TrainConfig,
    nodes: np.ndarray,
) -> np.ndarray:
    """Greedy-designed episodes + eval-mode forward; predictions per node id."""
    nodes = np.asarray(nodes)
    episodes = design_episodes_greedy(params, agent, g, cfg, nodes)
    plan = build_plan(g, episodes)
    fwd = nn.hgnn_forward(params, g, plan, mode="eval",
                          messages_from_target=cfg.messages_from_target)
    probs = nn.classify(params, fwd.outputs)
    preds = np.zeros(g.num_nodes[g.target_type], dtype=np.int64)
    preds[nodes] = np.argmax(probs.value, axis=1)
    return preds


# ---------------------------------------------------------------------------
# Reporting


def action_report(report: EpisodeReport, g: HinGraph) -> ActionStats:
    """Action ratios and the meta-path table of the best-validation round."""
    best = report.best_round()
    if report.variant == "rl-hgnn":
        in_round = [s for s in report.steps if s.round == best.round]
    else:
        T = max(s.timestep for s in report.steps)
        in_round = [s for s in report.steps if s.round // T == best.round]
    schema = g.schema
    names = [r.name for r in schema.relation_types] + ["STOP"]
    per_t: dict[int, dict[str, float]] = {}
    for s in in_round:
        if not s.actions:
            continue
        freq: dict[str, float] = {}
        for a in s.actions:
            freq[names[a]] = freq.get(names[a], 0.0) + 1.0
        per_t[s.timestep] = {k: v / len(s.actions) for k, v in freq.items()}
    counts: dict[tuple[str, ...], int] = {}
    stop0 = 0
    for rels in best.paths:
        if len(rels) == 0:
            stop0 += 1
        else:
            counts[rels] = counts.get(rels, 0) + 1
    total = max(1, len(best.paths))
    table = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    path_table = [
        (MetaPath(g.target_type, rels).to_arrow(schema), c / total) for rels, c in table
    ]
    return ActionStats(
        best_round=best.round,
        per_timestep=per_t,
        path_table=path_table,
        stop_at_zero_fraction=stop0 / total,
    )


# ---------------------------------------------------------------------------
# Benchmarks


def random_legal_episodes(
    g: HinGraph,
    nodes: np.ndarray,
    length: int,
    seed: int,
    fan_out_cap: int | None = None,
) -> list[Episode]:
    """Uniform random legal meta-paths of (up to) the given length."""
    rng = np.random.default_rng(seed)
    episodes = []
    for local in nodes:
        node = (g.target_type, int(local))
        path = MetaPath(g.target_type)
        frontier = Frontier.initial(node)
        for _ in range(length):
            legal = g.schema.relations_from(path.end_type(g.schema))
            if not legal:
                break
            rel = legal[int(rng.integers(len(legal)))].name
            nxt = expand_frontier(g, frontier, rel, fan_out_cap, seed)
            if len(nxt.reached) == 0:
                break
            path = extend_path(path, rel, g.schema)
            frontier = nxt
        episodes.append(Episode(node, path, frontier))
    return episodes


def bench_aggregation(
    g: HinGraph,
    cfg: TrainConfig,
    timesteps: list[int],
    episodes_per_t: int | None = None,
    seed: int = 0,
) -> dict[int, AggregationStats]:
    """Naive vs merged step counts for random legal episodes at each T.

    Start nodes are drawn with replacement: training revisits nodes across
    rounds, and repeated aggregation demand is exactly the workload the
    merge removes. Counts are per episode batch.
    """
    n_target = g.num_nodes[g.target_type]
    n = episodes_per_t or cfg.node_batch
    rng = np.random.default_rng(seed)
    out: dict[int, AggregationStats] = {}
    for T in timesteps:
        if T < 1:
            raise ValueError("timesteps must be >= 1")
        starts = np.sort(rng.integers(0, n_target, size=n))
        eps = random_legal_episodes(g, starts, T, seed=_derive_seed(seed, T),
                                    fan_out_cap=cfg.fan_out_cap)
        out[T] = plan_stats(naive_plan(g, eps), build_plan(g, eps))
    return out


def bench_runtime(cfg: TrainConfig, g: HinGraph, split: DataSplit, repeats: int = 3) -> dict:
    """Wall time of the meta-path design phase for both variants.

    The design phase is everything needed to produce one complete designed
    batch: a full round for the base variant (including its B inner training
    rounds) and a full T-round cycle for the fast variant.
    """
    results: dict[str, list[float]] = {"rl-hgnn": [], "rl-hgnn-pp": []}
    for variant in results:
        for i in range(repeats):
            run_cfg = replace(cfg, variant=variant, seed=_derive_seed(cfg.seed, i))
            _, _, report = run(run_cfg, g, split)
            results[variant].append(report.meta["design_wall_ms"])
    mean_base = float(np.mean(results["rl-hgnn"]))
    mean_pp = float(np.mean(results["rl-hgnn-pp"]))
    return {
        "rl-hgnn_ms": results["rl-hgnn"],
        "rl-hgnn-pp_ms": results["rl-hgnn-pp"],
        "mean_rl-hgnn_ms": mean_base,
        "mean_rl-hgnn-pp_ms": mean_pp,
        "ratio": mean_pp / mean_base if mean_base > 0 else float("nan"),
    }
