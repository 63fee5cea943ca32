"""Command-line entry points: train, eval, report-paths, bench-agg,
bench-runtime and gen-synth."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import agent as rl
from . import model as nn
from . import pipeline as pl
from .aggplan import build_plan, naive_plan, plan_stats
from .hin import DataSplit, HinSchema, RelationType, load_hin, save_hin, split_nodes
from .synth import SyntheticSpec, generate_planted_hin


def _load_config(path: str | None, variant: str | None) -> pl.TrainConfig:
    doc = {}
    if path:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    if variant:
        doc["variant"] = variant
    return pl.TrainConfig.from_dict(doc)


def _save_split(split: DataSplit, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(
            {
                "train": split.train.tolist(),
                "validation": split.validation.tolist(),
                "test": split.test.tolist(),
            },
            f,
        )


def _load_split(path: Path) -> DataSplit:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    return DataSplit(
        train=np.asarray(doc["train"], dtype=np.int64),
        validation=np.asarray(doc["validation"], dtype=np.int64),
        test=np.asarray(doc["test"], dtype=np.int64),
    )


def _report_to_json(report: pl.EpisodeReport, schema: HinSchema, target_type: str) -> dict:
    return {
        "variant": report.variant,
        "num_actions": report.num_actions,
        "schema": {
            "node_types": list(schema.node_types),
            "relation_types": [[r.name, r.src, r.dst] for r in schema.relation_types],
            "attribute_dims": dict(schema.attribute_dims),
            "target_type": target_type,
        },
        "meta": report.meta,
        "steps": [
            {
                "round": s.round,
                "timestep": s.timestep,
                "acting_nodes": s.acting_nodes,
                "actions": s.actions,
                "reward": s.reward,
                "micro_f1": s.micro_f1,
                "macro_f1": s.macro_f1,
                "q_loss": s.q_loss,
                "hgnn_loss": s.hgnn_loss,
                "wall_ms": s.wall_ms,
            }
            for s in report.steps
        ],
        "rounds": [
            {
                "round": r.round,
                "val_metric": r.val_metric,
                "nodes": r.nodes,
                "paths": [list(p) for p in r.paths],
            }
            for r in report.rounds
        ],
    }


def _report_from_json(doc: dict) -> tuple[pl.EpisodeReport, HinSchema, str]:
    report = pl.EpisodeReport(variant=doc["variant"], num_actions=doc["num_actions"])
    for s in doc["steps"]:
        report.steps.append(pl.StepRecord(
            round=s["round"], timestep=s["timestep"], acting_nodes=s["acting_nodes"],
            actions=s["actions"], reward=s["reward"], micro_f1=s["micro_f1"],
            macro_f1=s["macro_f1"], q_loss=s["q_loss"], hgnn_loss=s["hgnn_loss"],
            wall_ms=s["wall_ms"],
        ))
    for r in doc["rounds"]:
        report.rounds.append(pl.RoundRecord(
            round=r["round"], val_metric=r["val_metric"], nodes=r["nodes"],
            paths=[tuple(p) for p in r["paths"]],
        ))
    report.meta = doc.get("meta", {})
    s = doc["schema"]
    schema = HinSchema(
        node_types=tuple(s["node_types"]),
        relation_types=tuple(RelationType(*r) for r in s["relation_types"]),
        attribute_dims={k: int(v) for k, v in s["attribute_dims"].items()},
    )
    return report, schema, s["target_type"]


def cmd_train(args) -> int:
    cfg = _load_config(args.config, args.variant)
    g = load_hin(args.graph, args.format)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    labelled = g.labelled_nodes()
    n_train = args.train_count or max(1, int(0.4 * len(labelled)))
    n_val = args.val_count or max(1, int(0.3 * len(labelled)))
    split = split_nodes(g, (n_train, n_val), args.split_seed)
    params, agent, report = pl.run(cfg, g, split)
    nn.save_params(params, out / "model.bin")
    rl.save_agent(agent, out / "agent.bin", eps_position=report.meta.get("final_eps", 0.0))
    _save_split(split, out / "split.json")
    with open(out / "config.json", "w", encoding="utf-8") as f:
        json.dump(cfg.to_dict(), f, indent=2)
    with open(out / "report.csv", "w", encoding="utf-8", newline="") as f:
        f.write(report.to_csv(include_wall=False))
    with open(out / "metrics.csv", "w", encoding="utf-8", newline="") as f:
        f.write(report.to_csv(include_wall=True))
    with open(out / "report.json", "w", encoding="utf-8") as f:
        json.dump(_report_to_json(report, g.schema, g.target_type), f)
    stats = pl.action_report(report, g)
    with open(out / "actions.txt", "w", encoding="utf-8") as f:
        f.write(stats.render() + "\n")
    print(f"best validation micro-F1: {report.meta['best_val_metric']:.4f}")
    print(f"run artifacts written to {out}")
    return 0


def cmd_eval(args) -> int:
    run_dir = Path(args.checkpoint)
    g = load_hin(args.graph, args.format)
    with open(run_dir / "config.json", "r", encoding="utf-8") as f:
        cfg = pl.TrainConfig.from_dict(json.load(f))
    params = nn.load_params(run_dir / "model.bin")
    agent = rl.load_agent(run_dir / "agent.bin")
    split = _load_split(run_dir / "split.json")
    nodes = split.test if len(split.test) else g.labelled_nodes()
    preds = pl.predict(params, agent, g, cfg, nodes)
    micro, macro = pl.evaluate_f1(preds, g.labels, nodes)
    print(f"test nodes: {len(nodes)}")
    print(f"micro-F1: {micro:.4f}")
    print(f"macro-F1: {macro:.4f}")
    return 0


def cmd_report_paths(args) -> int:
    run_dir = Path(args.run)
    with open(run_dir / "report.json", "r", encoding="utf-8") as f:
        report, schema, target_type = _report_from_json(json.load(f))
    best = report.best_round()
    names = [r.name for r in schema.relation_types] + ["STOP"]
    print(f"best round: {best.round} (validation micro-F1 {best.val_metric:.4f})")
    if report.variant == "rl-hgnn":
        in_round = [s for s in report.steps if s.round == best.round]
    else:
        T = max(s.timestep for s in report.steps)
        in_round = [s for s in report.steps if s.round // T == best.round]
    for s in in_round:
        if not s.actions:
            continue
        freq: dict[str, float] = {}
        for a in s.actions:
            freq[names[a]] = freq.get(names[a], 0.0) + 1.0
        shown = ", ".join(f"{k}={v / len(s.actions):.3f}" for k, v in sorted(freq.items()))
        print(f"  t={s.timestep}: {shown}")
    counts: dict[tuple[str, ...], int] = {}
    stop0 = 0
    for p in best.paths:
        if len(p) == 0:
            stop0 += 1
        else:
            counts[p] = counts.get(p, 0) + 1
    total = max(1, len(best.paths))
    print(f"stop-at-0: {100 * stop0 / total:.1f}%")
    print("meta-path table:")
    for rels, c in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        arrow = _arrow(schema, target_type, rels)
        print(f"  {100 * c / total:5.1f}%  {arrow}")
    return 0


def _arrow(schema: HinSchema, start: str, rels: tuple[str, ...]) -> str:
    parts = [start]
    for rel in rels:
        r = schema.relation(rel)
        parts.append(f"-{r.name}-> {r.dst}")
    return " ".join(parts)


def cmd_bench_agg(args) -> int:
    g = load_hin(args.graph, args.format)
    cfg = _load_config(args.config, None)
    timesteps = [int(x) for x in args.timesteps.split(",")]
    cap = None if args.uncapped else cfg.fan_out_cap
    export: dict = {"per_timestep": {}}
    print(f"{'T':>3} {'naive':>10} {'merged':>10} {'reduction':>10}")
    for T in timesteps:
        n = args.episodes or cfg.node_batch
        rng = np.random.default_rng(args.seed)
        starts = np.sort(rng.integers(0, g.num_nodes[g.target_type], size=n))
        episodes = pl.random_legal_episodes(g, starts, T, seed=args.seed + T, fan_out_cap=cap)
        nv = naive_plan(g, episodes)
        mg = build_plan(g, episodes)
        stats = plan_stats(nv, mg)
        print(f"{T:>3} {stats.step_count_naive:>10} {stats.step_count_merged:>10} "
              f"{stats.reduction_ratio:>10.3f}")
        export["per_timestep"][str(T)] = {
            "stats": stats.to_json(),
            "merged_plan": mg.to_json(),
            "naive_plan": nv.to_json(),
        }
    if args.export:
        with open(args.export, "w", encoding="utf-8") as f:
            json.dump(export, f)
        print(f"diagnostic plan export written to {args.export}")
    return 0


def _default_bench_graph(seed: int):
    spec = SyntheticSpec(
        node_counts={"Movie": 60, "Actor": 24, "Director": 10},
        relations=[("M-A", "Movie", "Actor"), ("A-M", "Actor", "Movie"),
                   ("M-D", "Movie", "Director")],
        out_degree={"M-A": 2, "A-M": 2, "M-D": 2},
        target_type="Movie",
        planted_path=("M-A",),
        num_classes=3,
        train_count=24,
        val_count=18,
        seed=seed,
    )
    return generate_planted_hin(spec)


def cmd_bench_runtime(args) -> int:
    cfg = _load_config(args.config, None)
    if args.graph:
        g = load_hin(args.graph, args.format)
        labelled = g.labelled_nodes()
        n_train = max(1, int(0.4 * len(labelled)))
        n_val = max(1, int(0.3 * len(labelled)))
        split = split_nodes(g, (n_train, n_val), cfg.seed)
    else:
        g, split = _default_bench_graph(cfg.seed)
    result = pl.bench_runtime(cfg, g, split, repeats=args.repeats)
    print(f"rl-hgnn design time (ms):    {result['rl-hgnn_ms']}")
    print(f"rl-hgnn-pp design time (ms): {result['rl-hgnn-pp_ms']}")
    print(f"mean ratio (pp / base):      {result['ratio']:.4f}")
    return 0


def cmd_gen_synth(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as f:
        spec = SyntheticSpec.from_dict(json.load(f))
    g, split = generate_planted_hin(spec)
    save_hin(g, args.out)
    _save_split(split, Path(str(args.out) + ".split.json"))
    print(f"wrote {args.out} ({sum(g.num_nodes.values())} nodes, "
          f"{sum(g.edge_count(r.name) for r in g.schema.relation_types)} edges)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rlhgnn")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a variant on a graph file")
    t.add_argument("--graph", required=True)
    t.add_argument("--variant", choices=["rl-hgnn", "rl-hgnn-pp"])
    t.add_argument("--config", help="JSON config mirroring TrainConfig")
    t.add_argument("--out", required=True)
    t.add_argument("--format", default="json-graph", choices=["json-graph", "csv-triples"])
    t.add_argument("--train-count", type=int)
    t.add_argument("--val-count", type=int)
    t.add_argument("--split-seed", type=int, default=0)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a saved run on its test split")
    e.add_argument("--checkpoint", required=True, help="run directory from train")
    e.add_argument("--graph", required=True)
    e.add_argument("--format", default="json-graph", choices=["json-graph", "csv-triples"])
    e.set_defaults(fn=cmd_eval)

    r = sub.add_parser("report-paths", help="meta-path table of the best round")
    r.add_argument("--run", required=True)
    r.set_defaults(fn=cmd_report_paths)

    b = sub.add_parser("bench-agg", help="naive vs merged aggregation counts")
    b.add_argument("--graph", required=True)
    b.add_argument("--timesteps", default="1,2,3,4")
    b.add_argument("--episodes", type=int)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--config")
    b.add_argument("--format", default="json-graph", choices=["json-graph", "csv-triples"])
    b.add_argument("--uncapped", action="store_true", help="disable the fan-out cap")
    b.add_argument("--export", help="write diagnostic plan JSON here")
    b.set_defaults(fn=cmd_bench_agg)

    br = sub.add_parser("bench-runtime", help="meta-path design wall time per variant")
    br.add_argument("--graph", help="graph file; a built-in synthetic graph when omitted")
    br.add_argument("--config")
    br.add_argument("--repeats", type=int, default=3)
    br.add_argument("--format", default="json-graph", choices=["json-graph", "csv-triples"])
    br.set_defaults(fn=cmd_bench_runtime)

    gs = sub.add_parser("gen-synth", help="generate a synthetic planted-path graph")
    gs.add_argument("--spec", required=True)
    gs.add_argument("--out", required=True)
    gs.set_defaults(fn=cmd_gen_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
