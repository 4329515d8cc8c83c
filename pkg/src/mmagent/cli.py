"""Command-line entry point: ``mmagent <subcommand>``.

Every stage reads and writes plain files (JSON/JSONL/CSV/Markdown), so the
stages chain: simgen -> synth -> rollout -> rft / rl-prep -> eval -> report.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any

import yaml

from .backends import ChatBackend, RecordedBackend
from .evaluation import BenchmarkSpec, compare_reports, evaluate, load_benchmark, tool_call_histogram
from .evaluation import write_histogram_csv, write_per_trajectory_csv
from .grammar import render_system_prompt
from .judge import ExactMatchJudge, Judgment
from .react import LogicalClock, RolloutConfig, run_group_batch, write_manifest
from .tools.cache import RecordedToolBackend, ResponseCache
from .tools.gateway import ToolGateway
from .trajectory import Difficulty, read_tasks, read_trajectories, write_jsonl

log = logging.getLogger("mmagent")

POLICIES = ("oracle", "noisy", "never", "unknown", "chat")


class CliError(Exception):
    pass


def load_config(path: str | None) -> dict[str, Any]:
    if not path:
        return {}
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(data, dict):
        raise CliError(f"config {path} must be a mapping")
    return data


class Runtime:
    """Backends for one invocation, built from flags and the config file."""

    def __init__(self, args: argparse.Namespace) -> None:
        self.args = args
        self.config = load_config(args.config)
        self.backend = args.backend
        self._world = None
        cache_dir = self.config.get("cache_dir", ".mmagent-cache")
        self.cache = ResponseCache(cache_dir) if self.backend == "recorded" or args.record else None

    # -- sim ---------------------------------------------------------------

    @property
    def world(self):
        from .simweb import SimWorld

        if self._world is None:
            path = getattr(self.args, "world", None) or self.config.get("world")
            if not path:
                raise CliError("the sim backend needs --world or a 'world' entry in the config")
            self._world = SimWorld.load(path)
        return self._world

    # -- models ------------------------------------------------------------

    def _chat(self, role: str) -> ChatBackend:
        ep = self.config.get("endpoints", {}).get(role)
        if not ep:
            raise CliError(f"config has no endpoints.{role}")
        key = os.environ.get(ep.get("api_key_env", "OPENAI_API_KEY"))
        return ChatBackend(ep["base_url"], ep["model"], key)

    def _wrap(self, inner: Any, role: str) -> Any:
        if self.backend == "recorded":
            return RecordedBackend(inner, self.cache, "replay", namespace=role)
        if self.args.record:
            return RecordedBackend(inner, self.cache, "record", namespace=role)
        return inner

    def llm(self, role: str) -> Any:
        if self.backend == "sim":
            from .sim_agents import SimImageJudge, SimTeacher, SimWeakModel

            w = self.world
            popularity = int(self.config.get("weak_model_popularity", 10))
            return {
                "teacher": lambda: SimTeacher(w),
                "summarizer": lambda: SimTeacher(w),
                "weak_lvlm": lambda: SimWeakModel(w, sees_images=True, popularity=popularity),
                "weak_llm": lambda: SimWeakModel(w, sees_images=False, popularity=popularity),
                "image_judge": lambda: SimImageJudge(w),
                "judge": ExactMatchJudge,
            }[role]()
        if self.backend == "recorded":
            return self._wrap(None, role)
        return self._wrap(self._chat(role), role)

    def policy(self, name: str, tasks: list) -> Any:
        from .sim_agents import ConstantAnswerPolicy, NeverAnswerPolicy, NoisyOraclePolicy, OraclePolicy

        if name == "chat":
            return self._wrap(None if self.backend == "recorded" else self._chat("policy"), "policy")
        if name == "never":
            return NeverAnswerPolicy()
        if name == "unknown":
            return ConstantAnswerPolicy("unknown")
        if name == "oracle":
            return OraclePolicy(self.world, tasks)
        return NoisyOraclePolicy(self.world, tasks)

    # -- tools -------------------------------------------------------------

    def tools(self) -> ToolGateway:
        if self.backend == "sim":
            from .simweb import SimWebBackend

            inner: Any = SimWebBackend(self.world)
        elif self.backend == "recorded":
            inner = None
        else:
            from .tools.live import LiveConfig, LiveWebBackend

            live = LiveConfig(**self.config.get("live", {}))
            inner = LiveWebBackend.from_env(self.llm("summarizer"), live)
        if self.backend == "recorded":
            return ToolGateway(RecordedToolBackend(None, self.cache, "replay"))
        if self.args.record:
            return ToolGateway(RecordedToolBackend(inner, self.cache, "record"))
        return ToolGateway(inner)

    def kb(self):
        from .synthesis import OfflinePageIndex, SimKnowledgeBase, WikidataKnowledgeBase

        if self.backend in ("sim", "recorded"):
            return SimKnowledgeBase(self.world)
        kb_cfg = self.config.get("kb", {})
        if "pages_dir" not in kb_cfg:
            raise CliError("live synthesis needs kb.pages_dir (an offline page dump)")
        return WikidataKnowledgeBase(
            OfflinePageIndex(kb_cfg["pages_dir"]),
            kb_cfg.get("endpoint", "https://query.wikidata.org/sparql"),
            instance_of=kb_cfg.get("instance_of"),
        )

    # -- config blocks -----------------------------------------------------

    def rollout_config(self, **overrides: Any) -> RolloutConfig:
        d = dict(self.config.get("rollout", {}))
        d.update({k: v for k, v in overrides.items() if v is not None})
        return RolloutConfig.from_dict(d)

    def grpo_config(self):
        from .training import GrpoConfig

        return GrpoConfig.from_dict(self.config.get("grpo", {}))

    def clock_factory(self):
        # simulated runs use a logical clock so wall times are reproducible
        return LogicalClock if self.backend != "live" else None

    def backend_ids(self, **named: Any) -> dict[str, str]:
        ids = {"mode": self.backend}
        ids.update({k: getattr(v, "name", type(v).__name__) for k, v in named.items()})
        return ids


def _out(path: str) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _dump_json(path: Path, data: Any) -> None:
    path.write_text(json.dumps(data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# Subcommands


def cmd_simgen(rt: Runtime, args: argparse.Namespace) -> int:
    from .simweb import WorldParams, generate_world

    params = WorldParams(**{**rt.config.get("simgen", {}), "n_entities": args.entities})
    if args.rarity is not None:
        params = WorldParams(**{**asdict(params), "rarity_fraction": args.rarity})
    world = generate_world(args.seed, args.entities, params)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    world.save(args.out)
    gate = len(world.gate_passing(params.max_sitelinks, params.min_statements))
    print(f"wrote {args.out}: {len(world.entities)} entities, {gate} pass the rarity gate")
    return 0


def cmd_synth(rt: Runtime, args: argparse.Namespace) -> int:
    from .synthesis import FilterModels, filter_task, level_counts, level_schedule, select_seeds, synthesize_dataset

    out = _out(args.out)
    seeds_cfg = rt.config.get("seeds", {})
    kb = rt.kb()
    seeds = select_seeds(kb, int(seeds_cfg.get("max_sitelinks", 10)), int(seeds_cfg.get("min_statements", 20)), limit=10**6)
    if args.level == "mix":
        mix = {Difficulty(k): int(v) for k, v in rt.config.get("mix", {"easy": 4, "medium": 3, "hard": 3}).items()}
        levels = level_schedule(level_counts(args.n, mix))
    else:
        levels = [Difficulty(args.level)] * args.n
    excluded: set[str] = set()
    if args.exclude_seeds:
        excluded = {line.strip() for line in Path(args.exclude_seeds).read_text(encoding="utf-8").splitlines() if line.strip()}
    teacher = rt.llm("teacher")
    models = FilterModels(rt.llm("weak_lvlm"), rt.llm("weak_llm"), rt.llm("image_judge"), rt.llm("judge"))
    accept = None
    if args.count_kept:
        accept = lambda rec: filter_task(rec, models, short_circuit=args.short_circuit)[1]  # noqa: E731
    result = synthesize_dataset(
        seeds, levels, teacher, kb, accept=accept, exclude_seed_ids=excluded, parallelism=args.parallelism, strict=False
    )
    if not args.count_kept:
        for rec in result.records:
            filter_task(rec, models, short_circuit=args.short_circuit)
    kept = [r for r in result.records if r.kept]
    write_jsonl(out / "records.jsonl", result.records)
    write_jsonl(out / "tasks.jsonl", [r.final_task for r in kept])
    write_jsonl(out / "failures.jsonl", [{"seed": s, "stage": st, "error": msg} for s, st, msg in result.failures])
    (out / "seed_ids.txt").write_text("".join(f"{r.seed.entity_id}\n" for r in result.records), encoding="utf-8")
    write_manifest(
        out / "manifest.json",
        command="synth",
        config={"n": args.n, "level": args.level, "seeds": seeds_cfg, "short_circuit": args.short_circuit, "count_kept": args.count_kept},
        backends=rt.backend_ids(teacher=teacher, **asdict_models(models)),
        seed=args.seed,
    )
    print(f"synthesized {len(result.records)} records, kept {len(kept)}, {len(result.failures)} seed failures")
    return 0


def asdict_models(models) -> dict[str, Any]:
    return {"weak_lvlm": models.weak_lvlm, "weak_llm": models.weak_llm, "image_judge": models.image_judge, "judge": models.judge}


def cmd_rollout(rt: Runtime, args: argparse.Namespace) -> int:
    out = _out(args.out)
    tasks = read_tasks(args.tasks)
    config = rt.rollout_config(group_size=args.group_size, max_steps=args.max_steps)
    policy = rt.policy(args.policy, tasks)
    tools = rt.tools()
    trajs = []
    for group in run_group_batch(tasks, policy, tools, config, args.parallelism, seed=args.seed, clock_factory=rt.clock_factory()):
        trajs.extend(group.trajectories)
    if args.parallelism > 1:
        order = {t.task_id: i for i, t in enumerate(tasks)}
        trajs.sort(key=lambda t: (order[t.task_id], t.sample_index))
    write_jsonl(out / "trajectories.jsonl", trajs)
    write_manifest(out / "manifest.json", command="rollout", config=asdict(config), backends=rt.backend_ids(policy=policy, tools=tools.backend), seed=args.seed)
    answered = sum(t.answered for t in trajs)
    print(f"{len(trajs)} trajectories, {answered} answered")
    return 0


def _judge_all(rt: Runtime, tasks: dict, trajs: list) -> dict[str, Judgment]:
    from .evaluation import judge_trajectory

    judge = rt.llm("judge")
    judgments: dict[str, Judgment] = {}
    for t in trajs:
        j, err = judge_trajectory(tasks[t.task_id], t, judge)
        if err:
            log.warning("judge failed for %s: %s; counted incorrect", t.ref, err)
            j = Judgment(None, f"judge backend failure: {err}", False, 0, indeterminate=True)
        if j is not None:
            judgments[t.ref] = j
    return judgments


def cmd_rft(rt: Runtime, args: argparse.Namespace) -> int:
    from .training import export_sft, rejection_filter

    out = _out(args.out)
    tasks = {t.task_id: t for t in read_tasks(args.tasks)}
    trajs = read_trajectories(args.trajectories)
    judgments = _judge_all(rt, tasks, trajs)
    kept, reasons = rejection_filter(trajs, judgments)
    config = rt.rollout_config()
    write_jsonl(out / "judgments.jsonl", [{"trajectory_ref": ref, **j.to_dict()} for ref, j in judgments.items()])
    write_jsonl(out / "rejections.jsonl", [{"trajectory_ref": ref, "reason": why} for ref, why in reasons.items()])
    write_jsonl(out / "kept_trajectories.jsonl", kept)
    write_jsonl(out / "sft_dataset.jsonl", export_sft(kept, tasks, render_system_prompt(config.current_date)))
    print(f"kept {len(kept)} of {len(trajs)} trajectories")
    return 0


def cmd_rl_prep(rt: Runtime, args: argparse.Namespace) -> int:
    from .training import build_rl_batch

    out = _out(args.out)
    task_list = read_tasks(args.tasks)
    tasks = {t.task_id: t for t in task_list}
    grpo = rt.grpo_config()
    config = rt.rollout_config(group_size=args.group_size or grpo.group_size)
    policy = rt.policy(args.policy, task_list)
    tools = rt.tools()
    groups = list(run_group_batch(task_list, policy, tools, config, args.parallelism, seed=args.seed, clock_factory=rt.clock_factory()))
    if args.parallelism > 1:
        order = {t.task_id: i for i, t in enumerate(task_list)}
        groups.sort(key=lambda g: order[g.task_id])
    trajs = [t for g in groups for t in g.trajectories]
    judgments = _judge_all(rt, tasks, trajs)
    items = build_rl_batch(groups, judgments, grpo)
    write_jsonl(out / "trajectories.jsonl", trajs)
    write_jsonl(out / "judgments.jsonl", [{"trajectory_ref": ref, **j.to_dict()} for ref, j in judgments.items()])
    write_jsonl(out / "rl_batch.jsonl", items)
    write_manifest(
        out / "manifest.json",
        command="rl-prep",
        config={"rollout": asdict(config), "grpo": asdict(grpo)},
        backends=rt.backend_ids(policy=policy, tools=tools.backend),
        seed=args.seed,
    )
    print(f"{len(groups)} groups, {len(items)} items, {sum(not i.in_loss for i in items)} excluded from the loss")
    return 0


def cmd_eval(rt: Runtime, args: argparse.Namespace) -> int:
    out = _out(args.out)
    spec = BenchmarkSpec(args.name or Path(args.benchmark).stem, args.benchmark, args.image_only, args.limit, args.seed)
    tasks = load_benchmark(spec)
    config = rt.rollout_config(max_steps=args.max_steps)
    policy = rt.policy(args.policy, tasks)
    tools = rt.tools()
    report, trajs = evaluate(
        tasks, policy, tools, config, rt.llm("judge"), name=spec.name, parallelism=args.parallelism, seed=args.seed, clock_factory=rt.clock_factory()
    )
    report.write(out)
    write_jsonl(out / "trajectories.jsonl", trajs)
    print(f"{spec.name}: accuracy {report.accuracy:.4f} over {report.n_evaluated} tasks")
    return 0


def cmd_report(rt: Runtime, args: argparse.Namespace) -> int:
    out = _out(args.out)
    trajs = [t for path in args.trajectories for t in read_trajectories(path)]
    hist = tool_call_histogram(trajs)
    write_histogram_csv(hist, out / "tool_calls.csv")
    write_per_trajectory_csv(hist, out / "tool_calls_per_trajectory.csv")
    _dump_json(out / "tool_calls.json", hist.to_dict())
    if args.compare:
        reports = {}
        for item in args.compare:
            stage, _, path = item.partition("=")
            if not path:
                raise CliError(f"--compare expects stage=path/to/report.json, got {item!r}")
            reports[stage] = json.loads(Path(path).read_text(encoding="utf-8"))
        (out / "comparison.md").write_text(compare_reports(reports), encoding="utf-8")
    print(f"{hist.n_trajectories} trajectories, {hist.total} tool calls: " + ", ".join(f"{k}={v}" for k, v in hist.totals.items()))
    return 0


# --------------------------------------------------------------------------


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommands repeat the global flags without defaults, so a flag given
    # before the subcommand is not reset by the subparser
    def d(value: Any) -> Any:
        return argparse.SUPPRESS if suppress else value

    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--config", default=d(None), help="YAML or JSON config file")
    g.add_argument("--backend", choices=("live", "sim", "recorded"), default=d("sim"))
    g.add_argument("--seed", type=int, default=d(0))
    g.add_argument("--parallelism", type=int, default=d(1))
    g.add_argument("--record", action="store_true", default=d(False), help="store every backend response in the cache directory")
    g.add_argument("--world", default=d(None), help="sim world JSON (overrides the config entry)")
    g.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return g


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    p = argparse.ArgumentParser(
        prog="mmagent", description="Multimodal search-agent data and training toolkit.", parents=[_global_flags(suppress=False)]
    )
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simgen", parents=[common], help="generate a simulated web")
    s.add_argument("--entities", type=int, default=200)
    s.add_argument("--rarity", type=float, default=None, help="fraction of entities passing the rarity gate")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simgen)

    s = sub.add_parser("synth", parents=[common], help="synthesize and filter tasks")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--level", choices=("mix", "easy", "medium", "hard", "benchmark"), default="mix")
    s.add_argument("--exclude-seeds", help="file of seed entity ids to skip, one per line")
    s.add_argument("--count-kept", action="store_true", help="keep going until N tasks pass the filters")
    s.add_argument("--short-circuit", action="store_true", help="stop filtering at the first rejection")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("rollout", parents=[common], help="sample trajectories")
    s.add_argument("--tasks", required=True)
    s.add_argument("--policy", choices=POLICIES, default="oracle")
    s.add_argument("--group-size", type=int, default=1)
    s.add_argument("--max-steps", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_rollout)

    s = sub.add_parser("rft", parents=[common], help="judge, rejection-filter and export SFT data")
    s.add_argument("--tasks", required=True)
    s.add_argument("--trajectories", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_rft)

    s = sub.add_parser("rl-prep", parents=[common], help="group rollouts, rewards, advantages and the RL batch")
    s.add_argument("--tasks", required=True)
    s.add_argument("--policy", choices=POLICIES, default="noisy")
    s.add_argument("--group-size", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_rl_prep)

    s = sub.add_parser("eval", parents=[common], help="evaluate a policy on a benchmark")
    s.add_argument("--benchmark", required=True)
    s.add_argument("--name")
    s.add_argument("--image-only", action="store_true")
    s.add_argument("--limit", type=int)
    s.add_argument("--policy", choices=POLICIES, default="oracle")
    s.add_argument("--max-steps", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", parents=[common], help="tool-call histograms and stage comparisons")
    s.add_argument("--trajectories", nargs="+", required=True)
    s.add_argument("--compare", nargs="*", metavar="STAGE=REPORT_JSON")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.parallelism < 1:
        print("error: --parallelism must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(Runtime(args), args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
