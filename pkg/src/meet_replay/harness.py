"""Seeded strategy sweeps, CSV learning curves and summary statistics."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .agent import Agent, AgentConfig, evaluate
from .envs import make_env

log = logging.getLogger(__name__)

CSV_HEADER = ["strategy", "seed", "step", "eval_return", "critic_loss", "mean_priority", "wall_secs"]
EVAL_SEED_OFFSET = 1_000_003


@dataclass
class ExperimentSpec:
    env: str = "pendulum"
    strategies: list[str] = field(default_factory=lambda: ["meet", "per", "uniform"])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    agent: AgentConfig = field(default_factory=AgentConfig)
    eval_interval: int = 1000
    eval_episodes: int = 10
    out: str | None = None
    record_timing: bool = False

    def __post_init__(self):
        if not self.strategies or not self.seeds:
            raise ValueError("strategy and seed lists must be non-empty")
        if self.eval_interval < 1 or self.eval_episodes < 1:
            raise ValueError("evaluation interval and episode count must be >= 1")
        make_env(self.env)
        for s in self.strategies:
            replace(self.agent, strategy=s)


@dataclass
class RunRecord:
    strategy: str
    seed: int
    step: int
    eval_return: float
    critic_loss: float
    mean_priority: float
    wall_secs: float = 0.0

    @property
    def failed(self) -> bool:
        return math.isnan(self.eval_return)


def eval_seed(seed: int) -> int:
    """Evaluation episodes depend on the run seed only, never on the strategy."""
    return EVAL_SEED_OFFSET + seed


def run_single(env_name: str, config: AgentConfig, eval_interval: int, eval_episodes: int, record_timing: bool = False):
    """Train one (strategy, seed) pair, evaluating at step 0, every interval and at the end."""
    env, eval_env = make_env(env_name), make_env(env_name)
    agent = Agent(config, env.obs_dim, env.action_dim, env.action_bound)
    start = time.perf_counter()
    records: list[RunRecord] = []
    last_loss = math.nan

    def record(step: int) -> None:
        n = agent.buffer.size
        mean_p = float(agent.buffer.priorities[:n].mean()) if n else math.nan
        ret = evaluate(agent.actor, eval_env, eval_episodes, eval_seed(config.seed))
        wall = time.perf_counter() - start if record_timing else 0.0
        records.append(RunRecord(config.strategy, config.seed, step, ret, last_loss, mean_p, wall))
        log.debug("%s seed %d step %d return %.1f", config.strategy, config.seed, step, ret)

    record(0)
    t = 0
    try:
        for t in range(1, config.steps + 1):
            diag = agent.train_iteration(env, t)
            if diag.learned:
                last_loss = diag.loss
            if t % eval_interval == 0 or t == config.steps:
                record(t)
    except (FloatingPointError, ValueError, RuntimeError) as exc:
        log.error("run %s/seed %d failed at step %d: %s", config.strategy, config.seed, t, exc)
        step = max(t, records[-1].step + 1)
        records.append(RunRecord(config.strategy, config.seed, step, math.nan, math.nan, math.nan, 0.0))
    return records


def _run_job(args):
    return run_single(*args)


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> list[RunRecord]:
    """Every (strategy, seed) pair in spec order; output order never depends on ``workers``."""
    jobs = [
        (spec.env, replace(spec.agent, strategy=s, seed=seed), spec.eval_interval, spec.eval_episodes, spec.record_timing)
        for s in spec.strategies
        for seed in spec.seeds
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = []
        for job in jobs:
            log.info("running %s seed %d", job[1].strategy, job[1].seed)
            results.append(_run_job(job))
    records = [r for series in results for r in series]
    if spec.out:
        write_csv(records, spec.out)
    return records


def _fmt(x: float) -> str:
    return repr(float(x))


def records_to_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in records:
        writer.writerow(
            [r.strategy, r.seed, r.step, _fmt(r.eval_return), _fmt(r.critic_loss), _fmt(r.mean_priority), _fmt(r.wall_secs)]
        )
    return buf.getvalue()


def write_csv(records, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(records_to_csv(records))


def read_csv(path) -> list[RunRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {reader.fieldnames}")
        return [
            RunRecord(
                row["strategy"],
                int(row["seed"]),
                int(row["step"]),
                float(row["eval_return"]),
                float(row["critic_loss"]),
                float(row["mean_priority"]),
                float(row["wall_secs"]),
            )
            for row in reader
        ]


@dataclass
class StrategySummary:
    strategy: str
    n_seeds: int
    final_mean: float
    final_std: float
    auc_mean: float
    peak: float
    failed_seeds: list[int] = field(default_factory=list)


def curve_auc(steps, returns) -> float:
    """Trapezoidal area under the curve divided by the step span."""
    steps = np.asarray(steps, dtype=np.float64)
    returns = np.asarray(returns, dtype=np.float64)
    if steps.size == 1 or steps[-1] == steps[0]:
        return float(returns.mean())
    area = np.sum((returns[1:] + returns[:-1]) * np.diff(steps)) / 2.0
    return float(area / (steps[-1] - steps[0]))


def summarize(records) -> dict[str, StrategySummary]:
    """Per-strategy final return (mean, population std over seeds), AUC and peak."""
    records = list(records)
    if not records:
        raise ValueError("no records to summarize")
    series: dict[str, dict[int, list[RunRecord]]] = {}
    for r in records:
        series.setdefault(r.strategy, {}).setdefault(r.seed, []).append(r)
    out = {}
    for strategy, by_seed in series.items():
        finals, aucs, curves, failed = [], [], [], []
        for seed, rows in by_seed.items():
            if any(r.failed for r in rows):
                failed.append(seed)
                continue
            rows = sorted(rows, key=lambda r: r.step)
            steps = [r.step for r in rows]
            rets = [r.eval_return for r in rows]
            finals.append(rets[-1])
            aucs.append(curve_auc(steps, rets))
            curves.append((steps, rets))
        if finals:
            # peak of the seed-averaged curve over the evaluation steps all seeds share
            common = sorted(set.intersection(*(set(s) for s, _ in curves)))
            mean_curve = [np.mean([dict(zip(s, v))[x] for s, v in curves]) for x in common]
            peak = float(max(mean_curve)) if mean_curve else math.nan
            out[strategy] = StrategySummary(
                strategy, len(finals), float(np.mean(finals)), float(np.std(finals)), float(np.mean(aucs)), peak, failed
            )
        else:
            out[strategy] = StrategySummary(strategy, 0, math.nan, math.nan, math.nan, math.nan, failed)
    return out


def format_summary(summary: dict[str, StrategySummary]) -> str:
    lines = [f"{'strategy':<10}{'seeds':>6}{'final_mean':>14}{'final_std':>12}{'auc_mean':>14}{'peak':>12}  failed"]
    for s in summary.values():
        lines.append(
            f"{s.strategy:<10}{s.n_seeds:>6}{s.final_mean:>14.2f}{s.final_std:>12.2f}{s.auc_mean:>14.2f}{s.peak:>12.2f}  "
            + (",".join(map(str, s.failed_seeds)) or "-")
        )
    return "\n".join(lines)


def random_baseline(env_name: str, seeds, episodes: int) -> np.ndarray:
    """Episode returns of a uniformly random policy on the evaluation episodes of each seed."""
    env = make_env(env_name)
    returns = []
    for seed in seeds:
        ep_seeds = np.random.default_rng(eval_seed(seed)).integers(2**31, size=episodes)
        act_rng = np.random.default_rng(seed)
        for ep_seed in ep_seeds:
            env.reset(int(ep_seed))
            total, done = 0.0, False
            while not done:
                _, reward, done = env.step(act_rng.uniform(-env.action_bound, env.action_bound, size=env.action_dim))
                total += reward
            returns.append(total)
    return np.asarray(returns)


def parse_config_file(path) -> dict[str, str]:
    """Read ``key = value`` lines; ``#`` starts a comment; keys use CLI flag names."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.lstrip("-").replace("_", "-")] = value
    return values
