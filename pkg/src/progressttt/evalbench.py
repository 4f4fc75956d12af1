"""Evaluation and ablation harness.

Covers greedy success rate, estimator F-score on a balanced labeled set,
reward-call accounting, the criterion-mismatch probe, and a variant runner
that writes one CSV row per configuration.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .critic import CriticConfig, ProgressCritic
from .curriculum import HorizonSchedule, default_schedule
from .envsim import GRIP, NOOP, NUM_ACTIONS, ChainWorld, Step, Trajectory, scripted_expert
from .exceptions import ConfigError
from .progress import make_estimator
from .seeding import derive_seed, make_rng
from .ttt import RunConfig, eval_success_rate, pretrain_bc, run_ttt

logger = logging.getLogger(__name__)

__all__ = [
    "ABLATION_HEADER",
    "VARIANTS",
    "FScoreReport",
    "build_validation_set",
    "critic_fscore",
    "estimator_rewards",
    "eval_success_rate",
    "mismatch_cases",
    "reward_calls",
    "run_ablation_table",
    "variant_config",
]

ABLATION_HEADER = ("variant", "sr", "f1", "reward_calls", "seeds", "wall_time_s")
_MOVE_TOKENS = np.array([t for t in range(NUM_ACTIONS) if t not in (GRIP, NOOP)])


@dataclass(frozen=True)
class FScoreReport:
    precision: float
    recall: float
    f1: float
    threshold_used: float
    num_success_cases: int
    num_failure_cases: int

    @classmethod
    def from_predictions(cls, predicted, labels, threshold: float) -> FScoreReport:
        predicted = np.asarray(predicted, dtype=bool)
        labels = np.asarray(labels, dtype=bool)
        tp = int(np.count_nonzero(predicted & labels))
        fp = int(np.count_nonzero(predicted & ~labels))
        fn = int(np.count_nonzero(~predicted & labels))
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        return cls(precision, recall, f1, float(threshold), int(labels.sum()), int((~labels).sum()))


# ---------------------------------------------------------------------------
# validation set

def _replay(env: ChainWorld, episode_seed: int, tokens: Iterable[int]) -> Trajectory:
    obs = env.reset(episode_seed)
    steps = []
    for tok in tokens:
        if obs.step_index >= env.config.max_horizon_cap:
            break
        steps.append(Step(obs, (int(tok),), 0.0))
        obs, _ = env.step((int(tok),))
    return Trajectory(steps=steps, final_observation=obs)


def _labeled(traj: Trajectory, env: ChainWorld, kind: str) -> Trajectory:
    traj.info["label"] = env.success(traj.final_observation)
    traj.info["oracle_progress"] = env.progress(traj.final_observation)
    traj.info["kind"] = kind
    return traj


def build_validation_set(config: RunConfig, num_success: int, num_failure: int) -> list[Trajectory]:
    """Balanced labeled trajectories of length ``env.max_horizon_cap``.

    Success cases are order-jittered expert demonstrations padded with random
    tokens. Failure cases alternate between truncated experts (stopped before
    the final grip, then padded with random moves and no grips) and uniformly
    random token sequences that happen not to finish. Labels are oracle
    success with the mismatch disabled, stored as ``info["label"]``.
    """
    if num_success < 1 or num_failure < 1:
        raise ValueError("num_success and num_failure must be positive")
    env_config = replace(config.env, mismatch_enabled=False)
    env = ChainWorld(env_config, config.task)
    horizon = env_config.max_horizon_cap
    seed = config.master_seed
    out: list[Trajectory] = []

    for i in range(num_success):
        episode = derive_seed(seed, "val-episode", i)
        expert = scripted_expert(env_config, config.task, episode, order_jitter_seed=derive_seed(seed, "val-order", i))
        rng = make_rng(seed, "val-pad", i)
        tokens = [s.tokens[0] for s in expert.steps]
        tokens += list(rng.integers(0, NUM_ACTIONS, size=horizon - len(tokens)))
        out.append(_labeled(_replay(env, episode, tokens), env, "expert"))

    for i in range(num_failure):
        episode = derive_seed(seed, "val-episode", num_success + i)
        rng = make_rng(seed, "val-fail", i)
        if i % 2 == 0:
            expert = scripted_expert(env_config, config.task, episode, order_jitter_seed=derive_seed(seed, "val-order-f", i))
            cut = int(rng.integers(0, len(expert.steps)))
            tokens = [s.tokens[0] for s in expert.steps[:cut]]
            tokens += list(rng.choice(_MOVE_TOKENS, size=horizon - len(tokens)))
            traj = _labeled(_replay(env, episode, tokens), env, "truncated")
        else:
            while True:
                traj = _labeled(_replay(env, episode, rng.integers(0, NUM_ACTIONS, size=horizon)), env, "random")
                if not traj.info["label"]:
                    break
        out.append(traj)
    return out


# ---------------------------------------------------------------------------
# estimator replay

def _replay_estimator(name: str, config: RunConfig, critic, frames) -> tuple[float, int, bool]:
    estimator = make_estimator(name, config.progress, critic, frames[0])
    last = frames[0]
    terminated = False
    for obs in frames[1:]:
        last = obs
        if estimator.observe(obs):
            terminated = True
            break
    estimator.finish(last)
    return estimator.reward, estimator.calls_made, terminated


def estimator_rewards(
    estimator: str, critic_config: CriticConfig, trajectories: Sequence[Trajectory], config: RunConfig
) -> np.ndarray:
    """Reward each trajectory would receive, replaying the estimator with early termination.

    Trajectory ``j`` uses critic stream ``j`` so every estimator sees the
    same noise sequence per trajectory.
    """
    rewards = np.empty(len(trajectories))
    for j, traj in enumerate(trajectories):
        critic = ProgressCritic(critic_config, config.env, config.task, stream=j)
        rewards[j] = _replay_estimator(estimator, config, critic, traj.frames)[0]
    return rewards


def critic_fscore(
    estimator: str,
    critic_config: CriticConfig,
    validation_set: Sequence[Trajectory],
    threshold: float | None = None,
    config: RunConfig | None = None,
) -> FScoreReport:
    """Precision, recall and F1 of "reward > threshold" against the stored labels.

    ``threshold`` defaults to the termination threshold ``tau_threshold``.
    """
    config = config if config is not None else RunConfig()
    threshold = config.progress.tau_threshold if threshold is None else float(threshold)
    labels = np.array([bool(tr.info["label"]) for tr in validation_set])
    if labels.all() or not labels.any():
        raise ValueError("validation set must contain both success and failure cases")
    rewards = estimator_rewards(estimator, critic_config, validation_set, config)
    return FScoreReport.from_predictions(rewards > threshold, labels, threshold)


def reward_calls(config: RunConfig, estimator: str | None = None) -> int:
    """Critic calls for one full-length rollout that never terminates early.

    Measured by replaying an idle (all no-op) trajectory with a noiseless
    critic, so the count is the estimator's own accounting.
    """
    estimator = estimator or config.estimator
    env = ChainWorld(replace(config.env, mismatch_enabled=False), config.task)
    traj = _replay(env, 0, [NOOP] * config.env.max_horizon_cap)
    critic = ProgressCritic(CriticConfig(), config.env, config.task)
    _, calls, terminated = _replay_estimator(estimator, config, critic, traj.frames)
    if terminated:
        raise RuntimeError("idle trajectory terminated early; reward-call count is not the full-length one")
    return calls


def mismatch_cases(config: RunConfig, episodes: int = 20) -> list[dict]:
    """Expert runs judged done by the estimator but failed by the oracle.

    Runs order-jittered experts, idling after the last grip until the step
    cap, in the configured environment (mismatch enabled or not). Returns one record per trajectory whose estimator
    reward exceeds ``tau_threshold`` while oracle success is false. Each
    record is also logged at WARNING level.
    """
    env = ChainWorld(config.env, config.task)
    tau = config.progress.tau_threshold
    found = []
    for i in range(episodes):
        episode = derive_seed(config.master_seed, "mismatch", i)
        expert = scripted_expert(config.env, config.task, episode, order_jitter_seed=episode)
        tokens = [s.tokens[0] for s in expert.steps]
        traj = _replay(env, episode, tokens + [NOOP] * (config.env.max_horizon_cap - len(tokens)))
        critic = ProgressCritic(config.critic, config.env, config.task, stream=i)
        reward, _, _ = _replay_estimator(config.estimator, config, critic, traj.frames)
        success = env.success(traj.final_observation)
        if reward > tau and not success:
            record = {
                "episode": i,
                "episode_seed": episode,
                "reward": reward,
                "oracle_progress": env.progress(traj.final_observation),
                "oracle_success": success,
                "final_position": traj.final_observation.agent_pos,
                "terminal_cell": config.task.terminal_cell,
            }
            logger.warning("criterion mismatch: %s", record)
            found.append(record)
    return found


# ---------------------------------------------------------------------------
# ablation runner

VARIANTS = {
    "vanilla-2-frame": {"estimator": "vanilla"},
    "uniform-4": {"estimator": "uniform-4"},
    "uniform-8": {"estimator": "uniform-8"},
    "accumulative": {"estimator": "accumulative"},
    "binary-outcome": {"estimator": "binary"},
    "fixed-horizon": {"schedule": "fixed"},
    "progressive": {"schedule": "progressive"},
}


def variant_config(config: RunConfig, variant: str, seed: int) -> RunConfig:
    """``config`` specialized to a named variant and seed.

    The progressive variant uses a three-stage geometric ladder that splits
    ``num_iterations`` evenly, so both schedule variants share one budget.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; known: {sorted(VARIANTS)}")
    variant_spec = VARIANTS[variant]
    cfg = replace(config, master_seed=seed, critic=replace(config.critic, seed=seed))
    if "estimator" in variant_spec:
        cfg = replace(cfg, estimator=variant_spec["estimator"])
    if variant_spec.get("schedule") == "fixed":
        cfg = replace(cfg, schedule=HorizonSchedule(((config.env.max_horizon_cap, None),)))
    elif variant_spec.get("schedule") == "progressive":
        per_stage = max(config.num_iterations // 3, 1)
        cfg = replace(cfg, schedule=default_schedule(config.env.max_horizon_cap, 3, per_stage))
    return cfg


def _run_variant(config: RunConfig, variant: str, seed: int, log_path: Path | None) -> tuple[float, float]:
    cfg = variant_config(config, variant, seed)
    sink = None
    handle = None
    if log_path is not None:
        handle = open(log_path, "w")
        sink = lambda row: handle.write(json.dumps(row, sort_keys=True) + "\n")
    try:
        params, _ = run_ttt(pretrain_bc(cfg), cfg, sink=sink)
    finally:
        if handle is not None:
            handle.close()
    sr = eval_success_rate(params, cfg)
    validation = build_validation_set(cfg, cfg.ablation.validation_success, cfg.ablation.validation_failure)
    f1 = critic_fscore(cfg.estimator, cfg.critic, validation, config=cfg).f1
    return sr, f1


def run_ablation_table(
    config: RunConfig,
    variants: Sequence[str] | None = None,
    seeds: Sequence[int] | None = None,
    out_path=None,
    log_dir=None,
) -> list[dict]:
    """Run every variant end to end over shared seeds.

    Returns one row per variant with mean SR and F1 over seeds. A variant that
    raises is logged and marked ``"failed"`` in its SR and F1 columns; the
    others still run. When ``out_path`` is given the rows are written as CSV,
    and when ``log_dir`` is given each (variant, seed) writes its iteration
    metrics to ``<variant>-seed<seed>.jsonl`` there.
    """
    variants = list(config.ablation.variants if variants is None else variants)
    seeds = list(config.ablation.seeds if seeds is None else seeds)
    if log_dir is not None:
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for variant in variants:
        start = time.perf_counter()
        try:
            results = [
                _run_variant(config, variant, s, log_dir / f"{variant}-seed{s}.jsonl" if log_dir else None)
                for s in seeds
            ]
            calls = reward_calls(variant_config(config, variant, seeds[0] if seeds else 0))
            sr = float(np.mean([r[0] for r in results])) if results else float("nan")
            f1 = float(np.mean([r[1] for r in results])) if results else float("nan")
        except Exception as exc:  # a failed variant must not abort the table
            logger.error("variant %s failed: %s", variant, exc)
            sr = f1 = "failed"
            calls = ""
        rows.append({
            "variant": variant,
            "sr": sr,
            "f1": f1,
            "reward_calls": calls,
            "seeds": " ".join(str(s) for s in seeds),
            "wall_time_s": round(time.perf_counter() - start, 3),
        })
    if out_path is not None:
        with open(out_path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=ABLATION_HEADER)
            writer.writeheader()
            writer.writerows(rows)
    return rows
