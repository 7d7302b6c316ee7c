"""Policy-gradient training over many worlds with per-population buffers.

Worlds step sequentially (they are independent, so order is irrelevant to
each world's dynamics) against frozen parameter snapshots. Per-agent steps
accumulate in per-population buffers; once every buffer reaches its share of
the global step budget, each population computes returns and advantages,
takes one Adam step on its own experience only, and rolling trajectories are
flushed with a bootstrapped tail. Metrics stream to newline-delimited JSON.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .config import Config
from .engine import World, step_world
from .neural import (
    AdamState, PolicyParams, adam_step, backward, forward, init_params,
    sample_batch, save_checkpoint, stack_observations,
)
from .observations import encode, observe
from .replay import ReplayWriter
from .worldgen import FractalParams, GameMap, generate_map, save_map

logger = logging.getLogger(__name__)


def compute_returns(rewards, gamma: float, bootstrap: float = 0.0,
                    truncated: bool = False) -> np.ndarray:
    """Discounted returns R_t = r_t + gamma * R_{t+1}.

    The tail beyond the last step is 0 for terminal trajectories and the
    bootstrap value for truncated ones.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must be in (0, 1), got {gamma}")
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.empty_like(rewards)
    acc = float(bootstrap) if truncated else 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


def assign_population(rng: np.random.Generator, n_pop: int) -> int:
    """Uniform population draw for a fresh spawn."""
    if n_pop < 1:
        raise ValueError("n_pop must be >= 1")
    return int(rng.integers(n_pop)) if n_pop > 1 else 0


@dataclass
class Trajectory:
    population: int
    encoded: list = field(default_factory=list)
    moves: list = field(default_factory=list)
    attacks: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)
    terminal: bool = False  # death; False at a buffer flush means truncated

    def __len__(self):
        return len(self.rewards)


class _Buffer:
    """Closed trajectory segments awaiting one population's update."""

    def __init__(self):
        self.trajectories: list = []
        self.steps = 0

    def push(self, traj: Trajectory) -> None:
        if len(traj) == 0:
            return
        self.trajectories.append(traj)
        self.steps += len(traj)

    def clear(self) -> None:
        self.trajectories = []
        self.steps = 0


@dataclass
class TrainResult:
    checkpoints: list          # final checkpoint path per population
    metrics_path: str
    updates: int
    trajectories: list         # completed (terminal) trajectory count per population
    mean_lifetimes: list       # over the whole run, per population


def _spawn_caps(cfg: Config, rng: np.random.Generator) -> list:
    tc = cfg.training
    if tc.spawn_cap_mode == "fixed":
        return [tc.cap_per_pop * tc.n_pop] * tc.worlds
    return [int(rng.integers(1, tc.cap_constant + 1)) for _ in range(tc.worlds)]


def build_worlds(cfg: Config, maps: list, seeds: list, caps: list,
                 replay_paths=None) -> list:
    worlds = []
    for i, (game_map, seed, cap) in enumerate(zip(maps, seeds, caps)):
        writer = None
        if replay_paths and i < len(replay_paths) and replay_paths[i]:
            writer = ReplayWriter(replay_paths[i])
        worlds.append(World(game_map, cfg, seed=seed, spawn_cap=cap,
                            n_pop=cfg.training.n_pop, replay=writer))
    return worlds


def rollout_tick(worlds: list, policies: list, cfg: Config,
                 sample_rng: np.random.Generator, open_trajs: dict,
                 closed: list, lifetime_sink=None) -> None:
    """Advance every world one tick under frozen `policies`.

    open_trajs maps (world_index, agent_id) -> Trajectory; finished
    trajectories are pushed to the matching population buffer in `closed`.
    A policies entry of None plays uniformly random actions (baseline play).
    """
    n_pop = cfg.training.n_pop
    lifetime_norm = cfg.observation.lifetime_norm
    per_pop: list = [[] for _ in range(n_pop)]
    for wi, world in enumerate(worlds):
        height, width = world.height, world.width
        for agent in world.agents.values():
            enc = encode(observe(world, agent), height, width, lifetime_norm)
            per_pop[agent.population].append((wi, agent.id, enc))

    actions: list = [{} for _ in worlds]
    for pop in range(n_pop):
        rows = per_pop[pop]
        if not rows:
            continue
        if policies[pop] is None:
            mv = sample_rng.integers(0, 5, len(rows))
            at = sample_rng.integers(0, 3, len(rows))
            values = np.zeros(len(rows))
        else:
            batch = stack_observations([enc for _, _, enc in rows])
            out = forward(policies[pop], batch)
            mv = sample_batch(out.move_logits, sample_rng)
            at = sample_batch(out.att_logits, sample_rng)
            values = out.value
        for i, (wi, agent_id, enc) in enumerate(rows):
            actions[wi][agent_id] = (int(mv[i]), int(at[i]))
            key = (wi, agent_id)
            traj = open_trajs.get(key)
            if traj is None:
                traj = Trajectory(population=pop)
                open_trajs[key] = traj
            traj.encoded.append(enc)
            traj.moves.append(int(mv[i]))
            traj.attacks.append(int(at[i]))
            traj.rewards.append(1.0)
            traj.values.append(float(values[i]))

    for wi, world in enumerate(worlds):
        events = step_world(world, actions[wi])
        for death in events.deaths:
            key = (wi, death.agent)
            traj = open_trajs.pop(key, None)
            if traj is not None:
                traj.terminal = True
                closed[traj.population].push(traj)
            if lifetime_sink is not None:
                lifetime_sink[death.population].append(death.lifetime)


def _update_population(params: PolicyParams, adam: AdamState, buffer: _Buffer,
                       cfg: Config) -> dict:
    gamma = cfg.training.gamma
    enc_all = []
    mv_all = []
    at_all = []
    ret_all = []
    val_all = []
    for traj in buffer.trajectories:
        bootstrap = 0.0 if traj.terminal else traj.values[-1]
        rets = compute_returns(traj.rewards, gamma, bootstrap, truncated=not traj.terminal)
        enc_all.extend(traj.encoded)
        mv_all.extend(traj.moves)
        at_all.extend(traj.attacks)
        ret_all.append(rets)
        val_all.extend(traj.values)
    returns = np.concatenate(ret_all)
    values = np.asarray(val_all)
    advantages = returns - values
    if cfg.training.advantage_normalize and len(advantages) > 1:
        advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)
    batch = stack_observations(enc_all)
    grads, stats, _ = backward(
        params, batch, np.asarray(mv_all), np.asarray(at_all), returns, advantages,
        cfg.neural.value_coef, cfg.neural.entropy_coef,
    )
    adam_step(adam, params, grads, cfg.neural)
    n = len(mv_all)
    return {
        "steps": n,
        "policy_loss": stats.policy_loss / n,
        "value_loss": stats.value_loss / n,
        "entropy": stats.entropy / (cfg.neural.entropy_coef * n) if cfg.neural.entropy_coef else 0.0,
    }


def train(cfg: Config, out_dir: str, game_map: GameMap = None) -> TrainResult:
    """Run the full training loop; returns checkpoint and metrics locations.

    Training stops once every population has completed its trajectory budget,
    or after training.max_updates updates when that is set. Passing game_map
    forces every world onto that one fixed map.
    """
    os.makedirs(out_dir, exist_ok=True)
    tc = cfg.training
    root = np.random.SeedSequence(tc.seed)
    map_seeds, world_seeds, cap_seed, init_seed, sample_seed = root.spawn(5)

    fractal = FractalParams.from_config(cfg.worldgen)
    if game_map is not None:
        maps = [game_map] * tc.worlds
    elif tc.randomize_maps:
        seeds = map_seeds.generate_state(tc.worlds)
        maps = [generate_map(int(s), cfg.worldgen.size, fractal, cfg.worldgen.retry_budget)
                for s in seeds]
    else:
        shared = generate_map(int(map_seeds.generate_state(1)[0]), cfg.worldgen.size,
                              fractal, cfg.worldgen.retry_budget)
        maps = [shared] * tc.worlds
    caps = _spawn_caps(cfg, np.random.default_rng(cap_seed))
    replay_paths = None
    if tc.record_replay:
        replay_paths = [os.path.join(out_dir, "world0.replay")]
        save_map(maps[0], os.path.join(out_dir, "world0.map"))
    worlds = build_worlds(cfg, maps, [int(s) for s in world_seeds.generate_state(tc.worlds)],
                          caps, replay_paths)

    init_seeds = init_seed.generate_state(tc.n_pop)
    policies = [init_params(cfg.neural, cfg.observation.crop_size, int(init_seeds[pop]))
                for pop in range(tc.n_pop)]
    adams = [AdamState.for_params(p) for p in policies]
    sample_rng = np.random.default_rng(sample_seed)

    buffers = [_Buffer() for _ in range(tc.n_pop)]
    open_trajs: dict = {}
    lifetimes: list = [[] for _ in range(tc.n_pop)]
    window_lifetimes: list = [[] for _ in range(tc.n_pop)]
    completed = [0] * tc.n_pop
    per_pop_target = max(1, (tc.horizon * tc.worlds) // tc.n_pop)

    metrics_path = os.path.join(out_dir, "metrics.ndjson")
    updates = 0
    with open(metrics_path, "w", encoding="utf-8") as metrics:
        while True:
            window = [[] for _ in range(tc.n_pop)]
            rollout_tick(worlds, policies, cfg, sample_rng, open_trajs, buffers, window)
            for pop in range(tc.n_pop):
                completed[pop] += len(window[pop])
                lifetimes[pop].extend(window[pop])
                window_lifetimes[pop].extend(window[pop])

            if all(buf.steps >= per_pop_target for buf in buffers):
                # Barrier: flush rolling trajectories with a bootstrapped tail.
                for key, traj in open_trajs.items():
                    buffers[traj.population].push(traj)
                    open_trajs[key] = Trajectory(population=traj.population)
                for pop in range(tc.n_pop):
                    try:
                        stats = _update_population(policies[pop], adams[pop], buffers[pop], cfg)
                    except ValueError:
                        bad = os.path.join(out_dir, f"ckpt_p{pop}_diagnostic.ckpt")
                        save_checkpoint(bad, policies[pop])
                        logger.error("non-finite loss for population %d; wrote %s", pop, bad)
                        raise
                    lived = window_lifetimes[pop]
                    record = {
                        "update": updates,
                        "pop": pop,
                        "steps": stats["steps"],
                        "policy_loss": stats["policy_loss"],
                        "value_loss": stats["value_loss"],
                        "entropy": stats["entropy"],
                        "lifetimes": len(lived),
                        "mean_lifetime": (sum(lived) / len(lived)) if lived else None,
                        "trajectories_total": completed[pop],
                    }
                    metrics.write(json.dumps(record, sort_keys=True) + "\n")
                    buffers[pop].clear()
                    window_lifetimes[pop] = []
                updates += 1
                if updates % tc.checkpoint_every == 0:
                    for pop in range(tc.n_pop):
                        save_checkpoint(
                            os.path.join(out_dir, f"ckpt_p{pop}_u{updates}.ckpt"), policies[pop])
                if tc.max_updates and updates >= tc.max_updates:
                    break
                if all(c >= tc.trajectory_budget for c in completed):
                    break

    final_paths = []
    for pop in range(tc.n_pop):
        path = os.path.join(out_dir, f"ckpt_p{pop}_final.ckpt")
        save_checkpoint(path, policies[pop])
        final_paths.append(path)
    for world in worlds:
        if world.replay is not None:
            world.replay.close()
    mean_lifetimes = [(sum(ls) / len(ls)) if ls else 0.0 for ls in lifetimes]
    return TrainResult(final_paths, metrics_path, updates, completed, mean_lifetimes)
