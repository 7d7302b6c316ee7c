"""Server-merge evaluation: frozen player bases compete in shared worlds.

Each competitor is a trained checkpoint (or a uniformly random baseline)
that keeps its own population identity inside merged worlds. Spawning cycles
round-robin across competitors so lifetime differences reflect policy
quality, not spawn share. No learning happens here; checkpoints are loaded
once and never mutated.
"""

from __future__ import annotations

import statistics
from copy import deepcopy
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import Config
from .engine import World, step_world
from .neural import CheckpointError, PolicyParams, forward, init_params, load_checkpoint, sample_batch, stack_observations
from .observations import encode, observe
from .replay import read_records
from .training import build_worlds
from .worldgen import FractalParams, GameMap, generate_map, save_map

DEATH_CAUSES = ("starvation", "dehydration", "combat", "lava")


@dataclass
class Competitor:
    name: str
    checkpoint: Optional[str] = None  # None plays uniformly random actions
    params: Optional[PolicyParams] = None


@dataclass
class CompetitorResult:
    name: str
    spawned: int = 0
    lifetimes: list = field(default_factory=list)  # completed (death) lifetimes
    censored: list = field(default_factory=list)   # ages of agents alive at the end
    deaths_by_cause: dict = field(default_factory=lambda: {c: 0 for c in DEATH_CAUSES})

    def _sample(self, include_censored: bool) -> list:
        return self.lifetimes + (self.censored if include_censored else [])

    def mean_lifetime(self, include_censored: bool = False) -> float:
        sample = self._sample(include_censored)
        return statistics.fmean(sample) if sample else 0.0

    def median_lifetime(self, include_censored: bool = False) -> float:
        sample = self._sample(include_censored)
        return float(statistics.median(sample)) if sample else 0.0

    def max_lifetime(self, include_censored: bool = False) -> int:
        sample = self._sample(include_censored)
        return max(sample) if sample else 0


@dataclass
class TournamentResult:
    competitors: list
    ticks: int
    worlds: int

    def summary_rows(self, include_censored: bool = False) -> list:
        rows = []
        for c in self.competitors:
            rows.append({
                "competitor": c.name,
                "spawned": c.spawned,
                "deaths": len(c.lifetimes),
                "censored": len(c.censored),
                "mean_lifetime": round(c.mean_lifetime(include_censored), 3),
                "median_lifetime": round(c.median_lifetime(include_censored), 3),
                "max_lifetime": c.max_lifetime(include_censored),
                **{f"deaths_{cause}": c.deaths_by_cause[cause] for cause in DEATH_CAUSES},
            })
        return rows


def _expected_shapes(cfg: Config) -> list:
    probe = init_params(cfg.neural, cfg.observation.crop_size, seed=0)
    return [(name, a.shape) for name, a in zip(probe.array_names(), probe.arrays())]


def load_competitors(cfg: Config, specs: list) -> list:
    """Resolve (name, checkpoint-or-None) pairs, verifying shapes up front."""
    expected = _expected_shapes(cfg)
    competitors = []
    for name, ckpt in specs:
        if ckpt is None:
            competitors.append(Competitor(name=name))
            continue
        params = load_checkpoint(ckpt, nonlinearity=cfg.neural.nonlinearity)
        for (pname, shape), a in zip(expected, params.arrays()):
            if a.shape != shape:
                raise CheckpointError(
                    f"{ckpt}: {pname} has shape {a.shape}, config expects {shape}"
                )
        competitors.append(Competitor(name=name, checkpoint=ckpt, params=params))
    return competitors


class _RoundRobin:
    """Fair spawn hook: per-competitor spawn counts never differ by more than 1."""

    def __init__(self, n: int):
        self.n = n
        self.next_pop = 0

    def __call__(self, world) -> int:
        pop = self.next_pop
        self.next_pop = (pop + 1) % self.n
        return pop


def _play_tick(worlds, competitors, cfg, rng, results) -> None:
    """One evaluation tick for every world; records deaths as they happen."""
    n_pop = len(competitors)
    lifetime_norm = cfg.observation.lifetime_norm
    per_pop = [[] for _ in range(n_pop)]
    for wi, world in enumerate(worlds):
        for agent in world.agents.values():
            per_pop[agent.population].append(
                (wi, agent.id, encode(observe(world, agent), world.height, world.width,
                                      lifetime_norm)))
    actions = [{} for _ in worlds]
    for pop, rows in enumerate(per_pop):
        if not rows:
            continue
        if competitors[pop].params is None:
            mv = rng.integers(0, 5, len(rows))
            at = rng.integers(0, 3, len(rows))
        else:
            out = forward(competitors[pop].params, stack_observations([e for _, _, e in rows]))
            mv = sample_batch(out.move_logits, rng)
            at = sample_batch(out.att_logits, rng)
        for i, (wi, agent_id, _) in enumerate(rows):
            actions[wi][agent_id] = (int(mv[i]), int(at[i]))
    for wi, world in enumerate(worlds):
        events = step_world(world, actions[wi])
        for agent_id, pop, _, _ in events.spawns:
            results[pop].spawned += 1
        for death in events.deaths:
            results[death.population].lifetimes.append(death.lifetime)
            results[death.population].deaths_by_cause[death.cause] += 1


def run_tournament(cfg: Config, specs: list, game_map: GameMap = None,
                   replay_path: str = None) -> TournamentResult:
    """Merge the given player bases and measure comparative lifetimes.

    specs: (name, checkpoint path or None) per competitor, at least two.
    Policies stay frozen for the whole evaluation; results are a pure
    function of (config, checkpoints, map).
    """
    if len(specs) < 2:
        raise ValueError("a tournament needs at least two competitors")
    competitors = load_competitors(cfg, specs)
    tcfg = cfg.tournament
    root = np.random.SeedSequence(tcfg.seed)
    map_seeds, world_seeds, action_seed = root.spawn(3)

    merged_cfg = deepcopy(cfg)
    merged_cfg.combat.enabled = tcfg.combat
    merged_cfg.training.n_pop = len(competitors)

    if game_map is not None:
        maps = [game_map] * tcfg.worlds
    else:
        fractal = FractalParams.from_config(cfg.worldgen)
        maps = [generate_map(int(s), cfg.worldgen.size, fractal, cfg.worldgen.retry_budget)
                for s in map_seeds.generate_state(tcfg.worlds)]
    replay_paths = [replay_path] if replay_path else None
    if replay_path:
        save_map(maps[0], str(replay_path) + ".map")
    worlds = build_worlds(merged_cfg, maps,
                          [int(s) for s in world_seeds.generate_state(tcfg.worlds)],
                          [tcfg.spawn_cap] * tcfg.worlds, replay_paths)
    for world in worlds:
        world.spawn_population = _RoundRobin(len(competitors))

    results = [CompetitorResult(name=c.name) for c in competitors]
    rng = np.random.default_rng(action_seed)
    for _ in range(tcfg.ticks):
        _play_tick(worlds, competitors, merged_cfg, rng, results)
    for world in worlds:
        for agent in world.agents.values():
            results[agent.population].censored.append(agent.age)
        if world.replay is not None:
            world.replay.close()
    return TournamentResult(results, tcfg.ticks, tcfg.worlds)


def evaluate_policy(cfg: Config, params: Optional[PolicyParams], ticks: int,
                    worlds: int = 1, seed: int = 0, game_map: GameMap = None,
                    combat: bool = None, replay_path: str = None) -> CompetitorResult:
    """Frozen single-policy evaluation; params=None plays uniformly at random.

    Uses the tournament machinery with one population so results are directly
    comparable to merged runs at the same spawn cap.
    """
    merged_cfg = deepcopy(cfg)
    if combat is not None:
        merged_cfg.combat.enabled = combat
    merged_cfg.training.n_pop = 1
    root = np.random.SeedSequence(seed)
    map_seeds, world_seeds, action_seed = root.spawn(3)
    if game_map is not None:
        maps = [game_map] * worlds
    else:
        fractal = FractalParams.from_config(cfg.worldgen)
        maps = [generate_map(int(s), cfg.worldgen.size, fractal, cfg.worldgen.retry_budget)
                for s in map_seeds.generate_state(worlds)]
    replay_paths = [replay_path] if replay_path else None
    if replay_path:
        save_map(maps[0], str(replay_path) + ".map")
    world_objs = build_worlds(merged_cfg, maps,
                              [int(s) for s in world_seeds.generate_state(worlds)],
                              [cfg.tournament.spawn_cap] * worlds, replay_paths)
    competitors = [Competitor(name="solo", params=params)]
    results = [CompetitorResult(name="solo")]
    rng = np.random.default_rng(action_seed)
    for _ in range(ticks):
        _play_tick(world_objs, competitors, merged_cfg, rng, results)
    for world in world_objs:
        for agent in world.agents.values():
            results[0].censored.append(agent.age)
        if world.replay is not None:
            world.replay.close()
    return results[0]


@dataclass
class LifetimeSummary:
    """Per-population lifetime statistics folded from replay death events."""

    spawned: dict = field(default_factory=dict)       # pop -> count
    lifetimes: dict = field(default_factory=dict)     # pop -> list
    deaths_by_cause: dict = field(default_factory=dict)

    def add_spawn(self, pop: int) -> None:
        self.spawned[pop] = self.spawned.get(pop, 0) + 1

    def add_death(self, pop: int, cause: str, lifetime: int) -> None:
        self.lifetimes.setdefault(pop, []).append(lifetime)
        causes = self.deaths_by_cause.setdefault(pop, {c: 0 for c in DEATH_CAUSES})
        causes[cause] = causes.get(cause, 0) + 1

    def populations(self) -> list:
        return sorted(set(self.spawned) | set(self.lifetimes))

    def count(self, pop: int) -> int:
        return len(self.lifetimes.get(pop, []))

    def mean(self, pop: int) -> float:
        sample = self.lifetimes.get(pop, [])
        return statistics.fmean(sample) if sample else 0.0

    def median(self, pop: int) -> float:
        sample = self.lifetimes.get(pop, [])
        return float(statistics.median(sample)) if sample else 0.0

    def max(self, pop: int) -> int:
        sample = self.lifetimes.get(pop, [])
        return max(sample) if sample else 0

    def merge(self, other: "LifetimeSummary") -> "LifetimeSummary":
        merged = LifetimeSummary()
        for src in (self, other):
            for pop, n in src.spawned.items():
                merged.spawned[pop] = merged.spawned.get(pop, 0) + n
            for pop, ls in src.lifetimes.items():
                merged.lifetimes.setdefault(pop, []).extend(ls)
            for pop, causes in src.deaths_by_cause.items():
                dst = merged.deaths_by_cause.setdefault(pop, {c: 0 for c in DEATH_CAUSES})
                for cause, n in causes.items():
                    dst[cause] = dst.get(cause, 0) + n
        return merged


def lifetime_stats(replay_path) -> LifetimeSummary:
    """Fold spawn/death events of one replay log into summary statistics."""
    summary = LifetimeSummary()
    for record in read_records(replay_path):
        kind = record["e"]
        if kind == "spawn":
            summary.add_spawn(record["pop"])
        elif kind == "death":
            summary.add_death(record["pop"], record["cause"], record["life"])
    return summary
