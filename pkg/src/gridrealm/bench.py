"""Single-core engine throughput benchmark.

Measures agent-ticks per second under random actions at a sustained live
count: the dead are respawned and every survivor's stats are topped up after
each tick, so tick density stays at the requested agent count while all
mechanics (movement, combat, harvest, metabolism, regrowth) keep running.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .config import Config
from .engine import World, spawn_agent, step_world
from .worldgen import FractalParams, generate_map


@dataclass
class BenchResult:
    agent_ticks: int
    seconds: float
    ticks: int
    agents: int

    @property
    def rate(self) -> float:
        return self.agent_ticks / self.seconds if self.seconds > 0 else 0.0


def run_benchmark(cfg: Config, ticks: int = 1000, agents: int = 128,
                  map_seed: int = 3, world_seed: int = 11,
                  warmup_ticks: int = 50) -> BenchResult:
    game_map = generate_map(map_seed, cfg.worldgen.size,
                            FractalParams.from_config(cfg.worldgen),
                            cfg.worldgen.retry_budget)
    world = World(game_map, cfg, seed=world_seed, spawn_cap=agents, n_pop=2)
    rng = np.random.default_rng(world_seed + 1)

    def refill():
        while world.live_count < agents:
            if spawn_agent(world, int(rng.integers(world.n_pop))) is None:
                break
        max_health = cfg.agents.starting_health
        max_food = cfg.forage.starting_food
        max_water = cfg.forage.starting_water
        for a in world.agents.values():
            a.health = max_health
            a.food = max_food
            a.water = max_water

    def one_tick():
        ids = list(world.agents.keys())
        mv = rng.integers(0, 5, len(ids)).tolist()
        at = rng.integers(0, 3, len(ids)).tolist()
        step_world(world, dict(zip(ids, zip(mv, at))))
        refill()
        return len(ids)

    refill()
    for _ in range(warmup_ticks):
        one_tick()

    agent_ticks = 0
    t0 = time.perf_counter()
    for _ in range(ticks):
        agent_ticks += one_tick()
    seconds = time.perf_counter() - t0
    return BenchResult(agent_ticks=agent_ticks, seconds=seconds, ticks=ticks, agents=agents)
