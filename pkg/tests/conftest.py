import re

import numpy as np
import pytest

from gridrealm.config import Config
from gridrealm.engine import Agent, World
from gridrealm.worldgen import GameMap, TileKind

# Filled by test_acceptance at import; outcomes recorded as tests run.
ACCEPTANCE_DESCRIPTIONS = {}
_ACCEPTANCE_OUTCOMES = {}


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    match = re.search(r"test_c(\d+[a-z]?)_", report.nodeid)
    if match:
        _ACCEPTANCE_OUTCOMES.setdefault(match.group(1), []).append(report.outcome)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    def sort_key(k):
        digits = "".join(ch for ch in k if ch.isdigit())
        return (int(digits), k)
    for key in sorted(_ACCEPTANCE_OUTCOMES, key=sort_key):
        outcomes = _ACCEPTANCE_OUTCOMES[key]
        verdict = "PASS" if all(o == "passed" for o in outcomes) else "FAIL"
        desc = ACCEPTANCE_DESCRIPTIONS.get(key, "")
        terminalreporter.write_line(f"criterion {key:>3}: {verdict}  {desc}")


def text_map(rows, seed=0):
    """Build a GameMap from tile-character rows (G/F/S/R/W/L)."""
    header = f"{len(rows[0])} {len(rows)} {seed}"
    return GameMap.from_text("\n".join([header] + list(rows)) + "\n")


def flat_map(size=16, seed=0, border=TileKind.LAVA):
    """All-grass map with an impassable border and a grass spawn ring."""
    kinds = np.full((size, size), int(TileKind.GRASS), dtype=np.int8)
    kinds[0, :] = kinds[-1, :] = int(border)
    kinds[:, 0] = kinds[:, -1] = int(border)
    return GameMap(width=size, height=size, seed=seed, kinds=kinds)


def make_world(game_map=None, cfg=None, seed=1, cap=16, n_pop=1, **world_kwargs):
    if cfg is None:
        cfg = Config()
    if game_map is None:
        game_map = flat_map()
    return World(game_map, cfg, seed=seed, spawn_cap=cap, n_pop=n_pop, **world_kwargs)


def put_agent(world, row, col, population=0, agent_id=None, health=None,
              food=None, water=None, age=100):
    """Drop an agent at an exact cell with full control over its stats.

    Ages default past the spawn-immunity window so combat scenarios work
    unless a test opts into immunity explicitly.
    """
    if agent_id is None:
        agent_id = world.next_id
    world.next_id = max(world.next_id, agent_id + 1)
    agent = Agent(
        agent_id, population, row, col,
        world.cfg.agents.starting_health if health is None else health,
        world.cfg.forage.starting_food if food is None else food,
        world.cfg.forage.starting_water if water is None else water,
    )
    agent.age = age
    world.agents[agent_id] = agent
    idx = row * world.width + col
    world.occupants.setdefault(idx, []).append(agent)
    return agent


def pass_actions(world, attack=0):
    return {a: (4, attack) for a in world.agents}


@pytest.fixture
def cfg():
    return Config()
