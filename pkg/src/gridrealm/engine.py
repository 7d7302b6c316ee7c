"""Authoritative world state and the server tick.

One tick runs, in order: at most one spawn under the cap, per-agent action
processing in a freshly shuffled order (movement, then attack, then harvest,
then metabolism), removal of the dead, stochastic scrub regrowth, and the
tick counter increment. All randomness comes from the world's own seeded
generator, so a (map, seed, action stream) triple replays identically.

A world is single-context: nothing in here is safe to call concurrently for
the same World, but distinct worlds never share state.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import NamedTuple, Optional

import numpy as np

from .config import Config
from .worldgen import GameMap, TileKind

logger = logging.getLogger(__name__)

_GRASS = int(TileKind.GRASS)
_FOREST = int(TileKind.FOREST)
_SCRUB = int(TileKind.SCRUB)
_STONE = int(TileKind.STONE)
_WATER = int(TileKind.WATER)
_LAVA = int(TileKind.LAVA)


class Move(IntEnum):
    NORTH = 0
    SOUTH = 1
    EAST = 2
    WEST = 3
    PASS = 4


class AttackStyle(IntEnum):
    MELEE = 0
    RANGE = 1
    MAGE = 2


STYLE_NAMES = ("melee", "range", "mage")

# (dr, dc) per Move index
_DELTAS = ((-1, 0), (1, 0), (0, 1), (0, -1), (0, 0))


class ActionPair(NamedTuple):
    move: Move
    attack: AttackStyle


class Agent:
    """Mutable per-agent state; plain slots for tick-loop speed."""

    __slots__ = (
        "id", "population", "row", "col", "health", "food", "water",
        "age", "freeze", "last_damage", "alive",
    )

    def __init__(self, agent_id: int, population: int, row: int, col: int,
                 health: int, food: int, water: int):
        self.id = agent_id
        self.population = population
        self.row = row
        self.col = col
        self.health = health
        self.food = food
        self.water = water
        self.age = 0
        self.freeze = 0
        self.last_damage = 0
        self.alive = True

    @property
    def freeze_remaining(self) -> int:
        """Ticks of blocked movement as visible at a tick boundary (0..2)."""
        return min(self.freeze, 2)

    def __repr__(self):
        return (f"Agent(id={self.id}, pop={self.population}, at=({self.row},{self.col}), "
                f"hp={self.health}, food={self.food}, water={self.water}, age={self.age})")


class AttackEvent(NamedTuple):
    attacker: int
    target: int
    style: int
    damage: int
    stolen_food: int          # removed from the target
    stolen_water: int
    gain_food: int            # credited to the attacker (may be less if capped)
    gain_water: int
    attacker_food_after: int
    attacker_water_after: int
    target_age: int
    row: int                  # attacker position at the moment of the attack
    col: int
    killed: bool


class DeathEvent(NamedTuple):
    agent: int
    population: int
    cause: str                # starvation | dehydration | combat | lava
    lifetime: int


@dataclass
class TickEvents:
    tick: int
    spawns: list = field(default_factory=list)    # (id, population, row, col)
    moves: list = field(default_factory=list)     # (id, row, col) after a successful move
    harvests: list = field(default_factory=list)  # (id, food_gained, water_gained)
    attacks: list = field(default_factory=list)   # AttackEvent
    deaths: list = field(default_factory=list)    # DeathEvent
    regens: list = field(default_factory=list)    # flat cell index scrub -> forest
    rewards: list = field(default_factory=list)   # ids of agents that acted this tick


class World:
    """One environment server: a map plus every live agent on it."""

    def __init__(self, game_map: GameMap, cfg: Config, seed: int, spawn_cap: int,
                 n_pop: int = 1, spawn_population=None, replay=None):
        self.map = game_map
        self.cfg = cfg
        self.width = game_map.width
        self.height = game_map.height
        self.tiles = [int(k) for k in game_map.kinds.ravel()]
        self.rng = np.random.default_rng(seed)
        self.seed = seed
        self.spawn_cap = spawn_cap
        self.n_pop = n_pop
        self.spawn_population = spawn_population  # callable (world) -> population index
        self.replay = replay
        self.tick = 0
        self.next_id = 0
        self.agents: dict[int, Agent] = {}
        self.occupants: dict[int, list] = {}
        self.scrubs: dict[int, None] = {}
        self.forest_count = self.tiles.count(_FOREST)
        w = self.width
        self.spawn_ring = [r * w + c for (r, c) in game_map.spawn_cells()]
        combat = cfg.combat
        # damage/range per AttackStyle index
        self.styles = (
            (combat.melee_damage, combat.melee_range),
            (combat.ranged_damage, combat.ranged_range),
            (combat.mage_damage, combat.mage_range),
        )
        if replay is not None:
            replay.write_header(self)

    @property
    def live_count(self) -> int:
        return len(self.agents)

    def live_agents(self) -> list:
        return list(self.agents.values())


def _free_spawn_cells(world: World) -> list:
    occupants = world.occupants
    return [idx for idx in world.spawn_ring if not occupants.get(idx)]


def _place_agent(world: World, population: int, cell: int) -> int:
    row, col = divmod(cell, world.width)
    agent = Agent(
        world.next_id, population, row, col,
        world.cfg.agents.starting_health,
        world.cfg.forage.starting_food,
        world.cfg.forage.starting_water,
    )
    world.next_id += 1
    world.agents[agent.id] = agent
    bucket = world.occupants.get(cell)
    if bucket is None:
        world.occupants[cell] = [agent]
    else:
        bucket.append(agent)
    return agent.id


def spawn_agent(world: World, population: int) -> Optional[int]:
    """Place a fresh agent on a random unoccupied spawn-ring cell.

    Returns the new agent id, or None when the cap is reached or every ring
    cell is occupied (in which case the spawn retries next tick).
    """
    if len(world.agents) >= world.spawn_cap:
        return None
    free = _free_spawn_cells(world)
    if not free:
        return None
    return _place_agent(world, population, free[int(world.rng.integers(len(free)))])


def _remove_from_cell(world: World, agent: Agent) -> None:
    idx = agent.row * world.width + agent.col
    bucket = world.occupants[idx]
    bucket.remove(agent)
    if not bucket:
        del world.occupants[idx]


def resolve_movement(world: World, agent: Agent, direction: int) -> tuple:
    """Move one cell unless blocked; returns the (possibly unchanged) position.

    Blocked means: frozen, Pass, off-map, stone, or water. Stepping onto lava
    succeeds and is fatal (handled by the caller via the returned tile kind).
    """
    if agent.freeze > 0 or direction == 4:
        return agent.row, agent.col
    dr, dc = _DELTAS[direction]
    nr = agent.row + dr
    nc = agent.col + dc
    if nr < 0 or nc < 0 or nr >= world.height or nc >= world.width:
        return agent.row, agent.col
    kind = world.tiles[nr * world.width + nc]
    if kind == _STONE or kind == _WATER:
        return agent.row, agent.col
    _remove_from_cell(world, agent)
    agent.row = nr
    agent.col = nc
    idx = nr * world.width + nc
    bucket = world.occupants.get(idx)
    if bucket is None:
        world.occupants[idx] = [agent]
    else:
        bucket.append(agent)
    return nr, nc


def select_target(world: World, attacker: Agent, style: int) -> Optional[Agent]:
    """Lowest-health enemy within the style's square range, or None.

    Range r covers the (2r+1) x (2r+1) square centered on the attacker.
    Spawn-immune agents (age below the immunity window) are never targeted;
    ties break by Manhattan distance, then by lower agent id.
    """
    reach = world.styles[style][1]
    immunity = world.cfg.agents.spawn_immunity_ticks
    allow_same = world.cfg.combat.allow_same_population
    occupants = world.occupants
    width = world.width
    ar, ac = attacker.row, attacker.col
    r_lo = ar - reach if ar >= reach else 0
    r_hi = ar + reach
    if r_hi >= world.height:
        r_hi = world.height - 1
    c_lo = ac - reach if ac >= reach else 0
    c_hi = ac + reach
    if c_hi >= width:
        c_hi = width - 1
    best = None
    best_key = None
    my_pop = attacker.population
    my_id = attacker.id
    for row in range(r_lo, r_hi + 1):
        base = row * width
        for col in range(c_lo, c_hi + 1):
            bucket = occupants.get(base + col)
            if not bucket:
                continue
            for other in bucket:
                if other.id == my_id or other.age < immunity:
                    continue
                if not allow_same and other.population == my_pop:
                    continue
                key = (other.health, abs(row - ar) + abs(col - ac), other.id)
                if best_key is None or key < best_key:
                    best_key = key
                    best = other
    return best


def resolve_attack(world: World, attacker: Agent, style: int) -> Optional[AttackEvent]:
    """Apply one attack: damage, food/water theft, and mage freeze."""
    target = select_target(world, attacker, style)
    if target is None:
        return None
    damage, _ = world.styles[style]
    max_food = world.cfg.forage.starting_food
    max_water = world.cfg.forage.starting_water
    stolen_food = damage if target.food >= damage else target.food
    stolen_water = damage if target.water >= damage else target.water
    target.food -= stolen_food
    target.water -= stolen_water
    gain_food = stolen_food
    if attacker.food + gain_food > max_food:
        gain_food = max_food - attacker.food
    gain_water = stolen_water
    if attacker.water + gain_water > max_water:
        gain_water = max_water - attacker.water
    attacker.food += gain_food
    attacker.water += gain_water
    target.health -= damage
    target.last_damage = damage
    if style == 2:
        # Freeze covers the target's next two movement resolutions even when
        # the hit lands before the target's own turn this tick; the counter
        # decrements once at the end of every tick, so boundary observations
        # only ever see 0..2.
        target.freeze = 3
    killed = target.health <= 0
    event = AttackEvent(
        attacker.id, target.id, style, damage, stolen_food, stolen_water,
        gain_food, gain_water, attacker.food, attacker.water, target.age,
        attacker.row, attacker.col, killed,
    )
    if killed:
        target.alive = False
        _remove_from_cell(world, target)
    return event


def harvest(world: World, agent: Agent) -> tuple:
    """Collect food from a forest underfoot and water from adjacent water.

    Returns (food_gained, water_gained, ate_forest); the flag is distinct
    because a full agent still decays the forest it stands on.
    """
    food_gained = 0
    water_gained = 0
    ate_forest = False
    width = world.width
    idx = agent.row * width + agent.col
    tiles = world.tiles
    if tiles[idx] == _FOREST:
        max_food = world.cfg.forage.starting_food
        gain = world.cfg.forage.forest_food
        before = agent.food
        agent.food = before + gain if before + gain < max_food else max_food
        food_gained = agent.food - before
        ate_forest = True
        tiles[idx] = _SCRUB
        world.scrubs[idx] = None
        world.forest_count -= 1
    row, col = agent.row, agent.col
    if (
        (row > 0 and tiles[idx - width] == _WATER)
        or (row + 1 < world.height and tiles[idx + width] == _WATER)
        or (col > 0 and tiles[idx - 1] == _WATER)
        or (col + 1 < width and tiles[idx + 1] == _WATER)
    ):
        max_water = world.cfg.forage.starting_water
        gain = world.cfg.forage.water_gain
        before = agent.water
        agent.water = before + gain if before + gain < max_water else max_water
        water_gained = agent.water - before
    return food_gained, water_gained, ate_forest


def apply_metabolism(world: World, agent: Agent) -> int:
    """Hunger/thirst upkeep for one tick; returns the health delta.

    Starvation damage applies while a stat sits at zero entering the tick;
    the tick a stat merely reaches zero does not yet hurt. Regeneration
    needs both stats above their thresholds after the decrement.
    """
    health_delta = 0
    if agent.food == 0:
        health_delta -= 1
    if agent.water == 0:
        health_delta -= 1
    if agent.food > 0:
        agent.food -= 1
    if agent.water > 0:
        agent.water -= 1
    if health_delta:
        agent.health += health_delta
    elif (
        agent.health < world.cfg.agents.starting_health
        and agent.food > world.cfg.agents.regen_food_threshold
        and agent.water > world.cfg.agents.regen_water_threshold
    ):
        gain = world.cfg.agents.health_regen
        cap = world.cfg.agents.starting_health
        agent.health = agent.health + gain if agent.health + gain < cap else cap
        health_delta = gain
    agent.age += 1
    return health_delta


def step_world(world: World, actions: dict) -> TickEvents:
    """Advance the world one tick; see the module docstring for stage order."""
    events = TickEvents(tick=world.tick)
    agents = world.agents
    cfg = world.cfg

    if len(agents) < world.spawn_cap:
        free = _free_spawn_cells(world)
        if free:
            # The population hook is consulted only when the spawn will land,
            # so fair (round-robin) spawners never lose a turn to a full ring.
            if world.spawn_population is not None:
                population = world.spawn_population(world)
            elif world.n_pop > 1:
                population = int(world.rng.integers(world.n_pop))
            else:
                population = 0
            cell = free[int(world.rng.integers(len(free)))]
            new_id = _place_agent(world, population, cell)
            spawned = agents[new_id]
            events.spawns.append((new_id, spawned.population, spawned.row, spawned.col))

    acting = [a for a in agents.values() if a.id in actions]
    if len(actions) != len(acting):
        known = {a.id for a in acting}
        stray = [i for i in actions if i not in known]
        logger.warning("tick %d: ignoring actions for dead/unknown agents %s", world.tick, stray)
    order = world.rng.permutation(len(acting)) if len(acting) > 1 else range(len(acting))

    combat_on = cfg.combat.enabled
    tiles = world.tiles
    width = world.width
    for i in order:
        agent = acting[i]
        events.rewards.append(agent.id)
        if not agent.alive:
            continue  # killed earlier in the shuffle; remaining actions discarded
        move_dir, attack_style = actions[agent.id]
        old_row = agent.row
        old_col = agent.col
        row, col = resolve_movement(world, agent, move_dir)
        if row != old_row or col != old_col:
            events.moves.append((agent.id, row, col))
            if tiles[row * width + col] == _LAVA:
                # Fatal before the agent can attack or harvest.
                agent.alive = False
                agent.health = 0
                _remove_from_cell(world, agent)
                events.deaths.append(DeathEvent(agent.id, agent.population, "lava", agent.age))
                continue
        if combat_on and attack_style is not None:
            attack = resolve_attack(world, agent, attack_style)
            if attack is not None:
                events.attacks.append(attack)
                if attack.killed:
                    victim = agents[attack.target]
                    events.deaths.append(
                        DeathEvent(victim.id, victim.population, "combat", victim.age)
                    )
        food_gained, water_gained, ate_forest = harvest(world, agent)
        if food_gained or water_gained or ate_forest:
            events.harvests.append((agent.id, food_gained, water_gained, ate_forest))
        starving = agent.food == 0
        apply_metabolism(world, agent)
        if agent.health <= 0:
            agent.alive = False
            _remove_from_cell(world, agent)
            cause = "starvation" if starving else "dehydration"
            events.deaths.append(DeathEvent(agent.id, agent.population, cause, agent.age))

    # Sweep the dead, count freeze down one tick for the living.
    dead = [a.id for a in agents.values() if not a.alive]
    for agent_id in dead:
        del agents[agent_id]
    for agent in agents.values():
        if agent.freeze:
            agent.freeze -= 1

    scrubs = world.scrubs
    if scrubs:
        prob = cfg.forage.scrub_regen_prob
        if prob > 0:
            draws = world.rng.random(len(scrubs))
            regrown = [idx for i, idx in enumerate(scrubs) if draws[i] < prob]
            for idx in regrown:
                tiles[idx] = _FOREST
                del scrubs[idx]
                world.forest_count += 1
            events.regens.extend(regrown)

    world.tick += 1
    if world.replay is not None:
        world.replay.write_tick(events)
    return events


def regen_tiles(world: World) -> int:
    """Stochastic scrub-to-forest regrowth; returns how many cells regrew.

    step_world performs this inline; this entry point exists for direct use
    and for rate tests.
    """
    scrubs = world.scrubs
    if not scrubs:
        return 0
    prob = world.cfg.forage.scrub_regen_prob
    if prob <= 0:
        return 0
    draws = world.rng.random(len(scrubs))
    regrown = [idx for i, idx in enumerate(scrubs) if draws[i] < prob]
    for idx in regrown:
        world.tiles[idx] = _FOREST
        del scrubs[idx]
        world.forest_count += 1
    return len(regrown)
