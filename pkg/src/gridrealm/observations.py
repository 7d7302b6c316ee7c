"""Egocentric observations and the action-index mapping.

An observation is a square tile crop centered on the observer plus one
attribute record per visible agent (the observer always included). Encoding
turns that into the network's inputs: integer tile indices (with a distinct
pad index for off-map cells) and a [0, 1]-scaled entity feature matrix.
Building an observation never mutates world state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .engine import ActionPair, Agent, AttackStyle, Move, World

PAD_TILE = 6          # embedding index for off-map cells; real kinds use 0..5
N_TILE_INDICES = 7
ENTITY_FEATURES = 11  # lifetime, health, food, water, row, col, drow, dcol, damage, same_pop, frozen
N_MOVES = 5
N_ATTACKS = 3


class EntityRecord(NamedTuple):
    agent_id: int
    lifetime: int
    health: int
    food: int
    water: int
    row: int
    col: int
    drow: int            # offset observer -> entity
    dcol: int
    damage: int          # most recent damage taken
    same_population: bool
    frozen: bool


@dataclass
class Observation:
    tiles: np.ndarray     # int16 [crop, crop], PAD_TILE outside the map
    nents: np.ndarray     # int16 [crop, crop] occupant counts
    entities: list        # EntityRecord, ascending agent id; observer included
    observer_id: int
    observer_row: int
    observer_col: int


class EncodedObs(NamedTuple):
    tile_idx: np.ndarray  # int16 [crop*crop]
    nents: np.ndarray     # float64 [crop*crop] in [0, 1]
    entities: np.ndarray  # float64 [n_entities, ENTITY_FEATURES] in [0, 1]


def observe(world: World, agent: Agent) -> Observation:
    """Snapshot what `agent` sees this tick."""
    if not agent.alive:
        raise ValueError(f"cannot observe dead agent {agent.id}")
    crop = world.cfg.observation.crop_size
    radius = crop // 2
    height, width = world.height, world.width
    r0 = agent.row - radius
    c0 = agent.col - radius

    tiles = np.full((crop, crop), PAD_TILE, dtype=np.int16)
    rows_in = range(max(r0, 0), min(r0 + crop, height))
    col_lo = max(c0, 0)
    col_hi = min(c0 + crop, width)
    flat = world.tiles
    for r in rows_in:
        base = r * width
        tiles[r - r0, col_lo - c0 : col_hi - c0] = flat[base + col_lo : base + col_hi]

    nents = np.zeros((crop, crop), dtype=np.int16)
    entities = []
    for other in world.agents.values():
        dr = other.row - agent.row
        dc = other.col - agent.col
        if -radius <= dr <= radius and -radius <= dc <= radius:
            nents[dr + radius, dc + radius] += 1
            entities.append(EntityRecord(
                other.id, other.age, other.health, other.food, other.water,
                other.row, other.col, dr, dc, other.last_damage,
                other.population == agent.population,
                other.freeze > 0,
            ))
    return Observation(tiles, nents, entities, agent.id, agent.row, agent.col)


def encode(obs: Observation, height: int, width: int,
           lifetime_norm: float = 1000.0) -> EncodedObs:
    """Normalize an observation into network inputs; every feature in [0, 1]."""
    crop2 = obs.tiles.size
    tile_idx = obs.tiles.reshape(crop2).astype(np.int16)
    nents = np.minimum(obs.nents.reshape(crop2), 8) / 8.0

    n = len(obs.entities)
    feats = np.empty((n, ENTITY_FEATURES))
    radius_span = 2.0 * (obs.tiles.shape[0] // 2)
    for i, e in enumerate(obs.entities):
        feats[i, 0] = e.lifetime / lifetime_norm
        feats[i, 1] = e.health / 10.0
        feats[i, 2] = e.food / 32.0
        feats[i, 3] = e.water / 32.0
        feats[i, 4] = e.row / (height - 1)
        feats[i, 5] = e.col / (width - 1)
        feats[i, 6] = (e.drow + radius_span / 2) / radius_span
        feats[i, 7] = (e.dcol + radius_span / 2) / radius_span
        feats[i, 8] = e.damage / 10.0
        feats[i, 9] = 1.0 if e.same_population else 0.0
        feats[i, 10] = 1.0 if e.frozen else 0.0
    np.clip(feats, 0.0, 1.0, out=feats)
    return EncodedObs(tile_idx, nents, feats)


def decode_action(move_index: int, attack_index: int) -> ActionPair:
    """Head indices -> action pair, in the fixed N/S/E/W/Pass, Melee/Range/Mage order."""
    if not 0 <= move_index < N_MOVES:
        raise ValueError(f"move index {move_index} out of range [0, {N_MOVES})")
    if not 0 <= attack_index < N_ATTACKS:
        raise ValueError(f"attack index {attack_index} out of range [0, {N_ATTACKS})")
    return ActionPair(Move(move_index), AttackStyle(attack_index))
