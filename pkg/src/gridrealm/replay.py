"""Replay logs: newline-delimited JSON, one record per world event.

Record schema (all integer fields unless noted):

  header   {"e":"header", "width", "height", "map_seed", "world_seed",
            "spawn_cap", "n_pop"}
  spawn    {"e":"spawn",   "t", "id", "pop", "r", "c"}
  move     {"e":"move",    "t", "id", "r", "c"}            # new position
  harvest  {"e":"harvest", "t", "id", "food", "water", "forest": bool}
  attack   {"e":"attack",  "t", "id", "target", "style": str, "dmg",
            "sf", "sw", "r", "c", "tage"}                  # r,c = attacker cell
  death    {"e":"death",   "t", "id", "pop", "cause": str, "life"}
  regen    {"e":"regen",   "t", "cells": [flat indices]}

Keys are serialized sorted with compact separators, so identical simulations
produce byte-identical logs.
"""

from __future__ import annotations

import json
from typing import Iterator

from .engine import STYLE_NAMES, TickEvents, World


class ReplayError(Exception):
    """Malformed replay input; carries the offending line number when known."""


def _dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


class ReplayWriter:
    """Appends world events to a newline-delimited JSON log."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w", encoding="utf-8")

    def write_header(self, world: World) -> None:
        self._fh.write(_dumps({
            "e": "header",
            "width": world.width,
            "height": world.height,
            "map_seed": world.map.seed,
            "world_seed": world.seed,
            "spawn_cap": world.spawn_cap,
            "n_pop": world.n_pop,
        }) + "\n")

    def write_tick(self, events: TickEvents) -> None:
        t = events.tick
        out = []
        for agent_id, pop, r, c in events.spawns:
            out.append(_dumps({"e": "spawn", "t": t, "id": agent_id, "pop": pop, "r": r, "c": c}))
        for agent_id, r, c in events.moves:
            out.append(_dumps({"e": "move", "t": t, "id": agent_id, "r": r, "c": c}))
        for agent_id, food, water, forest in events.harvests:
            out.append(_dumps({
                "e": "harvest", "t": t, "id": agent_id,
                "food": food, "water": water, "forest": forest,
            }))
        for a in events.attacks:
            out.append(_dumps({
                "e": "attack", "t": t, "id": a.attacker, "target": a.target,
                "style": STYLE_NAMES[a.style], "dmg": a.damage,
                "sf": a.stolen_food, "sw": a.stolen_water,
                "r": a.row, "c": a.col, "tage": a.target_age,
            }))
        for d in events.deaths:
            out.append(_dumps({
                "e": "death", "t": t, "id": d.agent, "pop": d.population,
                "cause": d.cause, "life": d.lifetime,
            }))
        if events.regens:
            out.append(_dumps({"e": "regen", "t": t, "cells": list(events.regens)}))
        if out:
            self._fh.write("\n".join(out) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_records(path) -> Iterator[dict]:
    """Yield parsed records; raises ReplayError with the 1-based line number."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ReplayError(f"{path}: malformed record at line {lineno}: {exc}") from exc
            if not isinstance(record, dict) or "e" not in record:
                raise ReplayError(f"{path}: record at line {lineno} has no event type")
            yield record


def read_header(path) -> dict:
    for record in read_records(path):
        if record["e"] == "header":
            return record
        break
    raise ReplayError(f"{path}: missing header record")
