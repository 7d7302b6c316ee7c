"""Policy analysis artifacts from replay logs and checkpoints.

Four map families: exploration (visitation counts), niche (per-population
visitation with a colored overlay), dependency (value-head response to a
hypothetical second agent at each visible cell), and attack splats (per-cell
attack counts by style). Every operation is a pure function of its inputs,
and every rendered image is written next to a CSV of the raw grid.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import matplotlib
matplotlib.use("Agg")
import numpy as np
from matplotlib import colormaps
from matplotlib.image import imsave

from .config import Config
from .engine import STYLE_NAMES
from .neural import PolicyParams, forward, stack_observations
from .observations import EncodedObs, ENTITY_FEATURES
from .replay import ReplayError, read_records
from .worldgen import GameMap, TileKind, WALKABLE

# Pixel color per tile kind (grass, forest, scrub, stone, water, lava).
TILE_COLORS = np.array([
    [122, 176, 96],
    [38, 105, 52],
    [153, 147, 86],
    [120, 120, 120],
    [54, 101, 178],
    [214, 88, 24],
], dtype=np.uint8)

POPULATION_COLORS = np.array([
    [230, 60, 60], [60, 110, 230], [240, 200, 50], [150, 70, 200],
    [70, 200, 190], [235, 130, 40], [170, 220, 80], [220, 90, 180],
], dtype=np.uint8)


def _check_header(record: dict, game_map: GameMap) -> None:
    if record["width"] != game_map.width or record["height"] != game_map.height:
        raise ReplayError(
            f"replay is for a {record['width']}x{record['height']} map, "
            f"got {game_map.width}x{game_map.height}")
    if record["map_seed"] != game_map.seed:
        raise ReplayError(
            f"replay map seed {record['map_seed']} != map seed {game_map.seed}")


def exploration_map(replay_path, game_map: GameMap):
    """Per-cell visit counts (spawns and completed moves) plus coverage.

    Coverage is the fraction of walkable cells (grass/forest/scrub) visited
    at least once.
    """
    grid = np.zeros((game_map.height, game_map.width), dtype=np.int64)
    saw_header = False
    for record in read_records(replay_path):
        kind = record["e"]
        if kind == "header":
            _check_header(record, game_map)
            saw_header = True
        elif kind == "spawn" or kind == "move":
            grid[record["r"], record["c"]] += 1
    if not saw_header:
        raise ReplayError(f"{replay_path}: missing header record")
    walkable = np.isin(game_map.kinds, [int(k) for k in WALKABLE])
    coverage = float((grid[walkable] > 0).sum() / walkable.sum())
    return grid, coverage


def niche_map(replay_path, game_map: GameMap, n_pop: int) -> np.ndarray:
    """Stacked per-population visitation grids, shape [n_pop, H, W]."""
    grids = np.zeros((n_pop, game_map.height, game_map.width), dtype=np.int64)
    populations: dict = {}
    saw_header = False
    for record in read_records(replay_path):
        kind = record["e"]
        if kind == "header":
            _check_header(record, game_map)
            saw_header = True
        elif kind == "spawn":
            pop = record["pop"]
            if pop >= n_pop:
                raise ReplayError(
                    f"replay population index {pop} out of range for n_pop={n_pop}")
            populations[record["id"]] = pop
            grids[pop, record["r"], record["c"]] += 1
        elif kind == "move":
            grids[populations[record["id"]], record["r"], record["c"]] += 1
    if not saw_header:
        raise ReplayError(f"{replay_path}: missing header record")
    return grids


def per_lifetime_unique_cells(replay_path) -> list:
    """Unique cells visited by each agent whose death appears in the log."""
    visited: dict = {}
    counts = []
    for record in read_records(replay_path):
        kind = record["e"]
        if kind == "spawn":
            visited[record["id"]] = {(record["r"], record["c"])}
        elif kind == "move":
            visited[record["id"]].add((record["r"], record["c"]))
        elif kind == "death":
            cells = visited.pop(record["id"], None)
            if cells is not None:
                counts.append(len(cells))
    return counts


def niche_overlap(grids: np.ndarray) -> float:
    """Overlap coefficient: sum over cells of the minimum visitation share.

    1.0 means identical distributions, 0.0 means fully disjoint territories.
    """
    totals = grids.reshape(grids.shape[0], -1).sum(axis=1, keepdims=True)
    active = totals[:, 0] > 0
    if not active.any():
        return 0.0
    shares = grids.reshape(grids.shape[0], -1)[active] / totals[active]
    return float(shares.min(axis=0).sum())


def _probe_entity(row, col, drow, dcol, age, same_pop, height, width, lifetime_norm):
    feats = np.zeros(ENTITY_FEATURES)
    feats[0] = min(age / lifetime_norm, 1.0)
    feats[1] = 1.0   # full health
    feats[2] = 1.0   # full food
    feats[3] = 1.0   # full water
    feats[4] = row / (height - 1)
    feats[5] = col / (width - 1)
    span = 2.0 * 7
    feats[6] = (drow + span / 2) / span
    feats[7] = (dcol + span / 2) / span
    feats[9] = 1.0 if same_pop else 0.0
    return feats


def dependency_map(params: PolicyParams, base_tiles: np.ndarray, probe_same: bool,
                   cfg: Config, observer_pos=None, map_shape=None) -> np.ndarray:
    """Value-head response to a second agent at each visible cell.

    base_tiles is the crop of tile kinds around a hypothetical observer with
    full stats. The returned grid holds the value estimate with a probe agent
    (full stats, configured age) at each cell; the center holds the
    probe-free baseline. By default the crop is treated as the whole world;
    pass observer_pos and map_shape to embed it in real map coordinates.
    """
    crop = cfg.observation.crop_size
    if base_tiles.shape != (crop, crop):
        raise ValueError(f"base tile crop must be {crop}x{crop}, got {base_tiles.shape}")
    radius = crop // 2
    if map_shape is None:
        map_shape = (crop, crop)
    if observer_pos is None:
        observer_pos = (radius, radius)
    height, width = map_shape
    lifetime_norm = cfg.observation.lifetime_norm
    probe_age = cfg.analysis.probe_age

    tile_idx = base_tiles.reshape(-1).astype(np.int16)
    base_nents = np.zeros((crop, crop))
    base_nents[radius, radius] = 1
    observer = _probe_entity(observer_pos[0], observer_pos[1], 0, 0, probe_age,
                             True, height, width, lifetime_norm)

    encodings = []
    for r in range(crop):
        for c in range(crop):
            if r == radius and c == radius:
                encodings.append(EncodedObs(
                    tile_idx, np.minimum(base_nents.reshape(-1), 8) / 8.0,
                    observer[None, :]))
                continue
            nents = base_nents.copy()
            nents[r, c] += 1
            drow = r - radius
            dcol = c - radius
            probe = _probe_entity(observer_pos[0] + drow, observer_pos[1] + dcol,
                                  drow, dcol, probe_age, probe_same,
                                  height, width, lifetime_norm)
            encodings.append(EncodedObs(
                tile_idx, np.minimum(nents.reshape(-1), 8) / 8.0,
                np.stack([observer, probe])))
    # Entity features index the map by absolute position; clip keeps probes
    # hanging off the map edge inside [0, 1] like encode() would.
    for e in encodings:
        np.clip(e.entities, 0.0, 1.0, out=e.entities)
    out = forward(params, stack_observations(encodings))
    return out.value.reshape(crop, crop)


def attack_map(replay_path, game_map: GameMap):
    """Per-style grids of attack counts at attacker positions, plus usage shares."""
    grids = {name: np.zeros((game_map.height, game_map.width), dtype=np.int64)
             for name in STYLE_NAMES}
    saw_header = False
    for record in read_records(replay_path):
        kind = record["e"]
        if kind == "header":
            _check_header(record, game_map)
            saw_header = True
        elif kind == "attack":
            grids[record["style"]][record["r"], record["c"]] += 1
    if not saw_header:
        raise ReplayError(f"{replay_path}: missing header record")
    totals = {name: int(g.sum()) for name, g in grids.items()}
    total = sum(totals.values())
    shares = {name: (totals[name] / total if total else 0.0) for name in STYLE_NAMES}
    return grids, shares


def write_grid_csv(grid: np.ndarray, path) -> None:
    """Lossless CSV of a 2D grid, one row per map row."""
    grid = np.asarray(grid)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        for row in grid:
            if np.issubdtype(grid.dtype, np.integer):
                writer.writerow([int(v) for v in row])
            else:
                writer.writerow([repr(float(v)) for v in row])


def read_grid_csv(path, dtype=float) -> np.ndarray:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = [[dtype(v) for v in row] for row in csv.reader(fh) if row]
    return np.array(rows, dtype=dtype)


def render_heatmap(grid: np.ndarray, palette: str, out_path, scale: int = 8):
    """Write a min-max-normalized heatmap PNG and the raw grid CSV beside it.

    Cell (r, c) maps to the scale x scale pixel block at rows r*scale..,
    cols c*scale.. (row 0 at the top). A constant grid renders as the
    palette's zero color. Returns (png_path, csv_path).
    """
    grid = np.asarray(grid, dtype=float)
    if not np.isfinite(grid).all():
        raise ValueError("heatmap grid contains non-finite values")
    lo = grid.min()
    hi = grid.max()
    norm = np.zeros_like(grid) if hi <= lo else (grid - lo) / (hi - lo)
    rgba = (colormaps[palette](norm) * 255).astype(np.uint8)
    pixels = np.kron(rgba, np.ones((scale, scale, 1), dtype=np.uint8))
    out_path = str(out_path)
    imsave(out_path, pixels)
    csv_path = out_path.rsplit(".", 1)[0] + ".csv"
    write_grid_csv(grid, csv_path)
    return out_path, csv_path


def map_rgb(game_map: GameMap) -> np.ndarray:
    """Tile colors as an [H, W, 3] uint8 image."""
    return TILE_COLORS[game_map.kinds]


def render_map(game_map: GameMap, out_path, scale: int = 8) -> str:
    pixels = np.kron(map_rgb(game_map), np.ones((scale, scale, 1), dtype=np.uint8))
    imsave(str(out_path), pixels)
    return str(out_path)


def render_niche_overlay(grids: np.ndarray, game_map: GameMap, out_path,
                         scale: int = 8) -> str:
    """Game map tinted by the most-visiting population, alpha by visit count."""
    base = map_rgb(game_map).astype(float)
    totals = grids.sum(axis=0)
    winner = grids.argmax(axis=0)
    peak = totals.max()
    alpha = (totals / peak)[..., None] if peak > 0 else np.zeros((*totals.shape, 1))
    alpha = np.sqrt(alpha) * 0.85  # compress so sparse trails stay visible
    colors = POPULATION_COLORS[winner % len(POPULATION_COLORS)].astype(float)
    blended = (base * (1 - alpha) + colors * alpha).astype(np.uint8)
    pixels = np.kron(blended, np.ones((scale, scale, 1), dtype=np.uint8))
    imsave(str(out_path), pixels)
    return str(out_path)


@dataclass
class _ReplayState:
    positions: dict
    populations: dict
    tiles: np.ndarray


def render_replay_frames(replay_path, game_map: GameMap, out_dir, scale: int = 8,
                         max_frames: int = None) -> list:
    """Rasterize a replay tick by tick; returns the written frame paths.

    Agents draw as population-colored cells over the evolving tile state
    (harvested forests decay and regrow exactly as logged).
    """
    import os
    os.makedirs(out_dir, exist_ok=True)
    state = _ReplayState({}, {}, game_map.kinds.copy())
    frames = []
    current_tick = None
    saw_header = False

    def flush(tick):
        rgb = TILE_COLORS[state.tiles].copy()
        for agent_id, (r, c) in state.positions.items():
            rgb[r, c] = POPULATION_COLORS[state.populations[agent_id] % len(POPULATION_COLORS)]
        pixels = np.kron(rgb, np.ones((scale, scale, 1), dtype=np.uint8))
        path = os.path.join(out_dir, f"frame_{tick:06d}.png")
        imsave(path, pixels)
        frames.append(path)

    for record in read_records(replay_path):
        kind = record["e"]
        if kind == "header":
            _check_header(record, game_map)
            saw_header = True
            continue
        if not saw_header:
            raise ReplayError(f"{replay_path}: events before header")
        t = record["t"]
        if current_tick is None:
            current_tick = t
        while t > current_tick:
            flush(current_tick)
            if max_frames and len(frames) >= max_frames:
                return frames
            current_tick += 1
        if kind == "spawn":
            state.positions[record["id"]] = (record["r"], record["c"])
            state.populations[record["id"]] = record["pop"]
        elif kind == "move":
            agent_id = record["id"]
            if agent_id not in state.positions:
                raise ReplayError(
                    f"{replay_path}: move for unknown agent {agent_id} at tick {t}")
            state.positions[agent_id] = (record["r"], record["c"])
        elif kind == "harvest":
            if record["forest"]:
                r, c = state.positions[record["id"]]
                state.tiles[r, c] = int(TileKind.SCRUB)
        elif kind == "regen":
            for cell in record["cells"]:
                state.tiles[cell // game_map.width, cell % game_map.width] = int(TileKind.FOREST)
        elif kind == "death":
            state.positions.pop(record["id"], None)
    if current_tick is not None:
        flush(current_tick)
    return frames
