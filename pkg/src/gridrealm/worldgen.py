"""Procedural map generation: thresholded ridge fractals over gradient noise.

Maps are square tile grids. The outermost ring is always lava (a hard world
boundary that kills wanderers) and the ring just inside it is always grass;
that grass ring is where new agents spawn. The interior is classified from a
ridge fractal: low values become water, then grass, forest, and stone bands.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .config import ConfigError, WorldgenConfig


class TileKind(IntEnum):
    GRASS = 0
    FOREST = 1
    SCRUB = 2
    STONE = 3
    WATER = 4
    LAVA = 5


# Tiles an agent can stand on without dying. Lava is enterable but fatal;
# water and stone block movement.
WALKABLE = frozenset({TileKind.GRASS, TileKind.FOREST, TileKind.SCRUB})
BLOCKING = frozenset({TileKind.STONE, TileKind.WATER})

TILE_CHARS = "GFSRWL"  # grass, forest, scrub, rock(stone), water, lava
_CHAR_TO_KIND = {c: TileKind(i) for i, c in enumerate(TILE_CHARS)}


class GenerationError(Exception):
    """Raised when no acceptable map could be generated within the retry budget."""


@dataclass(frozen=True)
class FractalParams:
    octaves: int = 6
    base_frequency: float = 0.03125
    lacunarity: float = 2.0
    persistence: float = 0.5
    # (upper height cutoff, kind) bands, strictly increasing, last cutoff 1.0
    thresholds: tuple = (
        (0.30, TileKind.WATER),
        (0.57, TileKind.GRASS),
        (0.715, TileKind.FOREST),
        (1.0, TileKind.STONE),
    )

    def __post_init__(self):
        if self.octaves < 1:
            raise ConfigError("fractal octaves must be >= 1")
        if self.base_frequency <= 0:
            raise ConfigError("fractal base_frequency must be > 0")
        if self.lacunarity <= 0 or self.persistence <= 0:
            raise ConfigError("fractal lacunarity and persistence must be > 0")
        cutoffs = [c for c, _ in self.thresholds]
        if not cutoffs or cutoffs[-1] != 1.0:
            raise ConfigError("threshold cutoffs must end at 1.0")
        if any(b <= a for a, b in zip(cutoffs, cutoffs[1:])):
            raise ConfigError("threshold cutoffs must be strictly increasing")

    @classmethod
    def from_config(cls, wg: WorldgenConfig) -> "FractalParams":
        return cls(
            octaves=wg.octaves,
            base_frequency=wg.base_frequency,
            lacunarity=wg.lacunarity,
            persistence=wg.persistence,
            thresholds=(
                (wg.water_threshold, TileKind.WATER),
                (wg.grass_threshold, TileKind.GRASS),
                (wg.forest_threshold, TileKind.FOREST),
                (1.0, TileKind.STONE),
            ),
        )


@dataclass
class GameMap:
    width: int
    height: int
    seed: int
    kinds: np.ndarray  # int8 [height, width]

    def counts(self) -> dict:
        tally = np.bincount(self.kinds.ravel(), minlength=len(TileKind))
        return {TileKind(i): int(n) for i, n in enumerate(tally)}

    def spawn_cells(self) -> list:
        """Cells of the spawn ring (the ring one tile in from the border)."""
        h, w = self.height, self.width
        cells = [(1, c) for c in range(1, w - 1)]
        cells += [(h - 2, c) for c in range(1, w - 1)]
        cells += [(r, 1) for r in range(2, h - 2)]
        cells += [(r, w - 2) for r in range(2, h - 2)]
        return cells

    def to_text(self) -> str:
        rows = ["".join(TILE_CHARS[k] for k in row) for row in self.kinds]
        return f"{self.width} {self.height} {self.seed}\n" + "\n".join(rows) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GameMap":
        lines = text.splitlines()
        if not lines:
            raise ValueError("empty map file")
        parts = lines[0].split()
        if len(parts) != 3:
            raise ValueError(f"bad map header {lines[0]!r}: expected 'width height seed'")
        width, height, seed = int(parts[0]), int(parts[1]), int(parts[2])
        rows = lines[1 : 1 + height]
        if len(rows) != height:
            raise ValueError(f"map body has {len(rows)} rows, header says {height}")
        kinds = np.zeros((height, width), dtype=np.int8)
        for r, row in enumerate(rows):
            if len(row) != width:
                raise ValueError(f"map row {r} has {len(row)} cells, header says {width}")
            for c, ch in enumerate(row):
                if ch not in _CHAR_TO_KIND:
                    raise ValueError(f"unknown tile character {ch!r} at row {r} col {c}")
                kinds[r, c] = _CHAR_TO_KIND[ch]
        return cls(width=width, height=height, seed=seed, kinds=kinds)


def save_map(game_map: GameMap, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(game_map.to_text())


def load_map(path) -> GameMap:
    with open(path, "r", encoding="utf-8") as fh:
        return GameMap.from_text(fh.read())


# Unit-length gradient directions for lattice noise.
_GRADS = np.array(
    [
        (1, 0), (-1, 0), (0, 1), (0, -1),
        (0.7071067811865476, 0.7071067811865476),
        (-0.7071067811865476, 0.7071067811865476),
        (0.7071067811865476, -0.7071067811865476),
        (-0.7071067811865476, -0.7071067811865476),
    ]
)


def _perlin_grid(perm: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Gradient noise sampled on the meshgrid of xs (cols) and ys (rows)."""
    x = xs[None, :]
    y = ys[:, None]
    xi = np.floor(x).astype(np.int64)
    yi = np.floor(y).astype(np.int64)
    xf = x - xi
    yf = y - yi
    u = xf * xf * xf * (xf * (xf * 6 - 15) + 10)
    v = yf * yf * yf * (yf * (yf * 6 - 15) + 10)

    def corner(dx, dy):
        gi = perm[(perm[(xi + dx) & 255] + ((yi + dy) & 255)) & 255] & 7
        g = _GRADS[gi]
        return g[..., 0] * (xf - dx) + g[..., 1] * (yf - dy)

    n00 = corner(0, 0)
    n10 = corner(1, 0)
    n01 = corner(0, 1)
    n11 = corner(1, 1)
    nx0 = n00 + u * (n10 - n00)
    nx1 = n01 + u * (n11 - n01)
    return nx0 + v * (nx1 - nx0)


def ridge_fractal(seed: int, width: int, height: int, params: FractalParams) -> np.ndarray:
    """Multi-octave ridged noise field in [0, 1], deterministic in its arguments.

    Each octave is folded (1 - |noise|) before weighted summation, which turns
    the zero crossings of the raw noise into sharp ridges. The sum is then
    stretched so its 2nd percentile lands at 0 and its maximum at 1 (clipped
    below). Folding thins the low tail badly on some seeds; anchoring the
    stretch at a low percentile instead of the minimum keeps the bottom
    threshold band (water) from collapsing to a handful of cells.
    """
    if width <= 0 or height <= 0:
        raise ConfigError("field dimensions must be positive")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(256)
    total = np.zeros((height, width))
    amplitude = 1.0
    frequency = params.base_frequency
    weight = 0.0
    for _ in range(params.octaves):
        # Per-octave offsets decorrelate octaves sampled from one lattice.
        ox, oy = rng.uniform(0.0, 256.0, size=2)
        xs = np.arange(width) * frequency + ox
        ys = np.arange(height) * frequency + oy
        noise = _perlin_grid(perm, xs, ys)
        total += amplitude * (1.0 - np.abs(noise))
        weight += amplitude
        amplitude *= params.persistence
        frequency *= params.lacunarity
    total /= weight
    lo = np.percentile(total, 2.0)
    hi = total.max()
    if hi - lo < 1e-12:
        return np.full((height, width), 0.5)
    return np.clip((total - lo) / (hi - lo), 0.0, 1.0)


def classify_tile(h: float, thresholds) -> TileKind:
    """Kind of the band containing h; a boundary value belongs to the upper band."""
    for cutoff, kind in thresholds[:-1]:
        if h < cutoff:
            return kind
    return thresholds[-1][1]


def _classify_field(field: np.ndarray, thresholds) -> np.ndarray:
    cutoffs = np.array([c for c, _ in thresholds])
    kinds = np.array([int(k) for _, k in thresholds], dtype=np.int8)
    idx = np.searchsorted(cutoffs, field, side="right")
    np.clip(idx, 0, len(kinds) - 1, out=idx)
    return kinds[idx]


def _reachability_ok(kinds: np.ndarray) -> bool:
    """Every spawn cell must reach a forest and a water-adjacent cell on foot."""
    h, w = kinds.shape
    walkable = (
        (kinds == TileKind.GRASS) | (kinds == TileKind.FOREST) | (kinds == TileKind.SCRUB)
    )
    seen = np.zeros_like(walkable)
    queue = deque()
    # The spawn ring is solid grass, hence connected; flooding from it covers
    # everything any spawn cell can reach.
    for c in range(1, w - 1):
        queue.append((1, c))
        seen[1, c] = True
    found_forest = False
    found_water_adjacent = False
    while queue:
        r, c = queue.popleft()
        if kinds[r, c] == TileKind.FOREST:
            found_forest = True
        if not found_water_adjacent:
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                if kinds[r + dr, c + dc] == TileKind.WATER:
                    found_water_adjacent = True
                    break
        if found_forest and found_water_adjacent:
            return True
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and walkable[nr, nc] and not seen[nr, nc]:
                seen[nr, nc] = True
                queue.append((nr, nc))
    return False


def generate_map(seed: int, size: int, params: FractalParams, retry_budget: int = 16) -> GameMap:
    """Generate a size x size map, retrying with sub-seeds until spawnable.

    A map is acceptable when agents starting anywhere on the spawn ring can
    walk to at least one forest tile and one water-adjacent tile.
    """
    if size < 16:
        raise ConfigError(f"map size must be >= 16, got {size}")
    for attempt in range(retry_budget):
        sub_seed = int(np.random.SeedSequence((seed, attempt)).generate_state(1)[0])
        field = ridge_fractal(sub_seed, size, size, params)
        kinds = _classify_field(field, params.thresholds)
        kinds[0, :] = TileKind.LAVA
        kinds[-1, :] = TileKind.LAVA
        kinds[:, 0] = TileKind.LAVA
        kinds[:, -1] = TileKind.LAVA
        kinds[1, 1:-1] = TileKind.GRASS
        kinds[-2, 1:-1] = TileKind.GRASS
        kinds[1:-1, 1] = TileKind.GRASS
        kinds[1:-1, -2] = TileKind.GRASS
        if _reachability_ok(kinds):
            return GameMap(width=size, height=size, seed=seed, kinds=kinds)
    raise GenerationError(
        f"no spawnable map for seed {seed} within {retry_budget} attempts"
    )
