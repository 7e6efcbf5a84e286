"""
Synthetic indoor world: a grid of square rooms connected by door gaps, with
point landmarks on the wall faces.
"""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from src.validator import WorldConfig

LANDMARK_MARGIN = 0.3


@dataclass(frozen=True)
class WallSegment:
    start: Tuple[float, float]
    end: Tuple[float, float]
    height: float

    @property
    def length(self) -> float:
        return float(np.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1]))


@dataclass(frozen=True)
class SyntheticWorld:
    walls: List[WallSegment]
    landmarks: np.ndarray   # (L, 3)
    normals: np.ndarray     # (L, 3) facing side of the wall face
    seed: int
    room_size: float = 8.0
    rooms_x: int = 1
    rooms_y: int = 1

    @property
    def landmark_ids(self) -> List[str]:
        return [f"L{k:06d}" for k in range(len(self.landmarks))]

    def segment_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        """Wall start points (S, 2) and direction vectors (S, 2)."""
        if not self.walls:
            return np.zeros((0, 2)), np.zeros((0, 2))
        a = np.array([w.start for w in self.walls], dtype=float)
        b = np.array([w.end for w in self.walls], dtype=float)
        return a, b - a

    def room_center(self, i: int, j: int) -> np.ndarray:
        return np.array([(i + 0.5) * self.room_size, (j + 0.5) * self.room_size])


def empty_world(seed: int = 0) -> SyntheticWorld:
    return SyntheticWorld([], np.zeros((0, 3)), np.zeros((0, 3)), seed)


def _wall_with_door(start, end, door: float, height: float) -> List[WallSegment]:
    start, end = np.asarray(start, dtype=float), np.asarray(end, dtype=float)
    length = float(np.linalg.norm(end - start))
    direction = (end - start) / length
    half = 0.5 * (length - door)
    cut_a = start + half * direction
    cut_b = end - half * direction
    return [WallSegment(tuple(start), tuple(cut_a), height), WallSegment(tuple(cut_b), tuple(end), height)]


def room_walls(cfg: WorldConfig) -> List[WallSegment]:
    """Outer boundary pieces per room side, interior walls split by a centred door."""
    s, h = cfg.room_size, cfg.wall_height
    walls: List[WallSegment] = []
    for i in range(cfg.rooms_x):
        walls.append(WallSegment((i * s, 0.0), ((i + 1) * s, 0.0), h))
        walls.append(WallSegment((i * s, cfg.rooms_y * s), ((i + 1) * s, cfg.rooms_y * s), h))
    for j in range(cfg.rooms_y):
        walls.append(WallSegment((0.0, j * s), (0.0, (j + 1) * s), h))
        walls.append(WallSegment((cfg.rooms_x * s, j * s), (cfg.rooms_x * s, (j + 1) * s), h))
    for i in range(1, cfg.rooms_x):
        for j in range(cfg.rooms_y):
            walls.extend(_wall_with_door((i * s, j * s), (i * s, (j + 1) * s), cfg.door_width, h))
    for j in range(1, cfg.rooms_y):
        for i in range(cfg.rooms_x):
            walls.extend(_wall_with_door((i * s, j * s), ((i + 1) * s, j * s), cfg.door_width, h))
    return walls


def build_room_world(cfg: WorldConfig, seed: int = 0) -> SyntheticWorld:
    """
    Room grid with landmarks sampled on every wall face that borders a room.

    Args:
        cfg: World layout and landmark density (per metre of face)
        seed: Landmark sampling seed

    Returns:
        SyntheticWorld; landmarks lie exactly on the wall planes
    """
    rng = np.random.default_rng(seed)
    walls = room_walls(cfg)
    extent = np.array([cfg.rooms_x * cfg.room_size, cfg.rooms_y * cfg.room_size])
    points, normals = [], []
    for wall in walls:
        a, b = np.array(wall.start), np.array(wall.end)
        direction = (b - a) / wall.length
        left = np.array([-direction[1], direction[0]])
        midpoint = 0.5 * (a + b)
        for side in (left, -left):
            sample = midpoint + 0.1 * side
            if np.any(sample <= 0.0) or np.any(sample >= extent):
                continue
            count = max(1, int(round(cfg.landmark_density * wall.length)))
            along = rng.uniform(0.0, wall.length, count)
            z = rng.uniform(LANDMARK_MARGIN, wall.height - LANDMARK_MARGIN, count)
            xy = a + along[:, None] * direction
            points.append(np.column_stack([xy, z]))
            normals.append(np.tile([side[0], side[1], 0.0], (count, 1)))
    landmarks = np.vstack(points) if points else np.zeros((0, 3))
    facing = np.vstack(normals) if normals else np.zeros((0, 3))
    return SyntheticWorld(walls, landmarks, facing, seed, cfg.room_size, cfg.rooms_x, cfg.rooms_y)


def ray_cast(world: SyntheticWorld, origins: np.ndarray, directions: np.ndarray,
             max_range: float) -> np.ndarray:
    """
    Distance along each 2-D ray to the first wall, inf on a miss.

    Args:
        origins: Ray origins (N, 2)
        directions: Unit ray directions (N, 2)
        max_range: Hits beyond this distance count as misses
    """
    origins = np.asarray(origins, dtype=float).reshape(-1, 2)
    directions = np.asarray(directions, dtype=float).reshape(-1, 2)
    ranges = np.full(len(origins), np.inf)
    starts, spans = world.segment_arrays()
    if len(starts) == 0 or len(origins) == 0:
        return ranges
    # o + t d = a + s e
    diff = starts[None, :, :] - origins[:, None, :]
    denom = directions[:, None, 0] * spans[None, :, 1] - directions[:, None, 1] * spans[None, :, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (diff[..., 0] * spans[None, :, 1] - diff[..., 1] * spans[None, :, 0]) / denom
        s = (diff[..., 0] * directions[:, None, 1] - diff[..., 1] * directions[:, None, 0]) / denom
    hit = (np.abs(denom) > 1e-12) & (t > 1e-9) & (s >= 0.0) & (s <= 1.0)
    t = np.where(hit, t, np.inf)
    ranges = t.min(axis=1)
    ranges[ranges > max_range] = np.inf
    return ranges


def occluded(world: SyntheticWorld, eye: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """
    True where the segment from eye to a target crosses a wall before reaching it.
    Walls span the full height, so the test runs in the floor plane.
    """
    targets = np.asarray(targets, dtype=float).reshape(-1, 3)
    if len(targets) == 0:
        return np.zeros(0, dtype=bool)
    delta = targets[:, :2] - np.asarray(eye, dtype=float)[:2]
    dist = np.linalg.norm(delta, axis=1)
    safe = np.where(dist > 0, dist, 1.0)
    ranges = ray_cast(world, np.tile(np.asarray(eye, dtype=float)[:2], (len(targets), 1)),
                      delta / safe[:, None], np.inf)
    return ranges < dist - 1e-6
