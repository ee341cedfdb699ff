"""N x N BombRush world: walls, an agent, and a treasure or bomb that emits signals.

Coordinates are ``(row, col)`` with row 0 at the north edge and col 0 at the
west edge. All state objects are immutable; transitions return new states.
"""
from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, NamedTuple, Optional

from ._rng import substream

DEFAULT_SIZE = 8
DEFAULT_WALL_DENSITY = 0.15
DEFAULT_MIN_SEPARATION = 4
MAX_GENERATION_ATTEMPTS = 1000
BOMB_MOVE_PERIOD = 3


class GenerationExhausted(RuntimeError):
    pass


class DetectUnavailable(RuntimeError):
    pass


class Position(NamedTuple):
    row: int
    col: int

    def offset(self, d: "Direction") -> "Position":
        dr, dc = d.delta
        return Position(self.row + dr, self.col + dc)


class Direction(Enum):
    NORTH = "North"
    EAST = "East"
    SOUTH = "South"
    WEST = "West"

    @property
    def delta(self) -> tuple[int, int]:
        return _DELTAS[self]


_DELTAS = {
    Direction.NORTH: (-1, 0),
    Direction.EAST: (0, 1),
    Direction.SOUTH: (1, 0),
    Direction.WEST: (0, -1),
}

# Fixed N > E > S > W order used wherever a deterministic tie-break is needed.
DIRECTION_ORDER = (Direction.NORTH, Direction.EAST, Direction.SOUTH, Direction.WEST)


class Bearing(Enum):
    N = "N"
    NE = "NE"
    E = "E"
    SE = "SE"
    S = "S"
    SW = "SW"
    W = "W"
    NW = "NW"
    HERE = "Here"

    @property
    def components(self) -> tuple[Direction, ...]:
        """Cardinal directions that make progress toward this bearing, in N>E>S>W order."""
        comp = {
            "N": (Direction.NORTH,), "E": (Direction.EAST,), "S": (Direction.SOUTH,),
            "W": (Direction.WEST,), "NE": (Direction.NORTH, Direction.EAST),
            "SE": (Direction.EAST, Direction.SOUTH), "SW": (Direction.SOUTH, Direction.WEST),
            "NW": (Direction.NORTH, Direction.WEST), "Here": (),
        }
        return comp[self.value]


# Counter-clockwise from east, 45 degrees apart.
_OCTANTS = (Bearing.E, Bearing.NE, Bearing.N, Bearing.NW, Bearing.W, Bearing.SW, Bearing.S, Bearing.SE)


class TargetKind(Enum):
    TREASURE = "Treasure"
    BOMB = "Bomb"


class SignalMode(Enum):
    PASSIVE = "Passive"
    ACTIVE_DETECT = "ActiveDetect"


@dataclass(frozen=True)
class Signal:
    distance: int
    bearing: Bearing

    def to_dict(self) -> dict:
        return {"distance": self.distance, "bearing": self.bearing.value}


@dataclass(frozen=True)
class GridMap:
    size: int
    walls: frozenset
    agent_start: Position
    target_start: Position
    seed: int

    def in_bounds(self, p: Position) -> bool:
        return 0 <= p.row < self.size and 0 <= p.col < self.size

    def is_open(self, p: Position) -> bool:
        return self.in_bounds(p) and p not in self.walls

    def neighbors(self, p: Position) -> Iterable[Position]:
        for d in DIRECTION_ORDER:
            q = p.offset(d)
            if self.is_open(q):
                yield q

    def sorted_walls(self) -> list[Position]:
        return sorted(self.walls)

    def render(self, agent: Optional[Position] = None, target: Optional[Position] = None) -> str:
        """Text grid: ``#`` wall, ``A`` agent, ``T`` target (when given), ``.`` open."""
        rows = []
        for r in range(self.size):
            cells = []
            for c in range(self.size):
                p = Position(r, c)
                if p == agent:
                    cells.append("A")
                elif p == target:
                    cells.append("T")
                elif p in self.walls:
                    cells.append("#")
                else:
                    cells.append(".")
            rows.append(" ".join(cells))
        return "\n".join(rows)

    def to_dict(self) -> dict:
        return {
            "size": self.size,
            "walls": [list(w) for w in self.sorted_walls()],
            "agent_start": list(self.agent_start),
            "target_start": list(self.target_start),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridMap":
        return cls(
            size=int(d["size"]),
            walls=frozenset(Position(*w) for w in d["walls"]),
            agent_start=Position(*d["agent_start"]),
            target_start=Position(*d["target_start"]),
            seed=int(d.get("seed", 0)),
        )


@dataclass(frozen=True)
class EnvState:
    map: GridMap
    agent: Position
    target: Position
    step_index: int = 0
    target_kind: TargetKind = TargetKind.TREASURE
    signal_mode: SignalMode = SignalMode.PASSIVE
    last_detection: Optional[tuple[Signal, int]] = None
    last_blocked: bool = False

    @classmethod
    def initial(cls, grid: GridMap, target_kind=TargetKind.TREASURE,
                signal_mode=SignalMode.PASSIVE) -> "EnvState":
        return cls(grid, grid.agent_start, grid.target_start,
                   target_kind=target_kind, signal_mode=signal_mode)

    def to_dict(self, signal: Optional[Signal] = None) -> dict:
        """JSON-ready view handed to the user prompt; the target cell is never included."""
        return {
            "size": self.map.size,
            "walls": [list(w) for w in self.map.sorted_walls()],
            "agent": list(self.agent),
            "target_kind": self.target_kind.value,
            "signal": signal.to_dict() if signal else None,
            "step_index": self.step_index,
        }


def manhattan(a: Position, b: Position) -> int:
    return abs(a.row - b.row) + abs(a.col - b.col)


def bfs_distances(grid: GridMap, source: Position) -> dict:
    """Shortest 4-connected wall-avoiding distance from ``source`` to every reachable cell."""
    dist = {source: 0}
    queue = deque([source])
    while queue:
        p = queue.popleft()
        for q in grid.neighbors(p):
            if q not in dist:
                dist[q] = dist[p] + 1
                queue.append(q)
    return dist


def generate_map(seed: int, n: int = DEFAULT_SIZE, wall_density: float = DEFAULT_WALL_DENSITY,
                 min_separation: int = DEFAULT_MIN_SEPARATION,
                 max_attempts: int = MAX_GENERATION_ATTEMPTS) -> GridMap:
    """Draw walls and start cells from seeded streams, rejecting invalid layouts.

    Wall count is ``floor(wall_density * n * n)``. The agent and target starts
    are distinct open cells at least ``min_separation`` apart (capped at the
    map diameter) with a wall-free path between them.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if not 0 <= wall_density < 1:
        raise ValueError("wall_density must be in [0, 1)")
    n_walls = math.floor(wall_density * n * n)
    if n * n - n_walls < 2:
        raise GenerationExhausted(f"density {wall_density} leaves fewer than two open cells")
    separation = min(min_separation, 2 * (n - 1))
    cells = [Position(r, c) for r in range(n) for c in range(n)]
    wall_rng = substream(seed, "map")
    place_rng = substream(seed, "placement")
    for _ in range(max_attempts):
        walls = frozenset(wall_rng.sample(cells, n_walls))
        free = [p for p in cells if p not in walls]
        agent, target = place_rng.sample(free, 2)
        if manhattan(agent, target) < separation:
            continue
        grid = GridMap(n, walls, agent, target, seed)
        if target in bfs_distances(grid, agent):
            return grid
    raise GenerationExhausted(f"no valid map after {max_attempts} attempts (n={n}, density={wall_density})")


def emit_signal(agent: Position, target: Position) -> Signal:
    dr = target.row - agent.row
    dc = target.col - agent.col
    if dr == 0 and dc == 0:
        return Signal(0, Bearing.HERE)
    # Rows grow southward, so north is -dr. Integer deltas never land exactly on
    # an octant boundary (tan 22.5 deg is irrational); pure axes map to cardinals.
    angle = math.degrees(math.atan2(-dr, dc)) % 360.0
    octant = int(((angle + 22.5) % 360.0) // 45.0)
    return Signal(abs(dr) + abs(dc), _OCTANTS[octant])


def apply_move(state: EnvState, direction: Direction) -> EnvState:
    dest = state.agent.offset(direction)
    blocked = not state.map.is_open(dest)
    return replace(
        state,
        agent=state.agent if blocked else dest,
        step_index=state.step_index + 1,
        last_blocked=blocked,
    )


def apply_wait(state: EnvState) -> EnvState:
    """Consume a step without moving (parse failures and voided actions)."""
    return replace(state, step_index=state.step_index + 1, last_blocked=False)


def apply_detect(state: EnvState) -> tuple[EnvState, Signal]:
    if state.signal_mode is not SignalMode.ACTIVE_DETECT:
        raise DetectUnavailable("detection is only available in active-detection settings")
    sig = emit_signal(state.agent, state.target)
    new = replace(state, step_index=state.step_index + 1, last_blocked=False,
                  last_detection=(sig, state.step_index + 1))
    return new, sig


def bomb_moves_now(step_index: int) -> bool:
    """True right after agent actions 3, 6, 9, ..."""
    return step_index > 0 and step_index % BOMB_MOVE_PERIOD == 0


def move_target(state: EnvState, rng: random.Random) -> EnvState:
    """One random cardinal step for the bomb; walls and edges block, the agent's cell is avoided."""
    if state.target_kind is not TargetKind.BOMB:
        raise ValueError("only a bomb can move")
    for attempt in range(2):
        d = DIRECTION_ORDER[rng.randrange(4)]
        dest = state.target.offset(d)
        if not state.map.is_open(dest):
            return state
        if dest != state.agent:
            return replace(state, target=dest)
    return state
