"""Agents for the BombRush loop: the act() contract, scripted policies, and the action parser."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Protocol

from ._rng import substream
from .chronometry import ApproxCounter, TokenCounter
from .gridworld import (
    DIRECTION_ORDER,
    Direction,
    GridMap,
    Position,
    Signal,
    bfs_distances,
)


class AgentFailure(RuntimeError):
    """The agent could not produce any output (e.g. the model endpoint stayed down)."""


class ActionKind(Enum):
    MOVE = "move"
    DETECT = "detect"
    NOOP = "noop"


@dataclass
class Observation:
    step_index: int
    size: int
    agent: Position
    walls: list
    map_render: str
    signal: Optional[Signal] = None
    remaining_seconds: Optional[float] = None
    last_round_tokens: Optional[int] = None
    last_round_seconds: Optional[float] = None
    detect_allowed: bool = False
    # Only filled in for agents that declare ``privileged = True`` (oracles).
    target_truth: Optional[Position] = None
    # Chat messages prepared by the episode under its context policy.
    messages: list = field(default_factory=list)

    def grid(self) -> GridMap:
        return GridMap(self.size, frozenset(Position(*w) for w in self.walls),
                       self.agent, self.agent, 0)


@dataclass
class AgentAction:
    kind: ActionKind
    direction: Optional[Direction] = None
    reasoning: str = ""
    parsed_ok: bool = True
    usage: Optional[dict] = None

    @classmethod
    def move(cls, d: Direction, reasoning: str = "") -> "AgentAction":
        return cls(ActionKind.MOVE, d, reasoning)

    @classmethod
    def detect(cls, reasoning: str = "") -> "AgentAction":
        return cls(ActionKind.DETECT, None, reasoning)

    @property
    def label(self) -> str:
        if self.kind is ActionKind.MOVE:
            return self.direction.name
        return self.kind.name

    def to_dict(self) -> dict:
        return {"kind": self.kind.value,
                "direction": self.direction.value if self.direction else None,
                "parsed_ok": self.parsed_ok}


class Agent(Protocol):
    name: str
    privileged: bool

    def reset(self, seed: int) -> None: ...

    def act(self, obs: Observation) -> AgentAction: ...


# --- parsing -----------------------------------------------------------------

_WORDS = {
    "up": Direction.NORTH, "north": Direction.NORTH,
    "down": Direction.SOUTH, "south": Direction.SOUTH,
    "left": Direction.WEST, "west": Direction.WEST,
    "right": Direction.EAST, "east": Direction.EAST,
    "detect": None,
}
_TOKEN_RE = re.compile(r"\b(up|north|down|south|left|west|right|east|detect)\b", re.IGNORECASE)
_LABEL_RE = re.compile(r"^[\s>*_#`-]*action[\s*_`]*[:=]\s*(.*)$", re.IGNORECASE | re.MULTILINE)
_FENCE_RE = re.compile(r"```[^\n]*\n?(.*?)```", re.DOTALL)
_THINK_RE = re.compile(r"<think>.*?</think>", re.DOTALL | re.IGNORECASE)


def _token(text: str, first: bool = False) -> Optional[str]:
    found = _TOKEN_RE.findall(text)
    if not found:
        return None
    return (found[0] if first else found[-1]).lower()


def parse_action(raw_text: str, allow_detect: bool = False) -> AgentAction:
    """Extract the action from free-form model output; never raises.

    Search order: the last ``Action:`` line, then the last fenced block, then
    the whole reply (text after a closing ``</think>`` tag is preferred). On
    an ``Action:`` line the first action word counts ("EAST, then north"
    means EAST); elsewhere the last one does. When nothing usable is found
    the result is a stationary NOOP with ``parsed_ok=False``.
    """
    text = raw_text or ""
    visible = _THINK_RE.sub(" ", text)
    if "</think>" in visible.lower():
        visible = visible[visible.lower().rfind("</think>") + len("</think>"):]
    word = None
    for region, first in (
        ([m.group(1) for m in _LABEL_RE.finditer(visible)], True),
        ([m.group(1) for m in _FENCE_RE.finditer(visible)], False),
        ([visible], False),
        ([text], False),
    ):
        for chunk in reversed(region):
            word = _token(chunk, first)
            if word:
                break
        if word:
            break
    if word is None or (word == "detect" and not allow_detect):
        return AgentAction(ActionKind.NOOP, None, text, parsed_ok=False)
    if word == "detect":
        return AgentAction(ActionKind.DETECT, None, text)
    return AgentAction(ActionKind.MOVE, _WORDS[word], text)


# --- scripted agents ------------------------------------------------------------

def padded_text(head: str, n_tokens: int, counter: TokenCounter) -> str:
    """``head`` plus filler so that ``counter.count`` reaches ``n_tokens`` (never below ``head``)."""
    if n_tokens <= 0:
        return ""
    if counter.count(head) >= n_tokens:
        return head
    unit = " tick"
    hi = 1
    while counter.count(head + unit * hi) < n_tokens:
        hi *= 2
    filler_full = unit * hi
    lo, hi = 0, len(filler_full)
    while lo < hi:
        mid = (lo + hi) // 2
        if counter.count(head + filler_full[:mid]) >= n_tokens:
            hi = mid
        else:
            lo = mid + 1
    return head + filler_full[:lo]


class ScriptedAgent:
    """Base for model-free policies that optionally emit reasoning of a fixed token length."""

    name = "scripted"
    privileged = False

    def __init__(self, reasoning_tokens: int = 0, counter: TokenCounter | None = None):
        self.reasoning_tokens = reasoning_tokens
        self.counter = counter or ApproxCounter()
        self._text_cache: dict[str, str] = {}

    def reset(self, seed: int) -> None:
        pass

    def choose(self, obs: Observation) -> AgentAction:
        raise NotImplementedError

    def act(self, obs: Observation) -> AgentAction:
        action = self.choose(obs)
        key = action.label
        if key not in self._text_cache:
            self._text_cache[key] = padded_text(f"Action: {key}\n", self.reasoning_tokens, self.counter)
        action.reasoning = self._text_cache[key]
        return action


class BfsOptimalAgent(ScriptedAgent):
    """Oracle that sees the true target and steps along a shortest path (N>E>S>W tie order)."""

    name = "bfs-oracle"
    privileged = True

    def choose(self, obs: Observation) -> AgentAction:
        if obs.target_truth is None:
            raise AgentFailure("bfs-oracle needs the true target position")
        grid = obs.grid()
        dist = bfs_distances(grid, obs.target_truth)
        here = dist.get(obs.agent)
        if here is None or here == 0:
            return AgentAction(ActionKind.NOOP, None, parsed_ok=True)
        for d in DIRECTION_ORDER:
            q = obs.agent.offset(d)
            if dist.get(q) == here - 1:
                return AgentAction.move(d)
        raise AssertionError("BFS distance field has no descending neighbour")


class GreedySignalAgent(ScriptedAgent):
    """Follow the bearing of the freshest signal; detect when it has gone stale."""

    name = "greedy"

    def __init__(self, reasoning_tokens: int = 0, counter: TokenCounter | None = None,
                 stale_after: int = 2):
        super().__init__(reasoning_tokens, counter)
        self.stale_after = stale_after
        self._last: Optional[Signal] = None
        self._age = 0

    def reset(self, seed: int) -> None:
        self._last, self._age = None, 0

    def choose(self, obs: Observation) -> AgentAction:
        if obs.signal is not None:
            self._last, self._age = obs.signal, 0
        else:
            self._age += 1
        if obs.detect_allowed and (self._last is None or self._age >= self.stale_after):
            return AgentAction.detect()
        if self._last is None:
            return AgentAction(ActionKind.NOOP, None)
        grid = obs.grid()
        for d in self._last.bearing.components:
            if grid.is_open(obs.agent.offset(d)):
                return AgentAction.move(d)
        for d in DIRECTION_ORDER:
            if grid.is_open(obs.agent.offset(d)):
                return AgentAction.move(d)
        return AgentAction(ActionKind.NOOP, None)


class RandomAgent(ScriptedAgent):
    name = "random"

    def __init__(self, seed: int = 0, reasoning_tokens: int = 0, counter: TokenCounter | None = None):
        super().__init__(reasoning_tokens, counter)
        self.seed = seed
        self._rng = substream(seed, "agent")

    def reset(self, seed: int) -> None:
        self._rng = substream(self.seed, "agent", seed)

    def choose(self, obs: Observation) -> AgentAction:
        return AgentAction.move(DIRECTION_ORDER[self._rng.randrange(4)])


class LlmAgent:
    """Sends the episode-prepared messages through a gateway and parses the reply."""

    name = "llm"
    privileged = False

    def __init__(self, gateway, model_id: str, temperature: float = 0.0,
                 max_output_tokens: int | None = None, reprompt: bool = False):
        self.gateway = gateway
        self.model_id = model_id
        self.temperature = temperature
        self.max_output_tokens = max_output_tokens
        self.reprompt = reprompt
        self._seed = 0

    def reset(self, seed: int) -> None:
        self._seed = seed

    def _ask(self, messages: list, step: int):
        from .gateway import ChatRequest, GatewayError

        req = ChatRequest(self.model_id, messages, self.temperature,
                          self.max_output_tokens, seed_hint=self._seed * 1000 + step)
        try:
            return self.gateway.complete(req)
        except GatewayError as exc:
            raise AgentFailure(str(exc)) from exc

    def act(self, obs: Observation) -> AgentAction:
        resp = self._ask(obs.messages, obs.step_index)
        action = parse_action(resp.text, obs.detect_allowed)
        action.usage = resp.reported_usage
        if not action.parsed_ok and self.reprompt:
            retry_msgs = obs.messages + [
                {"role": "assistant", "content": resp.text},
                {"role": "user", "content": REPROMPT},
            ]
            resp2 = self._ask(retry_msgs, obs.step_index + 500)
            second = parse_action(resp2.text, obs.detect_allowed)
            second.reasoning = resp.text + "\n" + resp2.text
            return second
        return action


REPROMPT = ("Your previous reply did not contain a valid action. "
            "Reply with a single line of the form 'Action: <NORTH|SOUTH|EAST|WEST>'.")
