"""One BombRush simulation: prompts, the observe/act/charge/step loop, outcomes and logs."""
from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional

from ._assets import TemplateMissing, load_template
from ._rng import substream
from .agents import ActionKind, AgentAction, AgentFailure, Observation
from .chronometry import (
    DEFAULT_BUDGET_SECONDS,
    ApproxCounter,
    ConversionRate,
    TokenClock,
    TokenCounter,
    charge_tokens,
)
from .gridworld import (
    DEFAULT_SIZE,
    DEFAULT_WALL_DENSITY,
    EnvState,
    GridMap,
    Signal,
    SignalMode,
    TargetKind,
    apply_detect,
    apply_move,
    apply_wait,
    bomb_moves_now,
    emit_signal,
    generate_map,
    move_target,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
HURRY_LINE = "Hurry up! The bomb is going to explode soon."
DEFAULT_RUNS = 100


class Outcome(Enum):
    SUCCESS = "Success"
    OVER_STEPS = "OverSteps"
    TIME_OUT = "TimeOut"
    CONTINUE = "Continue"


class ContextPolicy(Enum):
    FULL_HISTORY = "full"
    SOLUTION_ONLY = "solution"


@dataclass(frozen=True)
class SettingSpec:
    id: str
    step_limit: int
    budget_seconds: Optional[float]
    target_kind: TargetKind
    signal_mode: SignalMode = SignalMode.PASSIVE
    moving_target: bool = False
    hint: bool = False
    hurry: bool = False
    wall_density: float = DEFAULT_WALL_DENSITY
    n: int = DEFAULT_SIZE

    @property
    def timed(self) -> bool:
        return self.budget_seconds is not None

    def to_dict(self) -> dict:
        return {
            "id": self.id, "step_limit": self.step_limit, "budget_seconds": self.budget_seconds,
            "target_kind": self.target_kind.value, "signal_mode": self.signal_mode.value,
            "moving_target": self.moving_target, "hint": self.hint, "hurry": self.hurry,
            "wall_density": self.wall_density, "n": self.n,
        }


_B = DEFAULT_BUDGET_SECONDS
SETTINGS = {
    "s1": SettingSpec("s1", 20, None, TargetKind.TREASURE),
    "s2": SettingSpec("s2", 20, _B, TargetKind.BOMB),
    "s2-hint": SettingSpec("s2-hint", 20, _B, TargetKind.BOMB, hint=True),
    "s2-hurry": SettingSpec("s2-hurry", 20, _B, TargetKind.BOMB, hurry=True),
    "s2-hint-hurry": SettingSpec("s2-hint-hurry", 20, _B, TargetKind.BOMB, hint=True, hurry=True),
    "s3-passive": SettingSpec("s3-passive", 30, _B, TargetKind.BOMB, moving_target=True),
    "s3-active": SettingSpec("s3-active", 30, _B, TargetKind.BOMB, SignalMode.ACTIVE_DETECT,
                             moving_target=True),
}
SETTING_ALIASES = {"s2-baseline": "s2", "s3": "s3-active", "s3-hard": "s3-active"}


def get_setting(setting_id: str) -> SettingSpec:
    key = SETTING_ALIASES.get(setting_id.lower(), setting_id.lower())
    try:
        return SETTINGS[key]
    except KeyError:
        raise KeyError(f"unknown setting {setting_id!r}; choose from {sorted(SETTINGS)}") from None


# --- prompts -----------------------------------------------------------------------

def _system_template(setting: SettingSpec) -> str:
    if setting.target_kind is TargetKind.TREASURE:
        return "bombrush_treasure.txt"
    if not setting.moving_target:
        return "bombrush_bomb.txt"
    if setting.signal_mode is SignalMode.ACTIVE_DETECT:
        return "bombrush_bomb_hard_active.txt"
    return "bombrush_bomb_hard_passive.txt"


def state_view(setting: SettingSpec, state: EnvState, clock: Optional[TokenClock],
               signal: Optional[Signal], last_tokens: Optional[int] = None,
               last_seconds: Optional[float] = None) -> dict:
    view = state.to_dict(signal)
    if setting.timed and clock is not None:
        view["remaining_seconds"] = round(max(clock.remaining, 0.0), 1)
        view["last_round_seconds"] = None if last_seconds is None else round(last_seconds, 1)
        if setting.hint:
            view["last_round_tokens"] = last_tokens
    return view


def render_prompts(setting: SettingSpec, state: EnvState, clock: Optional[TokenClock] = None,
                   signal: Optional[Signal] = None, last_tokens: Optional[int] = None,
                   last_seconds: Optional[float] = None,
                   template_dir: str | None = None) -> tuple[str, str]:
    """Return ``(system_prompt, user_prompt)`` for one turn.

    Hint variants add the token-cost sentence to the system prompt and the
    previous turn's token count to the state; Hurry variants add the fixed
    urgency line to the user prompt.
    """
    system = load_template(_system_template(setting), template_dir).format(
        size=setting.n, step_limit=setting.step_limit, budget=setting.budget_seconds or 0.0)
    if setting.hint:
        system = system.rstrip("\n") + "\n\n" + load_template("bombrush_hint.txt", template_dir)
    view = state_view(setting, state, clock, signal, last_tokens, last_seconds)
    user = load_template("bombrush_user.txt", template_dir).format(
        map_render=state.map.render(agent=state.agent),
        state_json=json.dumps(view, sort_keys=True),
        urgency=f"\n{HURRY_LINE}\n" if setting.hurry else "",
    )
    return system, user


_THINK_BLOCK = re.compile(r"<think>.*?</think>", re.DOTALL | re.IGNORECASE)


def solution_portion(text: str) -> str:
    """Drop ``<think>`` reasoning, keeping the part a reasoning model presents as its answer."""
    out = _THINK_BLOCK.sub("", text)
    low = out.lower()
    if "</think>" in low:
        out = out[low.rfind("</think>") + len("</think>"):]
    return out.strip()


def build_messages(policy: ContextPolicy, system: str, history: list, user: str) -> list:
    msgs = [{"role": "system", "content": system}]
    for past_user, past_reply in history:
        reply = past_reply if policy is ContextPolicy.FULL_HISTORY else solution_portion(past_reply)
        msgs.append({"role": "user", "content": past_user})
        msgs.append({"role": "assistant", "content": reply})
    msgs.append({"role": "user", "content": user})
    return msgs


# --- records -----------------------------------------------------------------------

@dataclass
class StepRecord:
    step: int
    observation: dict
    raw_text: str
    action: AgentAction
    tokens_charged: int
    seconds_charged: Optional[float]
    remaining_after: Optional[float]
    agent_before: tuple
    agent_after: tuple
    target_at_action: tuple
    target_after: tuple
    blocked: bool
    void: bool = False
    usage: Optional[dict] = None

    def to_dict(self, timed: bool) -> dict:
        d = {
            "step": self.step,
            "observation": self.observation,
            "raw_text": self.raw_text,
            "action": self.action.to_dict(),
            "tokens_charged": self.tokens_charged,
            "agent_before": list(self.agent_before),
            "agent_after": list(self.agent_after),
            "target_at_action": list(self.target_at_action),
            "target_after": list(self.target_after),
            "blocked": self.blocked,
            "void": self.void,
        }
        if timed:
            d["seconds_charged"] = self.seconds_charged
            d["remaining_after"] = self.remaining_after
        if self.usage is not None:
            d["reported_usage"] = self.usage
        return d


@dataclass
class EpisodeRecord:
    setting: SettingSpec
    seed: int
    map: GridMap
    steps: list = field(default_factory=list)
    outcome: Optional[Outcome] = None
    steps_taken: int = 0
    remaining_at_end: Optional[float] = None
    agent_name: str = ""
    aborted: bool = False
    error: Optional[str] = None

    @property
    def initial_budget(self) -> Optional[float]:
        return self.setting.budget_seconds

    def summary(self) -> dict:
        d = {
            "setting": self.setting.id,
            "seed": self.seed,
            "agent": self.agent_name,
            "map": self.map.to_dict(),
            "outcome": self.outcome.value if self.outcome else None,
            "steps_taken": self.steps_taken,
            "aborted": self.aborted,
            "error": self.error,
        }
        if self.setting.timed:
            d["initial_budget"] = self.setting.budget_seconds
            d["remaining_at_end"] = self.remaining_at_end
        return d

    def to_lines(self) -> list[str]:
        lines = []
        for s in self.steps:
            row = {"type": "step", "schema_version": SCHEMA_VERSION, "setting": self.setting.id,
                   "seed": self.seed, **s.to_dict(self.setting.timed)}
            lines.append(json.dumps(row, sort_keys=True))
        lines.append(json.dumps({"type": "summary", "schema_version": SCHEMA_VERSION,
                                 "setting_spec": self.setting.to_dict(), **self.summary()},
                                sort_keys=True))
        return lines


def write_jsonl(records: Iterable[EpisodeRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in sorted(records, key=lambda r: r.seed):
            for line in rec.to_lines():
                f.write(line + "\n")


def read_jsonl(path) -> list[EpisodeRecord]:
    """Rebuild episode records from a log written by :func:`write_jsonl`."""
    from .agents import ActionKind as AK
    from .gridworld import Direction

    records, pending = [], []
    with open(path, encoding="utf-8") as f:
        for line in f:
            row = json.loads(line)
            if row.get("schema_version") != SCHEMA_VERSION:
                raise ValueError(f"unsupported schema_version {row.get('schema_version')!r}")
            if row["type"] == "step":
                pending.append(row)
                continue
            spec = row["setting_spec"]
            setting = SettingSpec(
                spec["id"], spec["step_limit"], spec["budget_seconds"], TargetKind(spec["target_kind"]),
                SignalMode(spec["signal_mode"]), spec["moving_target"], spec["hint"], spec["hurry"],
                spec["wall_density"], spec["n"])
            rec = EpisodeRecord(setting, row["seed"], GridMap.from_dict(row["map"]),
                                outcome=Outcome(row["outcome"]) if row["outcome"] else None,
                                steps_taken=row["steps_taken"],
                                remaining_at_end=row.get("remaining_at_end"),
                                agent_name=row["agent"], aborted=row["aborted"], error=row["error"])
            for s in pending:
                a = s["action"]
                action = AgentAction(AK(a["kind"]), Direction(a["direction"]) if a["direction"] else None,
                                     s["raw_text"], a["parsed_ok"])
                rec.steps.append(StepRecord(
                    s["step"], s["observation"], s["raw_text"], action, s["tokens_charged"],
                    s.get("seconds_charged"), s.get("remaining_after"), tuple(s["agent_before"]),
                    tuple(s["agent_after"]), tuple(s["target_at_action"]), tuple(s["target_after"]),
                    s["blocked"], s["void"], s.get("reported_usage")))
            records.append(rec)
            pending = []
    return records


# --- loop --------------------------------------------------------------------------

def classify_outcome(agent_at_target: bool, detonated: bool, step_index: int, step_limit: int) -> Outcome:
    """Success > TimeOut > OverSteps within a step."""
    if agent_at_target:
        return Outcome.SUCCESS
    if detonated:
        return Outcome.TIME_OUT
    if step_index >= step_limit:
        return Outcome.OVER_STEPS
    return Outcome.CONTINUE


def run_episode(setting: SettingSpec, agent, seed: int, rate: Optional[ConversionRate] = None,
                counter: TokenCounter | None = None,
                policy: ContextPolicy = ContextPolicy.FULL_HISTORY,
                grid: Optional[GridMap] = None, template_dir: str | None = None) -> EpisodeRecord:
    """Run one episode to a terminal outcome.

    A reply whose charge exhausts the clock is void: the step is consumed,
    the agent does not move and the episode ends in TimeOut.
    """
    counter = counter or ApproxCounter()
    if setting.timed and rate is None:
        raise ValueError(f"setting {setting.id} is timed and needs a conversion rate")
    grid = grid or generate_map(seed, setting.n, setting.wall_density)
    state = EnvState.initial(grid, setting.target_kind, setting.signal_mode)
    clock = TokenClock.start(setting.budget_seconds, rate, counter.counter_id) if setting.timed else None
    bomb_rng = substream(seed, "bomb")
    agent.reset(seed)
    rec = EpisodeRecord(setting, seed, grid, agent_name=getattr(agent, "name", type(agent).__name__))
    history: list = []
    last_tokens = last_seconds = None
    detected: Optional[Signal] = None
    active = setting.signal_mode is SignalMode.ACTIVE_DETECT

    while True:
        signal = detected if active else emit_signal(state.agent, state.target)
        system, user = render_prompts(setting, state, clock, signal, last_tokens, last_seconds, template_dir)
        view = state_view(setting, state, clock, signal, last_tokens, last_seconds)
        obs = Observation(
            step_index=state.step_index, size=grid.size, agent=state.agent,
            walls=[list(w) for w in grid.sorted_walls()], map_render=grid.render(agent=state.agent),
            signal=signal,
            remaining_seconds=max(clock.remaining, 0.0) if clock else None,
            last_round_tokens=last_tokens if setting.hint else None,
            last_round_seconds=last_seconds if setting.timed else None,
            detect_allowed=active,
            target_truth=state.target if getattr(agent, "privileged", False) else None,
            messages=build_messages(policy, system, history, user),
        )
        action = agent.act(obs)
        tokens = counter.count(action.reasoning)
        seconds = remaining = None
        detonated = False
        if clock is not None:
            clock, seconds, detonated = charge_tokens(clock, tokens)
            remaining = clock.remaining

        before = state.agent
        target_at_action = state.target
        detected = None
        if detonated:
            state = apply_wait(state)
        elif action.kind is ActionKind.MOVE:
            state = apply_move(state, action.direction)
        elif action.kind is ActionKind.DETECT:
            state, detected = apply_detect(state)
        else:
            state = apply_wait(state)

        reached = state.agent == state.target
        if setting.moving_target and not reached and not detonated and bomb_moves_now(state.step_index):
            state = move_target(state, bomb_rng)

        rec.steps.append(StepRecord(
            step=state.step_index,
            observation=view,
            raw_text=action.reasoning, action=action, tokens_charged=tokens,
            seconds_charged=seconds, remaining_after=remaining,
            agent_before=tuple(before), agent_after=tuple(state.agent),
            target_at_action=tuple(target_at_action), target_after=tuple(state.target),
            blocked=state.last_blocked, void=detonated, usage=action.usage,
        ))
        history.append((user, action.reasoning))
        last_tokens, last_seconds = tokens, seconds

        outcome = classify_outcome(reached, detonated, state.step_index, setting.step_limit)
        if outcome is not Outcome.CONTINUE:
            rec.outcome = outcome
            rec.steps_taken = state.step_index
            rec.remaining_at_end = clock.remaining if clock else None
            return rec


def run_batch(setting: SettingSpec, agent_factory: Callable[[int], object], seeds: Iterable[int],
              rate: Optional[ConversionRate] = None, counter: TokenCounter | None = None,
              policy: ContextPolicy = ContextPolicy.FULL_HISTORY, parallelism: int = 1,
              template_dir: str | None = None) -> list[EpisodeRecord]:
    """Run one episode per seed; agent failures become aborted records. Results are sorted by seed."""
    counter = counter or ApproxCounter()

    def one(seed: int) -> EpisodeRecord:
        agent = agent_factory(seed)
        try:
            return run_episode(setting, agent, seed, rate, counter, policy, template_dir=template_dir)
        except AgentFailure as exc:
            log.warning("episode seed=%s aborted: %s", seed, exc)
            grid = generate_map(seed, setting.n, setting.wall_density)
            return EpisodeRecord(setting, seed, grid, agent_name=getattr(agent, "name", ""),
                                 aborted=True, error=str(exc))

    seeds = list(seeds)
    if parallelism <= 1:
        results = [one(s) for s in seeds]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(one, seeds))
    return sorted(results, key=lambda r: r.seed)
