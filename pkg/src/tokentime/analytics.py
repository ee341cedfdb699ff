"""Scoring: BFS path oracle, episode metrics, step-wise decision accuracy, reasoning audit, t-tests."""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from statistics import fmean
from typing import Iterable, Optional, Sequence

from .gridworld import GridMap, Position, bfs_distances


class InvalidCell(ValueError):
    pass


class NotApplicable(ValueError):
    pass


class DegenerateSample(ValueError):
    pass


def bfs_dist(grid: GridMap, a, b) -> Optional[int]:
    """Length of the shortest 4-connected wall-avoiding path from ``a`` to ``b``; ``None`` if cut off."""
    a, b = Position(*a), Position(*b)
    for p in (a, b):
        if not grid.is_open(p):
            raise InvalidCell(f"{tuple(p)} is a wall or off the map")
    return bfs_distances(grid, a).get(b)


class PathOracle:
    """Caches one BFS field per target cell."""

    def __init__(self, grid: GridMap):
        self.grid = grid
        self._fields: dict = {}

    def dist(self, a, b) -> Optional[int]:
        b = Position(*b)
        if b not in self._fields:
            if not self.grid.is_open(b):
                raise InvalidCell(f"{tuple(b)} is a wall or off the map")
            self._fields[b] = bfs_distances(self.grid, b)
        a = Position(*a)
        if not self.grid.is_open(a):
            raise InvalidCell(f"{tuple(a)} is a wall or off the map")
        return self._fields[b].get(a)


# --- episode metrics ------------------------------------------------------------------

def _success(record) -> bool:
    return record.outcome is not None and record.outcome.value == "Success"


def navigation_accuracy(record) -> float:
    """Optimal steps over actual steps for a successful static-target episode, capped at 1."""
    if record.setting.moving_target:
        raise NotApplicable("navigation accuracy needs a static target")
    if not _success(record):
        raise NotApplicable("navigation accuracy is only defined for successful episodes")
    optimal = bfs_dist(record.map, record.map.agent_start, record.map.target_start)
    return min(1.0, optimal / record.steps_taken)


def time_efficiency(record) -> float:
    if not record.setting.timed:
        raise NotApplicable("time efficiency needs a timed setting")
    if not _success(record):
        raise NotApplicable("time efficiency is only defined for successful episodes")
    return record.remaining_at_end / record.setting.budget_seconds * 100.0


@dataclass
class MetricReport:
    n_episodes: int
    n_aborted: int
    success_pct: float
    oversteps_pct: float
    timeout_pct: float
    mean_steps: float
    mean_tokens_per_step: float
    navigation_accuracy_pct: Optional[float] = None
    time_efficiency_pct: Optional[float] = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def metric_report(records: Sequence) -> MetricReport:
    """Outcome shares, steps, tokens and success-only accuracy/efficiency over completed episodes."""
    done = [r for r in records if not r.aborted and r.outcome is not None]
    aborted = len(records) - len(done)
    if not done:
        return MetricReport(0, aborted, 0.0, 0.0, 0.0, 0.0, 0.0)
    counts = {"Success": 0, "OverSteps": 0, "TimeOut": 0}
    for r in done:
        counts[r.outcome.value] += 1
    n = len(done)
    tokens = [s.tokens_charged for r in done for s in r.steps]
    wins = [r for r in done if _success(r)]
    nav = eff = None
    if wins and not wins[0].setting.moving_target:
        nav = fmean(navigation_accuracy(r) for r in wins) * 100.0
    if wins and wins[0].setting.timed:
        eff = fmean(time_efficiency(r) for r in wins)
    return MetricReport(
        n_episodes=n, n_aborted=aborted,
        success_pct=counts["Success"] / n * 100.0,
        oversteps_pct=counts["OverSteps"] / n * 100.0,
        timeout_pct=counts["TimeOut"] / n * 100.0,
        mean_steps=fmean(r.steps_taken for r in done),
        mean_tokens_per_step=fmean(tokens) if tokens else 0.0,
        navigation_accuracy_pct=nav, time_efficiency_pct=eff,
    )


# --- step-wise decision accuracy ------------------------------------------------------

@dataclass
class BucketAccuracy:
    t_buckets: int
    acc: list
    counts: list

    @property
    def total(self) -> int:
        return sum(self.counts)

    def to_dict(self) -> dict:
        return {"t_buckets": self.t_buckets, "acc": self.acc, "counts": self.counts}


def scored_actions(record) -> list[tuple[float, int]]:
    """``(progress, delta)`` per scored action of one episode.

    Detect actions and voided (post-detonation) actions are skipped. Progress
    is elapsed/total time in timed settings and step position over the
    episode's length otherwise.
    """
    oracle = PathOracle(record.map)
    out = []
    budget = record.setting.budget_seconds
    elapsed = 0.0
    total_steps = max(record.steps_taken, 1)
    for i, s in enumerate(record.steps):
        if record.setting.timed:
            progress = elapsed / budget
            elapsed += s.seconds_charged
        else:
            progress = i / total_steps
        if s.void or s.action.kind.value == "detect":
            continue
        before = oracle.dist(s.agent_before, s.target_at_action)
        after = oracle.dist(s.agent_after, s.target_at_action)
        out.append((progress, int(after is not None and before is not None and after < before)))
    return out


def stepwise_accuracy(records: Iterable, t_buckets: int = 15) -> BucketAccuracy:
    hits = [0] * t_buckets
    counts = [0] * t_buckets
    for rec in records:
        if rec.aborted:
            continue
        for progress, delta in scored_actions(rec):
            b = min(int(math.floor(progress * t_buckets)), t_buckets - 1)
            counts[b] += 1
            hits[b] += delta
    acc = [hits[i] / counts[i] if counts[i] else None for i in range(t_buckets)]
    return BucketAccuracy(t_buckets, acc, counts)


# --- reasoning audit ------------------------------------------------------------------

URGENCY_PATTERNS = [
    r"\b\d+(?:\.\d+)?\s*(?:seconds?|secs?|s)\b[^.\n]{0,20}\b(?:left|remain(?:ing)?)",
    r"\b(?:remaining|limited|little|short on|no) time\b",
    r"\btime is (?:running out|limited|short|critical|tight|ticking)",
    r"\brunning (?:out|low) (?:of|on) time\b",
    r"\burgen(?:t|cy)\b",
    r"\bhurry\b",
    r"\btime pressure\b",
    r"\bbefore (?:the bomb|it) (?:explodes|detonates|goes off)\b",
    r"\bcountdown\b",
    r"\b(?:act|move) (?:fast|quickly)\b",
]
TW_MAPPING_PATTERNS = [
    r"\bconcise\b",
    r"\bsav(?:e|ing) time\b",
    r"\b(?:reasoning|thinking|tokens?|words?|output)\b[^.\n]{0,30}\b(?:consumes?|costs?|uses?|takes?|eats?)\b[^.\n]{0,15}\btime\b",
    r"\b(?:shorter|brief(?:er)?|less|minimal|short) (?:reasoning|thinking|responses?|answers?|explanations?)\b",
    r"\bfewer tokens\b",
    r"\bkeep (?:this|it|my (?:reasoning|answer|response)) (?:short|brief)\b",
    r"\b(?:think|reason|write) less\b",
    r"\bevery token\b",
]
_URG = [re.compile(p, re.IGNORECASE) for p in URGENCY_PATTERNS]
_TW = [re.compile(p, re.IGNORECASE) for p in TW_MAPPING_PATTERNS]


def audit_text_rules(text: str) -> tuple[bool, bool]:
    """Keyword ruleset: (mentions time urgency, states a token/time trade-off)."""
    return any(p.search(text) for p in _URG), any(p.search(text) for p in _TW)


AUDIT_PROMPT = (
    "You are auditing the reasoning of an agent that must defuse a bomb before a countdown ends.\n"
    "Answer two questions about the reasoning below.\n"
    "1. urgency: does it explicitly acknowledge time pressure (e.g. \"Only 32 seconds remaining!\")?\n"
    "2. tw_mapping: does it explicitly reflect that generating more reasoning consumes time "
    "(e.g. \"I should keep my reasoning concise to save time\")?\n"
    "Reply with exactly two lines:\nurgency: yes|no\ntw_mapping: yes|no\n\nReasoning:\n{text}"
)


def _audit_llm(text: str, gateway, model_id: str) -> tuple[bool, bool]:
    from .gateway import ChatRequest

    resp = gateway.complete(ChatRequest(model_id, [{"role": "user", "content": AUDIT_PROMPT.format(text=text)}]))
    found = dict(re.findall(r"(urgency|tw_mapping)\s*:\s*(yes|no)", resp.text.lower()))
    return found.get("urgency") == "yes", found.get("tw_mapping") == "yes"


def reasoning_audit(texts: Sequence[str], gateway=None, model_id: str = "classifier") -> dict:
    """Percent of reasoning texts with urgency mentions / token-time trade-off statements."""
    flags = [(_audit_llm(t, gateway, model_id) if gateway is not None else audit_text_rules(t)) for t in texts]
    n = len(flags)
    if n == 0:
        return {"n": 0, "urgency_mention_pct": None, "tw_mapping_pct": None}
    return {
        "n": n,
        "urgency_mention_pct": sum(u for u, _ in flags) / n * 100.0,
        "tw_mapping_pct": sum(w for _, w in flags) / n * 100.0,
    }


# --- statistics -----------------------------------------------------------------------

def delta_pct(before: float, after: float) -> float:
    """Relative change from ``before`` to ``after`` in percent."""
    if before == 0:
        raise ZeroDivisionError("relative change from zero is undefined")
    return (after - before) / before * 100.0


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny, eps = 1e-300, 1e-15
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, 10000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc(a: float, b: float, x: float) -> float:
    """Regularised incomplete beta function I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf(t: float, df: float) -> float:
    """Upper tail P(T > t) of Student's t with ``df`` degrees of freedom."""
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    tail = 0.5 * betainc(df / 2.0, 0.5, df / (df + t * t))
    return tail if t > 0 else 1.0 - tail


def paired_t_statistic(x: Sequence[float], y: Sequence[float]) -> tuple[float, int]:
    if len(x) != len(y):
        raise ValueError("paired samples must have equal length")
    n = len(x)
    if n < 2:
        raise DegenerateSample("need at least two pairs")
    d = [a - b for a, b in zip(x, y)]
    if all(v == 0 for v in d):
        raise DegenerateSample("all paired differences are zero")
    mean = fmean(d)
    var = sum((v - mean) ** 2 for v in d) / (n - 1)
    if var == 0:
        return math.copysign(math.inf, mean), n - 1
    return mean / math.sqrt(var / n), n - 1


def paired_ttest(x: Sequence[float], y: Sequence[float], alternative: str = "greater") -> float:
    """One-sided paired t-test p-value on ``x - y``; ``alternative`` is ``greater`` or ``less``."""
    t, df = paired_t_statistic(x, y)
    if alternative == "greater":
        return t_sf(t, df)
    if alternative == "less":
        return t_sf(-t, df)
    raise ValueError("alternative must be 'greater' or 'less'")


def bombrush_summary(records: Sequence, t_buckets: int = 15) -> dict:
    """Outcome metrics, ACC_t buckets and (timed settings) the reasoning audit for one batch."""
    done = [r for r in records if not r.aborted]
    out = {
        "setting": records[0].setting.id if records else None,
        "metrics": metric_report(records).to_dict(),
        "stepwise_accuracy": stepwise_accuracy(done, t_buckets).to_dict(),
    }
    if records and records[0].setting.timed:
        out["reasoning_audit"] = reasoning_audit([s.raw_text for r in done for s in r.steps if s.raw_text])
    return out


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
