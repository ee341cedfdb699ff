"""Token-time to wall-clock conversion, the countdown clock, and token counters.

Wall-clock seconds for generated text are ``tokens * v_out`` where ``v_out``
is a per-model output rate in seconds per token. Input-side timing is not
modelled.
"""
from __future__ import annotations

import base64
import json
import math
import os
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path
from typing import Protocol

import regex

DEFAULT_BUDGET_SECONDS = 300.0
DEFAULT_CALIBRATION_HORIZON = 30


class InvalidCalibration(ValueError):
    pass


@dataclass(frozen=True)
class ConversionRate:
    v_out: float

    def __post_init__(self):
        if not (math.isfinite(self.v_out) and self.v_out > 0):
            raise InvalidCalibration(f"v_out must be positive and finite, got {self.v_out!r}")


class TokenCounter(Protocol):
    counter_id: str

    def count(self, text: str) -> int: ...


class ApproxCounter:
    """``ceil(len(text) / 4)``: a deterministic stand-in when no vocabulary file is at hand."""

    counter_id = "approx-chars/4"

    def count(self, text: str) -> int:
        return -(-len(text) // 4)


# Pre-tokenisation patterns of the two public tiktoken BPE vocabularies.
O200K_PATTERN = "|".join([
    r"""[^\r\n\p{L}\p{N}]?[\p{Lu}\p{Lt}\p{Lm}\p{Lo}\p{M}]*[\p{Ll}\p{Lm}\p{Lo}\p{M}]+(?i:'s|'t|'re|'ve|'m|'ll|'d)?""",
    r"""[^\r\n\p{L}\p{N}]?[\p{Lu}\p{Lt}\p{Lm}\p{Lo}\p{M}]+[\p{Ll}\p{Lm}\p{Lo}\p{M}]*(?i:'s|'t|'re|'ve|'m|'ll|'d)?""",
    r"""\p{N}{1,3}""",
    r""" ?[^\s\p{L}\p{N}]+[\r\n/]*""",
    r"""\s*[\r\n]+""",
    r"""\s+(?!\S)""",
    r"""\s+""",
])
CL100K_PATTERN = (
    r"""'(?i:[sdmt]|ll|ve|re)|[^\r\n\p{L}\p{N}]?+\p{L}+|\p{N}{1,3}| ?[^\s\p{L}\p{N}]++[\r\n]*|\s*[\r\n]|\s+(?!\S)|\s+"""
)


def load_ranks(path: str | os.PathLike) -> dict[bytes, int]:
    """Read a ``<base64 token> <rank>`` per line vocabulary file."""
    ranks = {}
    with open(path, "rb") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            tok, rank = line.split()
            ranks[base64.b64decode(tok)] = int(rank)
    return ranks


class BpeCounter:
    """Byte-level BPE token counter driven by a mergeable-ranks vocabulary file.

    Pieces produced by the pre-tokenisation regex are merged greedily,
    lowest-rank pair first, until no adjacent pair is in the vocabulary.
    """

    def __init__(self, ranks: dict[bytes, int], pattern: str = O200K_PATTERN, name: str = "bpe"):
        self.ranks = ranks
        self._pat = regex.compile(pattern)
        self.counter_id = f"bpe:{name}"
        self._piece_len = lru_cache(maxsize=65536)(self._bpe_len)

    @classmethod
    def from_file(cls, path: str | os.PathLike, pattern: str | None = None) -> "BpeCounter":
        path = Path(path)
        if pattern is None:
            pattern = CL100K_PATTERN if "cl100k" in path.name else O200K_PATTERN
        return cls(load_ranks(path), pattern, name=path.stem)

    def encode_piece(self, piece: bytes) -> list[bytes]:
        if piece in self.ranks:
            return [piece]
        parts = [piece[i:i + 1] for i in range(len(piece))]
        ranks = self.ranks
        while len(parts) > 1:
            best, best_i = None, -1
            for i in range(len(parts) - 1):
                r = ranks.get(parts[i] + parts[i + 1])
                if r is not None and (best is None or r < best):
                    best, best_i = r, i
            if best is None:
                break
            parts[best_i:best_i + 2] = [parts[best_i] + parts[best_i + 1]]
        return parts

    def _bpe_len(self, piece: bytes) -> int:
        return len(self.encode_piece(piece))

    def count(self, text: str) -> int:
        return sum(self._piece_len(m.encode("utf-8")) for m in self._pat.findall(text))


def make_counter(spec: str | None) -> TokenCounter:
    """``None``/``"approx"`` gives :class:`ApproxCounter`; anything else is a vocabulary path."""
    if spec in (None, "", "approx"):
        return ApproxCounter()
    return BpeCounter.from_file(spec)


@dataclass(frozen=True)
class TokenClock:
    initial_budget: float
    remaining: float
    rate: ConversionRate
    counter_id: str = ApproxCounter.counter_id

    @classmethod
    def start(cls, budget: float, rate: ConversionRate, counter_id: str = ApproxCounter.counter_id) -> "TokenClock":
        if budget < 0:
            raise ValueError("budget must be non-negative")
        return cls(float(budget), float(budget), rate, counter_id)

    @property
    def detonated(self) -> bool:
        return self.remaining <= 0


def estimate_wall_time(tokens: int, rate: ConversionRate) -> float:
    if tokens < 0:
        raise ValueError("tokens must be non-negative")
    return tokens * rate.v_out


def charge_tokens(clock: TokenClock, tokens: int) -> tuple[TokenClock, float, bool]:
    charged = estimate_wall_time(tokens, clock.rate)
    remaining = clock.remaining - charged
    return replace(clock, remaining=remaining), charged, remaining <= 0


def charge(clock: TokenClock, text: str, counter: TokenCounter) -> tuple[TokenClock, float, bool]:
    """Charge the wall-clock cost of ``text`` against the clock.

    Returns ``(new_clock, charged_seconds, detonated)``. ``remaining`` is left
    unclamped (it may go negative on the detonating charge) so that every
    charge is exactly reflected in the clock; displays clamp at 0.
    """
    return charge_tokens(clock, counter.count(text))


def calibrate_vout(avg_tokens_per_step: float, horizon_steps: int = DEFAULT_CALIBRATION_HORIZON,
                   budget_seconds: float = DEFAULT_BUDGET_SECONDS) -> ConversionRate:
    """Rate at which ``avg_tokens_per_step`` over ``horizon_steps`` steps uses exactly the budget."""
    for name, value in (("avg_tokens_per_step", avg_tokens_per_step),
                        ("horizon_steps", horizon_steps), ("budget_seconds", budget_seconds)):
        if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
            raise InvalidCalibration(f"{name} must be positive, got {value!r}")
    return ConversionRate(budget_seconds / (avg_tokens_per_step * horizon_steps))


@dataclass
class CalibrationReport:
    model_id: str
    avg_tokens_per_step: float
    horizon: int
    budget_seconds: float
    v_out: float

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "avg_tokens_per_step": self.avg_tokens_per_step,
            "horizon": self.horizon,
            "budget_seconds": self.budget_seconds,
            "v_out": self.v_out,
        }

    def dump(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "CalibrationReport":
        d = json.loads(Path(path).read_text())
        return cls(d["model_id"], float(d["avg_tokens_per_step"]), int(d["horizon"]),
                   float(d["budget_seconds"]), float(d["v_out"]))


def calibration_report(model_id: str, avg_tokens_per_step: float,
                       horizon: int = DEFAULT_CALIBRATION_HORIZON,
                       budget_seconds: float = DEFAULT_BUDGET_SECONDS) -> CalibrationReport:
    rate = calibrate_vout(avg_tokens_per_step, horizon, budget_seconds)
    return CalibrationReport(model_id, avg_tokens_per_step, horizon, budget_seconds, rate.v_out)
