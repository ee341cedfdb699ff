"""Dialogue duration judgment: paired dialogues, six cue settings, judging and attribution.

Gold labels: in the token-cue settings the reply with more output tokens took
longer (constant generation speed); in the timestamp settings the reply
whose *displayed* generation interval is longer did, even when the displayed
intervals were deliberately swapped against the token counts.
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum
from pathlib import Path
from statistics import fmean
from typing import Iterable, Optional, Sequence

from ._assets import load_template
from ._rng import substream
from .chronometry import TokenCounter

log = logging.getLogger(__name__)

DEFAULT_RATIO_THRESHOLD = 1.5
DEFAULT_GEN_RATE = 0.05  # s/token, i.e. 20 tokens/s
DEFAULT_TYPING_BAND = (0.2, 1.0)
DEFAULT_PAIRS = 300
DEFAULT_REPLICATIONS = 5
TS_FORMAT = "%Y-%m-%d %H:%M:%S"
_EPOCH = datetime(2024, 1, 1)
_EPOCH_SPAN_SECONDS = 366 * 24 * 3600


class IngestError(ValueError):
    pass


class DdjSetting(Enum):
    S1 = "S1"
    S1_HINT = "S1-Hint"
    S1_COUNT = "S1-Count"
    S2 = "S2"
    S2_M = "S2-M"
    S2_MPLUS = "S2-M+"

    @property
    def has_timestamps(self) -> bool:
        return self in (DdjSetting.S2, DdjSetting.S2_M, DdjSetting.S2_MPLUS)

    @property
    def has_token_counts(self) -> bool:
        return self in (DdjSetting.S1_COUNT, DdjSetting.S2_MPLUS)

    @property
    def misleading(self) -> bool:
        return self in (DdjSetting.S2_M, DdjSetting.S2_MPLUS)


def parse_settings(spec: str) -> list[DdjSetting]:
    if spec.strip().lower() == "all":
        return list(DdjSetting)
    by_name = {s.value.lower(): s for s in DdjSetting}
    by_name.update({s.name.lower(): s for s in DdjSetting})
    out = []
    for part in spec.split(","):
        key = part.strip().lower()
        if key not in by_name:
            raise ValueError(f"unknown DDJ setting {part!r}")
        out.append(by_name[key])
    return out


class Attribution(Enum):
    TEXT_LENGTH = "TextLength"
    SEMANTIC = "Semantic"
    TIME = "Time"
    OTHER = "Other"


@dataclass
class DialoguePair:
    pair_id: str
    user_prompt: str
    response_a: str
    response_b: str
    tokens_a: int
    tokens_b: int
    prompt_tokens: int
    source: dict = field(default_factory=dict)

    def response(self, label: str) -> str:
        return self.response_a if label == "A" else self.response_b

    def tokens(self, label: str) -> int:
        return self.tokens_a if label == "A" else self.tokens_b

    def to_dict(self) -> dict:
        return dict(self.__dict__)


# --- ingestion ---------------------------------------------------------------------

def _first_exchange(conv) -> tuple[str, str]:
    user = next(m["content"] for m in conv if m["role"] == "user")
    reply = next(m["content"] for m in conv if m["role"] == "assistant")
    return user, reply


def _parse_record(rec: dict, lineno: int) -> tuple[str, str, str, str, dict]:
    try:
        if "conversation_a" in rec:
            prompt, ra = _first_exchange(rec["conversation_a"])
            _, rb = _first_exchange(rec["conversation_b"])
            pid = str(rec.get("question_id") or rec.get("pair_id") or lineno)
        else:
            prompt, ra, rb = rec["prompt"], rec["response_a"], rec["response_b"]
            pid = str(rec.get("pair_id") or rec.get("id") or lineno)
    except (KeyError, TypeError, StopIteration) as exc:
        raise IngestError(f"line {lineno}: missing prompt/response fields ({exc!r})") from None
    if not all(isinstance(v, str) for v in (prompt, ra, rb)):
        raise IngestError(f"line {lineno}: prompt and responses must be strings")
    meta = {k: rec[k] for k in ("model_a", "model_b") if k in rec}
    return pid, prompt, ra, rb, meta


def ingest_pairs(path, counter: TokenCounter, ratio_threshold: float = DEFAULT_RATIO_THRESHOLD,
                 allowlist: Optional[Sequence[str]] = None, limit: Optional[int] = None) -> list[DialoguePair]:
    """Read a conversations JSONL file and keep pairs with clearly different reply lengths.

    Accepts arena-style records (``conversation_a``/``conversation_b`` message
    lists) or flat ``prompt``/``response_a``/``response_b`` records. With an
    ``allowlist``, both ``model_a`` and ``model_b`` must contain one of its
    entries. File order is preserved; the first ``limit`` accepted pairs are kept.
    """
    allow = [a.lower() for a in allowlist] if allowlist else None
    pairs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            pid, prompt, ra, rb, meta = _parse_record(rec, lineno)
            if allow is not None:
                models = [str(meta.get("model_a", "")).lower(), str(meta.get("model_b", "")).lower()]
                if not all(any(a in m for a in allow) for m in models):
                    continue
            ta, tb = counter.count(ra), counter.count(rb)
            if ta == tb or min(ta, tb) == 0:
                continue
            if max(ta, tb) / min(ta, tb) < ratio_threshold:
                continue
            pairs.append(DialoguePair(pid, prompt, ra, rb, ta, tb, counter.count(prompt), meta))
            if limit is not None and len(pairs) >= limit:
                break
    return pairs


# --- timestamps ---------------------------------------------------------------------

@dataclass(frozen=True)
class DialogueTimes:
    in_start: datetime
    in_end: datetime
    out_start: datetime
    out_end: datetime

    @property
    def output_seconds(self) -> int:
        return int((self.out_end - self.out_start).total_seconds())

    def to_dict(self) -> dict:
        return {k: getattr(self, k).strftime(TS_FORMAT) for k in ("in_start", "in_end", "out_start", "out_end")}

    @classmethod
    def from_dict(cls, d: dict) -> "DialogueTimes":
        return cls(*(datetime.strptime(d[k], TS_FORMAT) for k in ("in_start", "in_end", "out_start", "out_end")))


def output_durations(tokens_a: int, tokens_b: int, gen_rate: float = DEFAULT_GEN_RATE,
                     misleading: bool = False) -> tuple[int, int]:
    """Whole-second displayed output durations for A and B.

    Durations follow the token counts at ``gen_rate``; a rounding tie is
    broken by adding one second to the longer reply. ``misleading`` swaps them.
    """
    da = max(1, round(tokens_a * gen_rate))
    db = max(1, round(tokens_b * gen_rate))
    if da == db:
        if tokens_a > tokens_b:
            da += 1
        else:
            db += 1
    return (db, da) if misleading else (da, db)


def synthesize_timestamps(pair: DialoguePair, setting: DdjSetting, rng,
                          gen_rate: float = DEFAULT_GEN_RATE,
                          typing_band: tuple[float, float] = DEFAULT_TYPING_BAND) -> dict[str, DialogueTimes]:
    if not setting.has_timestamps:
        raise ValueError(f"{setting.value} carries no timestamps")
    durations = dict(zip("AB", output_durations(pair.tokens_a, pair.tokens_b, gen_rate, setting.misleading)))
    out = {}
    for label in "AB":
        start = _EPOCH + timedelta(seconds=rng.randrange(_EPOCH_SPAN_SECONDS))
        typing = rng.uniform(*typing_band)
        in_end = start + timedelta(seconds=max(1, round(pair.prompt_tokens * typing)))
        out[label] = DialogueTimes(start, in_end, in_end, in_end + timedelta(seconds=durations[label]))
    return out


# --- cases ----------------------------------------------------------------------------

@dataclass
class DdjCase:
    pair: DialoguePair
    setting: DdjSetting
    timestamps: Optional[dict] = None
    token_annotations: Optional[dict] = None
    gold: str = ""
    swap: bool = False
    system_prompt: str = ""
    user_prompt: str = ""

    @property
    def case_id(self) -> str:
        return f"{self.pair.pair_id}:{self.setting.value}"

    def presented(self, original: str) -> str:
        """Label under which an original dialogue is shown to the judge."""
        if not self.swap:
            return original
        return "B" if original == "A" else "A"

    original = presented  # the permutation is its own inverse

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "pair": self.pair.to_dict(),
            "setting": self.setting.value,
            "timestamps": {k: v.to_dict() for k, v in self.timestamps.items()} if self.timestamps else None,
            "token_annotations": self.token_annotations,
            "gold": self.gold,
            "swap": self.swap,
            "system_prompt": self.system_prompt,
            "user_prompt": self.user_prompt,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DdjCase":
        ts = {k: DialogueTimes.from_dict(v) for k, v in d["timestamps"].items()} if d["timestamps"] else None
        return cls(DialoguePair(**d["pair"]), DdjSetting(d["setting"]), ts, d["token_annotations"],
                   d["gold"], d["swap"], d["system_prompt"], d["user_prompt"])


def gold_label(case: DdjCase) -> str:
    """Original label (A/B) of the dialogue that took longer under the case's cues."""
    if case.setting.has_timestamps:
        a, b = case.timestamps["A"].output_seconds, case.timestamps["B"].output_seconds
        return "A" if a > b else "B"
    return "A" if case.pair.tokens_a > case.pair.tokens_b else "B"


def _render_dialogue(case: DdjCase, shown: str, template_dir: str | None) -> str:
    orig = case.original(shown)
    ts = ""
    if case.timestamps:
        t = case.timestamps[orig].to_dict()
        ts = (f"[{t['in_start']}] User started typing\n[{t['in_end']}] User message sent\n"
              f"[{t['out_start']}] Assistant started generating\n[{t['out_end']}] Assistant finished generating\n")
    tokens = ""
    if case.token_annotations:
        tokens = f"\nToken count of dialogue {shown} (prompt + reply): {case.token_annotations[orig]}"
    return load_template("ddj_dialogue.txt", template_dir).format(
        label=shown, timestamps=ts, prompt=case.pair.user_prompt,
        response=case.pair.response(orig), tokens=tokens).rstrip("\n")


def build_prompt(case: DdjCase, template_dir: str | None = None) -> tuple[str, str]:
    system = load_template("ddj_system.txt", template_dir)
    if case.setting is DdjSetting.S1_HINT:
        system = system.rstrip("\n") + "\n\n" + load_template("ddj_hint.txt", template_dir)
    user = load_template("ddj_user.txt", template_dir).format(
        dialogue_a=_render_dialogue(case, "A", template_dir),
        dialogue_b=_render_dialogue(case, "B", template_dir))
    return system, user


def make_case(pair: DialoguePair, setting: DdjSetting, seed: int,
              gen_rate: float = DEFAULT_GEN_RATE, template_dir: str | None = None) -> DdjCase:
    case = DdjCase(pair, setting)
    if setting.has_timestamps:
        case.timestamps = synthesize_timestamps(pair, setting, substream(seed, "timestamp", pair.pair_id, setting.value),
                                                gen_rate)
    if setting.has_token_counts:
        case.token_annotations = {"A": pair.prompt_tokens + pair.tokens_a, "B": pair.prompt_tokens + pair.tokens_b}
    case.swap = substream(seed, "judge-order", pair.pair_id, setting.value).random() < 0.5
    case.gold = gold_label(case)
    case.system_prompt, case.user_prompt = build_prompt(case, template_dir)
    return case


def build_cases(pairs: Iterable[DialoguePair], settings: Iterable[DdjSetting], seed: int,
                gen_rate: float = DEFAULT_GEN_RATE, template_dir: str | None = None) -> list[DdjCase]:
    pairs = list(pairs)
    return [make_case(p, s, seed, gen_rate, template_dir) for s in settings for p in pairs]


# --- judging --------------------------------------------------------------------------

_ANSWER_RE = re.compile(r"answer[\s*_]*[:：][\s*_]*(?:dialogue\s+|response\s+)?\(?([AB])\b", re.IGNORECASE)
_MENTION_RE = re.compile(r"\b(?:dialogue|response|conversation)\s+([AB])\b", re.IGNORECASE)
_JUST_RE = re.compile(r"justification[\s*_]*[:：]\s*(.*)", re.IGNORECASE | re.DOTALL)


def parse_verdict(text: str) -> tuple[Optional[str], str]:
    """``(presented_choice or None, justification)`` from a judge reply."""
    m = _ANSWER_RE.findall(text)
    choice = m[-1].upper() if m else None
    if choice is None:
        mentions = _MENTION_RE.findall(text)
        choice = mentions[-1].upper() if mentions else None
    j = _JUST_RE.search(text)
    justification = j.group(1).strip() if j else _ANSWER_RE.sub("", text).strip()
    return choice, justification


@dataclass
class Judgment:
    case_id: str
    setting: str
    replication: int
    choice: Optional[str]
    gold: str
    correct: bool
    parse_ok: bool
    justification: str
    raw_output: str
    attribution: Optional[str] = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "Judgment":
        return cls(**d)


def judge_case(case: DdjCase, gateway, model_id: str, replication: int, temperature: float = 0.0) -> Judgment:
    from .gateway import ChatRequest

    req = ChatRequest(model_id, [{"role": "system", "content": case.system_prompt},
                                 {"role": "user", "content": case.user_prompt}],
                      temperature, seed_hint=replication)
    text = gateway.complete(req).text
    presented, justification = parse_verdict(text)
    choice = case.original(presented) if presented else None
    return Judgment(case.case_id, case.setting.value, replication, choice, case.gold,
                    correct=choice == case.gold, parse_ok=presented is not None,
                    justification=justification, raw_output=text)


def accuracy_table(judgments: Sequence[Judgment]) -> dict:
    """Per setting: mean accuracy (%) over replications plus the per-replication vector."""
    by = {}
    for j in judgments:
        by.setdefault(j.setting, {}).setdefault(j.replication, []).append(j.correct)
    out = {}
    for setting in [s.value for s in DdjSetting if s.value in by]:
        reps = by[setting]
        vec = [sum(v) / len(v) * 100.0 for _, v in sorted(reps.items())]
        out[setting] = {
            "accuracy": fmean(vec),
            "per_replication": vec,
            "n_cases": len(next(iter(reps.values()))),
            "parse_failures": sum(1 for j in judgments if j.setting == setting and not j.parse_ok),
        }
    return out


def judge_and_score(cases: Sequence[DdjCase], gateway, model_id: str,
                    replications: int = DEFAULT_REPLICATIONS, temperature: float = 0.0,
                    parallelism: int = 1) -> tuple[dict, list[Judgment]]:
    jobs = [(c, r) for r in range(replications) for c in cases]
    if parallelism > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            judgments = list(pool.map(lambda cr: judge_case(cr[0], gateway, model_id, cr[1], temperature), jobs))
    else:
        judgments = [judge_case(c, gateway, model_id, r, temperature) for c, r in jobs]
    return accuracy_table(judgments), judgments


# --- attribution -------------------------------------------------------------------------

_TIME_RULES = [re.compile(p, re.IGNORECASE) for p in (
    r"\b\d{1,2}:\d{2}(?::\d{2})?\b",
    r"\btime\s*-?\s*stamps?\b",
    r"\b(?:started|ended|finished|began|completed|sent) (?:at|around)\b",
    r"\b\d+(?:\.\d+)?\s*(?:seconds?|secs?|minutes?|mins?|s)\b",
    r"\b(?:duration|elapsed|interval|time log|logged)\b",
    r"\b(?:start|end|finish|completion) times?\b",
)]
_LENGTH_RULES = [re.compile(p, re.IGNORECASE) for p in (
    r"\btokens?\b",
    r"\bword(?:s| count)\b",
    r"\bcharacters?\b",
    r"\blength(?:y|ier)?\b",
    r"\b(?:longer|shorter|long|short|brief|briefer|verbose|wordy|concise)\b",
    r"\bmore (?:text|content|lines|sentences|paragraphs)\b",
)]
_OTHER_RULES = [re.compile(p, re.IGNORECASE) for p in (
    r"\b(?:cannot|can't|can not|unable to) (?:determine|tell|say)\b",
    r"\bnot enough information\b",
    r"\bimpossible to (?:tell|know|determine)\b",
)]


def attribution_rules(justification: str) -> Attribution:
    """Offline keyword ruleset.

    Time cues win over length cues (a justification that cites timestamps is
    timestamp-based even if it also mentions length); anything with words but
    neither cue is Semantic; refusals and empty or non-verbal text are Other.
    """
    text = justification.strip()
    if not re.search(r"[A-Za-z]", text) or any(p.search(text) for p in _OTHER_RULES):
        return Attribution.OTHER
    if any(p.search(text) for p in _TIME_RULES):
        return Attribution.TIME
    if any(p.search(text) for p in _LENGTH_RULES):
        return Attribution.TEXT_LENGTH
    return Attribution.SEMANTIC


def _parse_attribution_label(text: str) -> Attribution:
    t = text.strip().lower()
    for key, value in (("text length", Attribution.TEXT_LENGTH), ("length", Attribution.TEXT_LENGTH),
                       ("semantic", Attribution.SEMANTIC), ("time", Attribution.TIME),
                       ("other", Attribution.OTHER)):
        if key in t:
            return value
    return Attribution.OTHER


def classify_attribution(justification: str, gateway=None, model_id: str = "classifier",
                         template_dir: str | None = None) -> Attribution:
    if not justification or not justification.strip():
        raise ValueError("justification must be non-empty")
    if gateway is None:
        return attribution_rules(justification)
    from .gateway import ChatRequest

    prompt = load_template("ddj_attribution.txt", template_dir).format(justification=justification)
    resp = gateway.complete(ChatRequest(model_id, [{"role": "user", "content": prompt}]))
    return _parse_attribution_label(resp.text)


def attribute_judgments(judgments: Sequence[Judgment], gateway=None, model_id: str = "classifier") -> list[Judgment]:
    for j in judgments:
        if j.justification and j.justification.strip():
            j.attribution = classify_attribution(j.justification, gateway, model_id).value
        else:
            j.attribution = Attribution.OTHER.value
    return list(judgments)


def attribution_table(judgments: Sequence[Judgment]) -> dict:
    """Per setting and category: usage share (%) and accuracy within the category (%)."""
    out = {}
    for setting in [s.value for s in DdjSetting]:
        rows = [j for j in judgments if j.setting == setting]
        if not rows:
            continue
        block = {}
        for cat in Attribution:
            group = [j for j in rows if j.attribution == cat.value]
            block[cat.value] = {
                "usage_pct": len(group) / len(rows) * 100.0,
                "accuracy_pct": (sum(j.correct for j in group) / len(group) * 100.0) if group else None,
            }
        out[setting] = block
    return out


def write_jsonl(rows: Iterable, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in rows:
            f.write(json.dumps(r.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")


def read_cases(path) -> list[DdjCase]:
    return [DdjCase.from_dict(json.loads(l)) for l in Path(path).read_text(encoding="utf-8").splitlines() if l.strip()]


def read_judgments(path) -> list[Judgment]:
    return [Judgment.from_dict(json.loads(l)) for l in Path(path).read_text(encoding="utf-8").splitlines() if l.strip()]
