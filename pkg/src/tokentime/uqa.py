"""Urgency-aware QA: normal vs. urgent prompts, answer extraction, accuracy and token deltas."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from enum import Enum
from pathlib import Path
from statistics import fmean
from typing import Iterable, Optional, Sequence

from ._assets import PROMPT_DIR, load_template
from ._rng import substream
from .analytics import delta_pct
from .chronometry import TokenCounter

EXTRACTOR_ID = "uqa-extract-v1"
DATASET_TAGS = ("commonsense_mc", "math_word", "science_mc")
DEFAULT_REPLICATIONS = 5


class EmptyPool(ValueError):
    pass


class IncompleteRun(ValueError):
    pass


class DatasetError(ValueError):
    pass


class Mode(Enum):
    NORMAL = "Normal"
    URGENT = "Urgent"


def load_pool(path=None) -> list[str]:
    path = Path(path) if path else PROMPT_DIR / "uqa_urgency_pool.json"
    return list(json.loads(path.read_text(encoding="utf-8")))


@dataclass
class UqaItem:
    item_id: str
    dataset_tag: str
    question: str
    gold_answer: str
    choices: Optional[list] = None  # [(label, text), ...]
    mode: Mode = Mode.NORMAL
    urgency_phrase: Optional[str] = None

    def __post_init__(self):
        if not self.gold_answer:
            raise DatasetError(f"item {self.item_id}: empty gold answer")
        if (self.urgency_phrase is not None) != (self.mode is Mode.URGENT):
            raise ValueError("urgency_phrase must be set exactly in urgent mode")


@dataclass
class UqaResult:
    item_id: str
    dataset_tag: str
    mode: Mode
    replication: int
    raw_output: str
    extracted: Optional[str]
    correct: bool
    tokens_shared: int
    tokens_model_specific: Optional[int] = None
    urgency_phrase: Optional[str] = None

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["mode"] = self.mode.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "UqaResult":
        d = dict(d)
        d["mode"] = Mode(d["mode"])
        return cls(**d)


# --- datasets -------------------------------------------------------------------------

def _choices(raw) -> Optional[list]:
    if raw is None:
        return None
    if isinstance(raw, dict):
        return [(str(k), str(v)) for k, v in raw.items()]
    out = []
    for i, c in enumerate(raw):
        if isinstance(c, dict):
            out.append((str(c["label"]), str(c["text"])))
        else:
            out.append((chr(ord("A") + i), str(c)))
    return out


def load_dataset(path, tag: str, limit: Optional[int] = None) -> list[UqaItem]:
    """JSONL with ``question``, ``answer`` and, for multiple choice, ``choices``.

    ``choices`` may be a list of strings (labelled A, B, ...), a list of
    ``{label, text}`` objects or a ``{label: text}`` mapping.
    """
    if tag not in DATASET_TAGS:
        raise DatasetError(f"unknown dataset tag {tag!r}; expected one of {DATASET_TAGS}")
    items = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                question, answer = rec["question"], str(rec["answer"])
            except (json.JSONDecodeError, KeyError) as exc:
                raise DatasetError(f"{path}:{lineno}: bad record ({exc})") from None
            choices = _choices(rec.get("choices"))
            if tag.endswith("_mc") and not choices:
                raise DatasetError(f"{path}:{lineno}: multiple-choice item without choices")
            gold = normalize_answer(answer, tag)
            if gold is None:
                raise DatasetError(f"{path}:{lineno}: cannot normalize gold answer {answer!r}")
            items.append(UqaItem(str(rec.get("id", f"{tag}-{lineno}")), tag, question, gold, choices))
            if limit is not None and len(items) >= limit:
                break
    return items


# --- prompts --------------------------------------------------------------------------

def build_qa_prompt(item: UqaItem, template_dir: str | None = None) -> str:
    choices = ""
    if item.choices:
        choices = "\n".join(f"({label}) {text}" for label, text in item.choices) + "\n"
    prompt = load_template("uqa_prompt.txt", template_dir).format(question=item.question, choices=choices)
    prompt = prompt.rstrip("\n")
    if item.mode is Mode.URGENT:
        prompt += "\n\n" + item.urgency_phrase
    return prompt


def with_mode(item: UqaItem, mode: Mode, rng=None, pool: Sequence[str] = ()) -> UqaItem:
    """Copy of ``item`` in ``mode``; urgent mode samples one phrase from ``pool`` with ``rng``."""
    phrase = None
    if mode is Mode.URGENT:
        if not pool:
            raise EmptyPool("urgency phrase pool is empty")
        phrase = rng.choice(list(pool))
    return UqaItem(item.item_id, item.dataset_tag, item.question, item.gold_answer, item.choices, mode, phrase)


# --- extraction -----------------------------------------------------------------------

_BOXED = re.compile(r"\\boxed\{([^{}]*)\}")
_ANSWER_LINE = re.compile(r"answer\s*(?:is)?\s*[:：]?\s*(.+)", re.IGNORECASE)
_ANSWER_IS = re.compile(r"answer\s+is\s*[:：]?\s*\(?([A-Za-z])\)?(?![A-Za-z])", re.IGNORECASE)
_PAREN_LETTER = re.compile(r"\(([A-J])\)")
# "A" and "I" followed by a lowercase word are the article and pronoun, not options
_BARE_LETTER = re.compile(r"(?<![A-Za-z'])(?:[AI](?!\s+[a-z])|[B-HJ])(?![A-Za-z'])")
_NUMBER = re.compile(r"[-−]?\s*[$€£]?\s*\d[\d,]*(?:\.\d+)?|[-−]?\s*[$€£]?\s*\.\d+")


def canonical_number(text: str) -> Optional[str]:
    """Strip grouping commas, currency signs and spaces; render as a canonical decimal."""
    cleaned = re.sub(r"[,\s$€£]", "", text).replace("−", "-")
    try:
        d = Decimal(cleaned)
    except InvalidOperation:
        return None
    if d == d.to_integral_value():
        return str(d.quantize(Decimal(1)))
    return format(d.normalize(), "f")


def _last_number(text: str) -> Optional[str]:
    found = _NUMBER.findall(text)
    for cand in reversed(found):
        value = canonical_number(cand)
        if value is not None:
            return value
    return None


def _mc_letter(text: str) -> Optional[str]:
    hits = _PAREN_LETTER.findall(text)
    if hits:
        return hits[-1].upper()
    hits = [m.group(0) for m in _BARE_LETTER.finditer(text)]
    return hits[-1].upper() if hits else None


def extract_answer(raw_output: str, dataset_tag: str) -> Optional[str]:
    """Normalized answer or ``None``.

    Multiple choice: a ``\\boxed{}`` answer, then the last "Answer:" line,
    then "answer is (X)", then the last standalone option letter. Math: the
    last number inside the same preferred regions, else in the whole text.
    """
    if not raw_output or not raw_output.strip():
        return None
    mc = dataset_tag.endswith("_mc")
    pick = _mc_letter if mc else _last_number
    boxed = _BOXED.findall(raw_output)
    if boxed:
        got = pick(boxed[-1])
        if got:
            return got
    lines = [m.group(1) for line in raw_output.splitlines() if (m := re.match(r"\W*" + _ANSWER_LINE.pattern, line.strip(), re.IGNORECASE))]
    if lines:
        got = pick(lines[-1])
        if got:
            return got
    if mc:
        hits = _ANSWER_IS.findall(raw_output)
        if hits and hits[-1].upper() <= "J":
            return hits[-1].upper()
    return pick(raw_output)


def normalize_answer(answer: str, dataset_tag: str) -> Optional[str]:
    if dataset_tag.endswith("_mc"):
        a = answer.strip().strip("()").upper()
        return a if re.fullmatch(r"[A-J]", a) else None
    return canonical_number(answer)


# --- running and scoring --------------------------------------------------------------

def run_uqa(items: Sequence[UqaItem], gateway, model_id: str, counter: TokenCounter, seed: int,
            replications: int = DEFAULT_REPLICATIONS, modes: Sequence[Mode] = (Mode.NORMAL, Mode.URGENT),
            pool: Sequence[str] | None = None, temperature: float = 0.0,
            max_output_tokens: Optional[int] = None, parallelism: int = 1,
            template_dir: str | None = None) -> list[UqaResult]:
    """Answer every item once per mode per replication.

    Tokens are counted twice: with the shared counter over the raw output and,
    when the backend reports it, the model's own ``completion_tokens``.
    """
    from .gateway import ChatRequest

    pool = load_pool() if pool is None else list(pool)

    def one(job):
        item, mode, rep = job
        rng = substream(seed, "phrase", item.dataset_tag, item.item_id, rep)
        variant = with_mode(item, mode, rng, pool)
        req = ChatRequest(model_id, [{"role": "user", "content": build_qa_prompt(variant, template_dir)}],
                          temperature, max_output_tokens, seed_hint=rep)
        resp = gateway.complete(req)
        extracted = extract_answer(resp.text, item.dataset_tag)
        usage = resp.reported_usage or {}
        return UqaResult(item.item_id, item.dataset_tag, mode, rep, resp.text, extracted,
                         extracted is not None and extracted == item.gold_answer,
                         counter.count(resp.text), usage.get("completion_tokens"), variant.urgency_phrase)

    jobs = [(it, m, r) for r in range(replications) for m in modes for it in items]
    if parallelism > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=parallelism) as pool_exec:
            return list(pool_exec.map(one, jobs))
    return [one(j) for j in jobs]


def _mean_or_none(values):
    values = [v for v in values if v is not None]
    return fmean(values) if values else None


def _delta(before, after):
    if before is None or after is None or before == 0:
        return None
    return delta_pct(before, after)


def score_run(results: Sequence[UqaResult]) -> dict:
    """Per dataset: accuracy and mean tokens (both counters) per mode, plus urgent-vs-normal deltas."""
    seen: dict = {}
    for r in results:
        seen.setdefault((r.dataset_tag, r.item_id, r.replication), set()).add(r.mode)
    for key, modes in seen.items():
        if modes != {Mode.NORMAL, Mode.URGENT}:
            raise IncompleteRun(f"item {key[1]} ({key[0]}, replication {key[2]}) lacks a mode")
    report = {"extractor": EXTRACTOR_ID}
    for tag in sorted({r.dataset_tag for r in results}):
        rows = [r for r in results if r.dataset_tag == tag]
        block = {"n_items": len({r.item_id for r in rows})}
        for mode in Mode:
            mrows = [r for r in rows if r.mode is mode]
            reps = sorted({r.replication for r in mrows})
            acc_vec = [fmean(r.correct for r in mrows if r.replication == k) * 100.0 for k in reps]
            block[mode.value] = {
                "accuracy": fmean(acc_vec),
                "accuracy_per_replication": acc_vec,
                "tokens_shared": fmean(r.tokens_shared for r in mrows),
                "tokens_shared_per_replication": [fmean(r.tokens_shared for r in mrows if r.replication == k)
                                                  for k in reps],
                "tokens_model_specific": _mean_or_none(r.tokens_model_specific for r in mrows),
            }
        n, u = block[Mode.NORMAL.value], block[Mode.URGENT.value]
        block["delta_pct"] = {k: _delta(n[k], u[k]) for k in ("accuracy", "tokens_shared", "tokens_model_specific")}
        report[tag] = block
    return report


def write_results(results: Iterable[UqaResult], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in results:
            f.write(json.dumps(r.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")


def read_results(path) -> list[UqaResult]:
    return [UqaResult.from_dict(json.loads(l)) for l in Path(path).read_text(encoding="utf-8").splitlines() if l.strip()]
