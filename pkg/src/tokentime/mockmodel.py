"""Deterministic stand-in for a chat model, used for offline runs and tests.

``MockModel`` answers OpenAI-shaped payloads for every prompt family in the
package (BombRush turns, duration judging, attribution, reasoning audit and
QA). Replies depend only on the payload, so recording them once and
replaying gives byte-identical runs.
"""
from __future__ import annotations

import hashlib
import json
import re
from datetime import datetime

from .analytics import audit_text_rules
from .chronometry import ApproxCounter
from .ddj import TS_FORMAT, attribution_rules
from .gridworld import DIRECTION_ORDER, Bearing, Direction, Position
from .uqa import load_pool

_FILLER = ("I check the walls around me and compare the possible moves. ",
           "Moving along the signal bearing should shorten the distance. ",
           "I keep track of where I have been so I do not loop. ",
           "The map shows open cells in that direction. ")


def _h(*parts) -> int:
    return int.from_bytes(hashlib.sha256("\x1f".join(map(str, parts)).encode()).digest()[:8], "big")


def _reply(text: str, messages: list) -> dict:
    prompt = sum(ApproxCounter().count(m["content"]) for m in messages)
    completion = max(1, (len(text.split()) * 4 + 2) // 3)  # a model-specific count, unlike chars/4
    return {
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
        "usage": {"prompt_tokens": prompt, "completion_tokens": completion, "total_tokens": prompt + completion},
    }


class MockModel:
    """Callable backend: ``MockModel()(payload) -> response body``.

    ``judge_policy`` selects the duration judge: ``timestamp`` reads displayed
    durations when present and falls back to reply length, ``length`` always
    picks the longer reply. ``reasoning_sentences`` sets the BombRush verbosity.
    """

    def __init__(self, judge_policy: str = "timestamp", reasoning_sentences: int = 6):
        if judge_policy not in ("timestamp", "length"):
            raise ValueError("judge_policy must be 'timestamp' or 'length'")
        self.judge_policy = judge_policy
        self.reasoning_sentences = reasoning_sentences
        self.pool = load_pool()

    def __call__(self, payload: dict) -> dict:
        messages = payload["messages"]
        system = messages[0]["content"] if messages[0]["role"] == "system" else ""
        user = messages[-1]["content"]
        seed = payload.get("seed") or 0
        if "<<<DIALOGUE A>>>" in user:
            text = self.judge(user)
        elif user.startswith("A model was asked which of two dialogues"):
            text = attribution_rules(user.rsplit("Justification:\n", 1)[-1]).value
            text = {"TextLength": "text length"}.get(text, text.lower())
        elif user.startswith("You are auditing the reasoning"):
            urg, tw = audit_text_rules(user.split("Reasoning:\n", 1)[-1])
            text = f"urgency: {'yes' if urg else 'no'}\ntw_mapping: {'yes' if tw else 'no'}"
        elif "Current environment state (JSON):" in user:
            text = self.bombrush(system, user, seed)
        elif user.startswith("Answer the following question"):
            text = self.qa(user, seed)
        else:
            text = "I am not sure what is being asked."
        return _reply(text, messages)

    # --- BombRush ---------------------------------------------------------------------

    def bombrush(self, system: str, user: str, seed: int) -> str:
        m = re.search(r"Current environment state \(JSON\):\n(\{.*?\})\n", user, re.DOTALL)
        state = json.loads(m.group(1))
        agent = Position(*state["agent"])
        walls = {tuple(w) for w in state["walls"]}
        size = state["size"]

        def open_(d: Direction) -> bool:
            q = agent.offset(d)
            return 0 <= q.row < size and 0 <= q.col < size and tuple(q) not in walls

        signal = state.get("signal")
        can_detect = "DETECT" in system
        if signal is None and can_detect:
            choice, why = "DETECT", "I have no fresh reading of the bomb, so I detect first."
        else:
            dirs = Bearing(signal["bearing"]).components if signal else ()
            legal = [d for d in dirs if open_(d)] or [d for d in DIRECTION_ORDER if open_(d)]
            pick = legal[_h(seed, agent) % len(legal)] if not dirs else legal[0]
            choice = pick.name if legal else "NORTH"
            why = (f"The target is {signal['distance']} steps away to the {signal['bearing']}."
                   if signal else "No signal yet, so I explore.")
        n = self.reasoning_sentences
        notes = []
        if "reasoning consumes time" in system:
            n = max(1, n // 2)
            notes.append("My reasoning costs time, so I keep it concise to save time.")
        if "Hurry up!" in user:
            n = max(1, n - 2)
            notes.append("Time is running out, I must act quickly.")
        remaining = state.get("remaining_seconds")
        if remaining is not None and remaining < 60:
            notes.append(f"Only {remaining:.0f} seconds remaining!")
        filler = "".join(_FILLER[(i + _h(seed)) % len(_FILLER)] for i in range(n))
        return f"{why} {' '.join(notes)} {filler}".replace("  ", " ").strip() + f"\nAction: {choice}"

    # --- duration judge -------------------------------------------------------------------

    @staticmethod
    def _dialogues(user: str) -> dict:
        out = {}
        for label, body in re.findall(r"<<<DIALOGUE ([AB])>>>\n(.*?)<<<END DIALOGUE \1>>>", user, re.DOTALL):
            reply = body.split("[Assistant]\n", 1)[-1]
            stamps = dict((kind, datetime.strptime(ts, TS_FORMAT)) for ts, kind in
                          re.findall(r"\[([\d-]+ [\d:]+)\] Assistant (started|finished) generating", body))
            out[label] = {"reply": reply, "stamps": stamps}
        return out

    def judge(self, user: str) -> str:
        d = self._dialogues(user)
        if self.judge_policy == "timestamp" and all(len(d[k]["stamps"]) == 2 for k in "AB"):
            secs = {k: (d[k]["stamps"]["finished"] - d[k]["stamps"]["started"]).total_seconds() for k in "AB"}
            pick = "A" if secs["A"] > secs["B"] else "B"
            other = "B" if pick == "A" else "A"
            return (f"Answer: {pick}\nJustification: The reply in dialogue {pick} took {secs[pick]:.0f} seconds "
                    f"according to its timestamps, compared with {secs[other]:.0f} seconds for {other}.")
        lens = {k: len(d[k]["reply"]) for k in "AB"}
        pick = "A" if lens["A"] > lens["B"] else "B"
        return f"Answer: {pick}\nJustification: Reply {pick} is much longer, so it took longer to generate."

    # --- QA ------------------------------------------------------------------------------------

    def qa(self, user: str, seed: int) -> str:
        question = user.split("Question:", 1)[-1]
        urgent = any(p in user for p in self.pool)
        labels = re.findall(r"^\(([A-J])\) ", question, re.MULTILINE)
        key = _h(question.split("\n\n")[0], seed)
        answer = labels[key % len(labels)] if labels else str(key % 100)
        steps = 1 if urgent else 4
        body = " ".join(f"Step {i + 1}: consider what the question asks and check option {answer}."
                        for i in range(steps))
        return f"{body}\nAnswer: {answer}"


def mock_backend(**kwargs):
    from .gateway import FunctionBackend

    return FunctionBackend(MockModel(**kwargs))
