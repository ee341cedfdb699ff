import json
import random
from datetime import timedelta

import pytest

from tokentime.chronometry import ApproxCounter
from tokentime.ddj import (
    Attribution,
    DdjCase,
    DdjSetting,
    DialoguePair,
    IngestError,
    Judgment,
    accuracy_table,
    attribute_judgments,
    attribution_rules,
    attribution_table,
    build_cases,
    classify_attribution,
    ingest_pairs,
    judge_and_score,
    make_case,
    output_durations,
    parse_settings,
    parse_verdict,
    read_cases,
    read_judgments,
    synthesize_timestamps,
    write_jsonl,
)
from tokentime.gateway import FunctionBackend, Gateway
from tokentime.mockmodel import mock_backend

from conftest import write_conversations

C = ApproxCounter()


def pair(ta=100, tb=300, pid="p1"):
    return DialoguePair(pid, "Explain tides.", "a" * (4 * ta), "b" * (4 * tb), ta, tb, 4)


def reply(text):
    return {"choices": [{"message": {"content": text}}]}


# --- ingestion ---------------------------------------------------------------------

def test_ingest_arena_and_flat_shapes_agree(tmp_path):
    a = ingest_pairs(write_conversations(tmp_path / "a.jsonl", n=60), C)
    b = ingest_pairs(write_conversations(tmp_path / "b.jsonl", n=60, shape="flat"), C)
    assert [(p.pair_id, p.tokens_a, p.tokens_b) for p in a] == [(p.pair_id, p.tokens_a, p.tokens_b) for p in b]
    assert a and all(max(p.tokens_a, p.tokens_b) / min(p.tokens_a, p.tokens_b) >= 1.5 for p in a)
    assert a[0].source == {"model_a": "model-one", "model_b": "model-two"}


def test_ingest_filters(tmp_path):
    path = tmp_path / "c.jsonl"
    rows = [
        {"prompt": "p", "response_a": "abcd" * 10, "response_b": "abcd" * 10},  # equal
        {"prompt": "p", "response_a": "", "response_b": "abcd"},  # empty side
        {"prompt": "p", "response_a": "abcd" * 10, "response_b": "abcd" * 14},  # ratio 1.4
        {"prompt": "p", "response_a": "abcd" * 10, "response_b": "abcd" * 15},  # ratio 1.5 kept
        {"prompt": "p", "response_a": "abcd" * 30, "response_b": "abcd" * 10},  # kept
    ]
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n\n")
    kept = ingest_pairs(path, C)
    assert [p.pair_id for p in kept] == ["4", "5"]
    assert [p.pair_id for p in ingest_pairs(path, C, limit=1)] == ["4"]
    assert [p.pair_id for p in ingest_pairs(path, C, ratio_threshold=3.0)] == ["5"]


def test_ingest_allowlist(tmp_path):
    path = write_conversations(tmp_path / "c.jsonl", n=30)
    assert ingest_pairs(path, C, allowlist=["model-"])
    assert ingest_pairs(path, C, allowlist=["model-one"]) == []
    assert ingest_pairs(path, C, allowlist=["one", "two"])


@pytest.mark.parametrize("line", ["{not json", json.dumps({"prompt": "p"}),
                                  json.dumps({"prompt": 1, "response_a": "a", "response_b": "b"}),
                                  json.dumps({"conversation_a": [{"role": "user", "content": "x"}],
                                              "conversation_b": []})])
def test_ingest_rejects_malformed(tmp_path, line):
    path = tmp_path / "bad.jsonl"
    path.write_text(line + "\n")
    with pytest.raises(IngestError):
        ingest_pairs(path, C)


def test_parse_settings():
    assert parse_settings("all") == list(DdjSetting)
    assert parse_settings("S2-M+, s1-hint") == [DdjSetting.S2_MPLUS, DdjSetting.S1_HINT]
    with pytest.raises(ValueError):
        parse_settings("S3")


# --- durations and timestamps ---------------------------------------------------------

def test_output_durations_example():
    assert output_durations(100, 300) == (5, 15)
    assert output_durations(100, 300, misleading=True) == (15, 5)


def test_rounding_tie_favors_longer_reply():
    assert output_durations(30, 46) == (2, 3)
    assert output_durations(46, 30) == (3, 2)
    assert output_durations(3, 5) == (1, 2)  # both would floor at the one-second minimum


def test_timestamps_are_consistent_and_independent():
    ts = synthesize_timestamps(pair(), DdjSetting.S2, random.Random(0))
    a, b = ts["A"], ts["B"]
    for t in (a, b):
        assert t.in_start <= t.in_end == t.out_start < t.out_end
    assert (a.output_seconds, b.output_seconds) == (5, 15)
    assert a.in_start != b.in_start
    m = synthesize_timestamps(pair(), DdjSetting.S2_M, random.Random(0))
    assert (m["A"].output_seconds, m["B"].output_seconds) == (15, 5)
    with pytest.raises(ValueError):
        synthesize_timestamps(pair(), DdjSetting.S1, random.Random(0))


def test_typing_phase_follows_prompt_tokens():
    p = pair()
    p.prompt_tokens = 50
    for seed in range(20):
        t = synthesize_timestamps(p, DdjSetting.S2, random.Random(seed))["A"]
        assert 10 <= (t.in_end - t.in_start) / timedelta(seconds=1) <= 50


# --- cases and prompts -----------------------------------------------------------------

def test_case_prompts_per_setting():
    p = pair()
    s1 = make_case(p, DdjSetting.S1, 0)
    assert "Assistant finished generating" not in s1.user_prompt and "Token count" not in s1.user_prompt
    hint = make_case(p, DdjSetting.S1_HINT, 0)
    assert hint.system_prompt.startswith(s1.system_prompt.rstrip("\n")) and hint.system_prompt != s1.system_prompt
    assert "Hint:" in hint.system_prompt and "Hint:" not in hint.user_prompt
    count = make_case(p, DdjSetting.S1_COUNT, 0)
    assert "Token count of dialogue A (prompt + reply):" in count.user_prompt
    assert count.token_annotations == {"A": 104, "B": 304}
    s2 = make_case(p, DdjSetting.S2, 0)
    assert s2.user_prompt.count("User started typing") == 2 and "Token count" not in s2.user_prompt
    mp = make_case(p, DdjSetting.S2_MPLUS, 0)
    assert "Assistant finished generating" in mp.user_prompt and "Token count" in mp.user_prompt


def test_gold_follows_displayed_cue():
    p = pair()
    assert make_case(p, DdjSetting.S1, 0).gold == "B"
    assert make_case(p, DdjSetting.S2, 0).gold == "B"
    assert make_case(p, DdjSetting.S2_M, 0).gold == "A"
    assert make_case(p, DdjSetting.S2_MPLUS, 0).gold == "A"


def test_swap_changes_presentation_only():
    p = pair()
    swaps = {make_case(DialoguePair(f"p{i}", *list(p.__dict__.values())[1:]), DdjSetting.S2, 0).swap
             for i in range(40)}
    assert swaps == {True, False}
    c = make_case(p, DdjSetting.S2, 0)
    c.swap = not c.swap
    assert c.original("A") == c.presented("A") == ("B" if c.swap else "A")


def test_case_round_trip(tmp_path):
    cases = build_cases([pair(), pair(50, 20, "p2")], list(DdjSetting), seed=4)
    write_jsonl(cases, tmp_path / "cases.jsonl")
    back = read_cases(tmp_path / "cases.jsonl")
    assert [c.to_dict() for c in back] == [c.to_dict() for c in cases]
    assert make_case(pair(), DdjSetting.S2, 4).to_dict() == cases[3 * 2].to_dict()


# --- verdicts ------------------------------------------------------------------------------

@pytest.mark.parametrize("text,choice", [
    ("Answer: A\nJustification: it is longer.", "A"),
    ("**Answer:** Dialogue B\n**Justification:** timestamps.", "B"),
    ("answer: (b)\njustification: x", "B"),
    ("I think dialogue A took longer.", "A"),
    ("Answer: A ... actually, Answer: B\nJustification: recheck", "B"),
    ("No idea.", None),
])
def test_parse_verdict(text, choice):
    assert parse_verdict(text)[0] == choice


def test_parse_verdict_justification():
    assert parse_verdict("Answer: B\nJustification: B ran for 15 seconds.")[1] == "B ran for 15 seconds."


def test_judge_maps_presented_choice_back():
    c = make_case(pair(), DdjSetting.S1, 0)
    presented_gold = c.presented(c.gold)
    gw = Gateway(FunctionBackend(lambda p: reply(f"Answer: {presented_gold}\nJustification: longer.")))
    table, js = judge_and_score([c], gw, "m", replications=2)
    assert all(j.correct and j.choice == "B" for j in js)
    assert table["S1"]["accuracy"] == 100.0 and table["S1"]["per_replication"] == [100.0, 100.0]


def test_parse_failure_counts_as_incorrect():
    c = make_case(pair(), DdjSetting.S2, 0)
    gw = Gateway(FunctionBackend(lambda p: reply("I refuse.")))
    table, js = judge_and_score([c], gw, "m", replications=3)
    assert table["S2"]["accuracy"] == 0.0 and table["S2"]["parse_failures"] == 3
    assert not js[0].parse_ok and js[0].choice is None


def test_replications_use_distinct_seed_hints():
    seeds = []
    gw = Gateway(FunctionBackend(lambda p: seeds.append(p["seed"]) or reply("Answer: A")))
    judge_and_score([make_case(pair(), DdjSetting.S1, 0)], gw, "m", replications=5)
    assert seeds == [0, 1, 2, 3, 4]


def test_deterministic_judge_has_zero_spread(tmp_path):
    pairs = ingest_pairs(write_conversations(tmp_path / "c.jsonl", n=80), C)
    cases = build_cases(pairs, [DdjSetting.S2], seed=1)
    table, js = judge_and_score(cases, Gateway(mock_backend()), "mock", replications=3, parallelism=4)
    vec = table["S2"]["per_replication"]
    assert len(set(vec)) == 1 and table["S2"]["n_cases"] == len(pairs)
    write_jsonl(js, tmp_path / "j.jsonl")
    assert [j.to_dict() for j in read_judgments(tmp_path / "j.jsonl")] == [j.to_dict() for j in js]


# --- attribution ---------------------------------------------------------------------------

JUSTIFICATIONS = [
    ("Dialogue B is much longer, so it took more time.", Attribution.TEXT_LENGTH),
    ("B has roughly three times as many tokens.", Attribution.TEXT_LENGTH),
    ("The second reply is more verbose.", Attribution.TEXT_LENGTH),
    ("A's response is short and concise.", Attribution.TEXT_LENGTH),
    ("Higher word count in B.", Attribution.TEXT_LENGTH),
    ("B contains more paragraphs and detail.", Attribution.TEXT_LENGTH),
    ("A has over 2000 characters.", Attribution.TEXT_LENGTH),
    ("The lengthy explanation in A.", Attribution.TEXT_LENGTH),
    ("B's generation lasted 15 seconds versus 5 for A.", Attribution.TIME),
    ("According to the timestamps, A finished later.", Attribution.TIME),
    ("Generation for B ended at 10:42:17, after a longer run.", Attribution.TIME),
    ("The duration between start and finish is larger for A.", Attribution.TIME),
    ("A's elapsed generation time is greater.", Attribution.TIME),
    ("Looking at the end times, B completed last.", Attribution.TIME),
    ("B took 12 s while A took 3 s.", Attribution.TIME),
    ("The time stamp for A shows it started at 09:00 and ended at 09:01.", Attribution.TIME),
    ("The logged interval for dialogue B is bigger even though it is shorter.", Attribution.TIME),
    ("B requires multi-step mathematical derivation.", Attribution.SEMANTIC),
    ("A involves writing working code, which is harder to produce.", Attribution.SEMANTIC),
    ("The question in B is more complex and needs careful reasoning.", Attribution.SEMANTIC),
    ("A translates a poem, which demands creativity.", Attribution.SEMANTIC),
    ("B covers several distinct topics in depth.", Attribution.SEMANTIC),
    ("Dialogue A needed to recall obscure historical facts.", Attribution.SEMANTIC),
    ("The task in B is a simple greeting, so A must be the slower one.", Attribution.SEMANTIC),
    ("A enumerates a detailed list of steps.", Attribution.SEMANTIC),
    ("I cannot determine which one took longer.", Attribution.OTHER),
    ("There is not enough information here.", Attribution.OTHER),
    ("It is impossible to tell from the dialogues alone.", Attribution.OTHER),
    ("???", Attribution.OTHER),
    ("-- 42 --", Attribution.OTHER),
]


@pytest.mark.parametrize("text,label", JUSTIFICATIONS)
def test_attribution_rules_hand_labelled(text, label):
    assert attribution_rules(text) is label


def test_classify_rejects_empty():
    with pytest.raises(ValueError):
        classify_attribution("  ")


def test_attribution_partition_sums_to_100():
    js = [Judgment(f"c{i}", "S2", 0, "A", "A", i % 3 == 0, True, t, t)
          for i, (t, _) in enumerate(JUSTIFICATIONS)]
    js.append(Judgment("empty", "S2", 0, None, "A", False, False, "", ""))
    table = attribution_table(attribute_judgments(js))
    block = table["S2"]
    assert sum(v["usage_pct"] for v in block.values()) == pytest.approx(100.0)
    assert block["Other"]["usage_pct"] == pytest.approx(6 / 31 * 100)
    assert all(v["accuracy_pct"] is None or 0 <= v["accuracy_pct"] <= 100 for v in block.values())


def test_llm_attribution_through_mock():
    gw = Gateway(mock_backend())
    labels = {t: classify_attribution(t, gw).value for t, _ in JUSTIFICATIONS[:17]}
    assert set(labels.values()) <= {a.value for a in Attribution}


def test_llm_attribution_label_parsing():
    answers = iter(["Category: Time", "text length", "SEMANTIC.", "hmm"])
    gw = Gateway(FunctionBackend(lambda p: reply(next(answers))))
    got = [classify_attribution("x y z", gw) for _ in range(4)]
    assert got == [Attribution.TIME, Attribution.TEXT_LENGTH, Attribution.SEMANTIC, Attribution.OTHER]


def test_accuracy_table_orders_settings():
    js = [Judgment("a", s.value, r, "A", "A", True, True, "", "") for s in reversed(DdjSetting) for r in range(2)]
    assert list(accuracy_table(js)) == [s.value for s in DdjSetting]
