"""Acceptance suite: one test per criterion, each at its stated tolerance and time limit.

Run ``pytest tests/test_acceptance.py`` and read the "acceptance criteria"
section of the summary, or ``python tests/test_acceptance.py`` for a
standalone pass/fail listing.
"""
import itertools
import json
import math
import random
import time
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import pytest

from tokentime import cli
from tokentime.agents import ActionKind, AgentAction, BfsOptimalAgent, ScriptedAgent
from tokentime.analytics import (
    DegenerateSample,
    bfs_dist,
    delta_pct,
    metric_report,
    navigation_accuracy,
    paired_t_statistic,
    paired_ttest,
    stepwise_accuracy,
)
from tokentime.chronometry import (
    ApproxCounter,
    ConversionRate,
    TokenClock,
    calibrate_vout,
    charge,
    charge_tokens,
)
from tokentime.ddj import DdjSetting, build_cases, gold_label, ingest_pairs, judge_and_score, make_case
from tokentime.episode import Outcome, get_setting, run_batch, run_episode
from tokentime.gateway import Gateway
from tokentime.gridworld import GridMap, Position, bfs_distances, generate_map
from tokentime.mockmodel import mock_backend

from conftest import FIXTURES, write_conversations, write_math_dataset, write_mc_dataset


def _timed():
    start = time.perf_counter()
    return lambda: time.perf_counter() - start


# 1 -------------------------------------------------------------------------------------

@pytest.mark.criterion(1, "map generation: 1,000 seeded maps, 9 walls, reachable starts, bit-identical (<5 s)")
def test_criterion_01_map_generation():
    elapsed = _timed()
    for seed in range(1000):
        g = generate_map(seed)
        assert len(g.walls) == 9
        assert g.agent_start != g.target_start
        assert g.agent_start not in g.walls and g.target_start not in g.walls
        assert g.target_start in bfs_distances(g, g.agent_start)
        assert generate_map(seed).to_dict() == g.to_dict()
    assert elapsed() < 5.0


# 2 -------------------------------------------------------------------------------------

@pytest.mark.criterion(2, "clock arithmetic: 500 tokens at v_out=0.01 is 5.0 s; additivity/monotonicity x10,000")
def test_criterion_02_clock_arithmetic():
    clock = TokenClock.start(300.0, ConversionRate(0.01))
    after, charged, detonated = charge_tokens(clock, 500)
    assert charged == 5.0 and after.remaining == 295.0 and not detonated

    rng = random.Random(2)
    for _ in range(10_000):
        rate = ConversionRate(rng.choice([0.005, 0.01, 0.042, 0.1667, rng.uniform(1e-4, 0.5)]))
        seq = [rng.randrange(0, 3000) for _ in range(rng.randrange(1, 12))]
        c = TokenClock.start(300.0, rate)
        prev = c.remaining
        total = 0.0
        for n in seq:
            c, s, _ = charge_tokens(c, n)
            assert c.remaining <= prev  # monotone
            assert math.isclose(prev - c.remaining, s, rel_tol=1e-12, abs_tol=1e-9)
            prev = c.remaining
            total += s
        whole = charge_tokens(TokenClock.start(300.0, rate), sum(seq))[1]
        assert math.isclose(total, whole, rel_tol=1e-9, abs_tol=1e-9)  # additive
        assert c.detonated == (c.remaining <= 0)


# 3 -------------------------------------------------------------------------------------

@pytest.mark.criterion(3, "calibration: 238/60/580 tokens reproduce published v_out within 0.001; QwQ mismatch reported")
def test_criterion_03_calibration(tmp_path):
    published = {238: (0.042, 0.042), 60: (0.166, 0.167), 580: (0.017, 0.017)}
    for tokens, (lo, hi) in published.items():
        v = calibrate_vout(tokens, 30, 300).v_out
        assert lo - 0.001 <= v <= hi + 0.001, (tokens, v)
    assert calibrate_vout(60, 30, 300).v_out == pytest.approx(300 / 1800)

    # The reasoning model row does not reproduce; report it instead of forcing agreement.
    qwq = calibrate_vout(2472, 30, 300).v_out
    assert round(qwq, 4) == 0.0040
    rel = abs(qwq - 0.005) / 0.005
    assert round(qwq, 3) != 0.005 and rel > 0.15
    print(f"QwQ-32B: computed v_out {qwq:.5f} vs published 0.005 ({rel:.0%} relative gap, not reconciled)")

    # the same through the CLI path with a scripted constant-length agent
    rep = cli.cmd_calibrate({**cli.DEFAULTS["calibrate"], "reasoning_tokens": 238, "runs": 10,
                             "out": str(tmp_path / "cal.json")})
    assert rep["v_out"] == pytest.approx(0.042, abs=5e-4)


# 4 -------------------------------------------------------------------------------------

def _brute_force_all_pairs(walls, n=4):
    """Shortest distance per pair by enumerating every simple path (no queue, no relaxation)."""
    cells = [(r, c) for r in range(n) for c in range(n) if (r, c) not in walls]

    def nbrs(p):
        r, c = p
        for q in ((r - 1, c), (r, c + 1), (r + 1, c), (r, c - 1)):
            if 0 <= q[0] < n and 0 <= q[1] < n and q not in walls:
                yield q

    out = {}
    for s in cells:
        best = {s: 0}
        on_path = {s}

        def walk(p, d):
            for q in nbrs(p):
                if q not in on_path:
                    if d + 1 < best.get(q, 1 << 30):
                        best[q] = d + 1
                    on_path.add(q)
                    walk(q, d + 1)
                    on_path.discard(q)

        walk(s, 0)
        out[s] = best
    return out


@pytest.mark.criterion(4, "BFS oracle equals brute-force path enumeration on all 4x4 maps with <=4 walls (<60 s)")
def test_criterion_04_bfs_oracle():
    elapsed = _timed()
    cells = [(r, c) for r in range(4) for c in range(4)]
    n_maps = 0
    for k in range(5):
        for walls in itertools.combinations(cells, k):
            walls = frozenset(walls)
            open_cells = [p for p in cells if p not in walls]
            grid = GridMap(4, frozenset(Position(*w) for w in walls), Position(*open_cells[0]),
                           Position(*open_cells[-1]), 0)
            truth = _brute_force_all_pairs(walls)
            for a in open_cells:
                for b in open_cells:
                    assert bfs_dist(grid, a, b) == truth[a].get(b)
            n_maps += 1
    assert n_maps == 2517
    assert elapsed() < 60.0


# 5 -------------------------------------------------------------------------------------

@pytest.mark.criterion(5, "oracle agent on 100 S1 maps: 100% Success, nav accuracy 1.0, ACC_t 1.0 (<10 s)")
def test_criterion_05_oracle_agent():
    elapsed = _timed()
    records = run_batch(get_setting("s1"), lambda s: BfsOptimalAgent(), range(100))
    rep = metric_report(records)
    assert rep.success_pct == 100.0
    assert all(navigation_accuracy(r) == 1.0 for r in records)
    acc = stepwise_accuracy(records, 15)
    assert all(a == 1.0 for a in acc.acc if a is not None)
    assert acc.total == sum(r.steps_taken for r in records)
    assert elapsed() < 10.0


# 6 -------------------------------------------------------------------------------------

class _Idle(ScriptedAgent):
    name = "idle"

    def choose(self, obs):
        return AgentAction(ActionKind.NOOP, None, parsed_ok=True)


@pytest.mark.criterion(6, "outcome taxonomy: Success/OverSteps/TimeOut reachable, shares sum to 100, limits 20/30")
def test_criterion_06_outcomes():
    rate = ConversionRate(0.042)
    s2, s3 = get_setting("s2"), get_setting("s3-passive")
    win = run_episode(s2, BfsOptimalAgent(), 3, rate)
    over2 = run_episode(s2, _Idle(), 3, rate)
    over3 = run_episode(s3, _Idle(), 3, rate)
    boom = run_episode(s2, BfsOptimalAgent(reasoning_tokens=4000), 3, rate)
    assert win.outcome is Outcome.SUCCESS
    assert over2.outcome is Outcome.OVER_STEPS and over2.steps_taken == 20
    assert over3.outcome is Outcome.OVER_STEPS and over3.steps_taken == 30
    assert boom.outcome is Outcome.TIME_OUT
    for steps in (over2.steps, over3.steps):
        assert [s.step for s in steps][-1] == len(steps)

    mixed = [win, over2, boom, run_episode(s2, BfsOptimalAgent(reasoning_tokens=300), 4, rate)]
    mixed += run_batch(s2, lambda s: BfsOptimalAgent(reasoning_tokens=random.Random(s).choice([0, 250, 400])),
                       range(30), rate)
    rep = metric_report(mixed)
    assert {Outcome.SUCCESS, Outcome.OVER_STEPS, Outcome.TIME_OUT} <= {r.outcome for r in mixed}
    assert abs(rep.success_pct + rep.oversteps_pct + rep.timeout_pct - 100.0) <= 1e-9


# 7 -------------------------------------------------------------------------------------

@pytest.mark.criterion(7, "DDJ synthesis: duration order 100% consistent (S2) / reversed (S2-M, S2-M+); "
                          "permutation-invariant gold; scripted judges 100%/0%")
def test_criterion_07_ddj_synthesis(tmp_path):
    conv = write_conversations(tmp_path / "conv.jsonl", n=600)
    pairs = ingest_pairs(conv, ApproxCounter(), 1.5, limit=300)
    assert len(pairs) == 300
    cases = build_cases(pairs, list(DdjSetting), seed=1)
    for c in cases:
        if not c.setting.has_timestamps:
            continue
        a, b = c.timestamps["A"].output_seconds, c.timestamps["B"].output_seconds
        assert a != b
        token_order = c.pair.tokens_a > c.pair.tokens_b
        if c.setting is DdjSetting.S2:
            assert (a > b) == token_order
        else:
            assert (a > b) != token_order
    for pair in pairs[:50]:
        for setting in DdjSetting:
            base = make_case(pair, setting, seed=1)
            flipped = make_case(pair, setting, seed=1)
            flipped.swap = not base.swap
            assert gold_label(base) == gold_label(flipped) == base.gold
            assert base.presented(base.gold) != flipped.presented(flipped.gold)

    length_gw = Gateway(mock_backend(judge_policy="length"))
    ts_gw = Gateway(mock_backend(judge_policy="timestamp"))
    length_table, _ = judge_and_score(cases, length_gw, "mock", replications=1)
    ts_table, _ = judge_and_score(cases, ts_gw, "mock", replications=1)
    for s in ("S1", "S1-Hint", "S1-Count", "S2"):
        assert length_table[s]["accuracy"] == 100.0
    assert length_table["S2-M"]["accuracy"] == 0.0
    assert length_table["S2-M+"]["accuracy"] == 0.0
    assert ts_table["S2-M"]["accuracy"] == 100.0
    assert ts_table["S2-M+"]["accuracy"] == 100.0


# 8 -------------------------------------------------------------------------------------

def _long_hand(normal: str, urgent: str) -> Decimal:
    n, u = Decimal(normal), Decimal(urgent)
    return ((u - n) / n * 100).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)


@pytest.mark.criterion(8, "UQA arithmetic: delta% reproduces the frozen published rows to two decimals")
def test_criterion_08_uqa_delta():
    rows = json.loads((FIXTURES / "uqa_published_rows.json").read_text())
    assert len(rows) == 54
    assert round(delta_pct(206.49, 163.70), 2) == -20.72
    assert round(delta_pct(48.18, 52.12), 2) == 8.18
    exact = [r for r in rows if r["exact_from_rounded_means"]]
    assert len(exact) == 47
    for r in exact:
        got = Decimal(repr(delta_pct(float(r["normal"]), float(r["urgent"])))).quantize(
            Decimal("0.01"), rounding=ROUND_HALF_UP)
        assert got == Decimal(r["published_delta_pct"]) == _long_hand(r["normal"], r["urgent"]), r
    # The remaining rows were published from unrounded means. Each must be reachable from
    # some pair of means that round to the printed ones (+-0.005 each), up to display rounding.
    for r in rows:
        if not r["exact_from_rounded_means"]:
            n, u = float(r["normal"]), float(r["urgent"])
            corners = [delta_pct(n + dn, u + du) for dn in (-0.005, 0.005) for du in (-0.005, 0.005)]
            published = float(r["published_delta_pct"])
            assert min(corners) - 0.005 <= published <= max(corners) + 0.005, r


# 9 -------------------------------------------------------------------------------------

@pytest.mark.criterion(9, "paired t-test matches the frozen reference on 20 n=20 fixtures within 1e-6; "
                          "degenerate input raises")
def test_criterion_09_ttest():
    ref = json.loads((FIXTURES / "ttest_reference.json").read_text())
    assert len(ref["random_n20"]) == 20
    for case in ref["random_n20"]:
        assert len(case["x"]) == 20
        t, df = paired_t_statistic(case["x"], case["y"])
        assert df == 19
        assert abs(t - case["t"]) <= 1e-6
        assert abs(paired_ttest(case["x"], case["y"], "greater") - case["p_greater"]) <= 1e-6
        assert abs(paired_ttest(case["x"], case["y"], "less") - case["p_less"]) <= 1e-6
    tb = ref["n10"]
    assert abs(paired_ttest(tb["x"], tb["y"]) - tb["p_greater"]) <= 1e-6
    with pytest.raises(DegenerateSample):
        paired_ttest([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateSample):
        paired_ttest([1.0], [0.0])


# 10 ------------------------------------------------------------------------------------

OUTPUTS = {
    "ddj": ("judgments.jsonl", "accuracy.json"),
    "uqa": ("results.jsonl", "summary.json"),
    "bombrush": ("episodes.jsonl", "summary.json"),
}


def _invoke(tmp: Path, fixture_flag: list, tag: str) -> dict:
    out = {}
    ddj_out, uqa_out, br_out = tmp / tag / "ddj", tmp / tag / "uqa", tmp / tag / "bombrush"
    assert cli.main(["ddj", "run", "--cases", str(tmp / "cases.jsonl"), "--replications", "2",
                     "--out", str(ddj_out), *fixture_flag]) == 0
    assert cli.main(["uqa", "run", "--dataset", f"{tmp / 'mc.jsonl'}:science_mc",
                     "--dataset", f"{tmp / 'math.jsonl'}:math_word", "--replications", "2",
                     "--seed", "3", "--out", str(uqa_out), *fixture_flag]) == 0
    assert cli.main(["bombrush", "--setting", "s2-hint-hurry", "--agent", "llm", "--runs", "10",
                     "--seed", "5", "--v-out", "0.042", "--out", str(br_out), *fixture_flag]) == 0
    for name, d in (("ddj", ddj_out), ("uqa", uqa_out), ("bombrush", br_out)):
        for f in OUTPUTS[name]:
            out[f"{name}/{f}"] = (d / f).read_bytes()
    return out


@pytest.mark.criterion(10, "end-to-end offline: ddj run, uqa run, bombrush s2-hint-hurry byte-identical "
                           "across invocations (<2 min)")
def test_criterion_10_end_to_end(tmp_path):
    elapsed = _timed()
    write_conversations(tmp_path / "conv.jsonl", n=80)
    write_mc_dataset(tmp_path / "mc.jsonl")
    write_math_dataset(tmp_path / "math.jsonl")
    assert cli.main(["ddj", "build", "--input", str(tmp_path / "conv.jsonl"), "--pairs", "40",
                     "--seed", "1", "--out", str(tmp_path / "cases.jsonl")]) == 0
    fixture = tmp_path / "fixture.jsonl"
    recorded = _invoke(tmp_path, ["--record", str(fixture)], "record")
    first = _invoke(tmp_path, ["--replay", str(fixture)], "replay1")
    second = _invoke(tmp_path, ["--replay", str(fixture)], "replay2")
    assert set(first) == set(second) == set(recorded)
    for key in first:
        assert first[key] == second[key], key
        assert first[key] == recorded[key], key
    assert elapsed() < 120.0


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
