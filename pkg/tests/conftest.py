import hashlib
import json
import os
import random
import shutil
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"
O200K_CANDIDATES = [
    os.environ.get("TOKENTIME_O200K", ""),
    "/usr/local/lib/python3.10/dist-packages/marimo/_lsp/copilot/o200k_base.tiktoken",
]

WORDS = ("alpha beta gamma delta epsilon zeta theta kappa lambda sigma omega river stone cloud "
         "garden window bridge lantern harbor meadow").split()


def write_conversations(path, n=400, seed=1, shape="arena", near_ties=True):
    """Synthetic conversations file; reply lengths vary enough that most pairs pass a 1.5x filter."""
    r = random.Random(seed)
    with open(path, "w", encoding="utf-8") as f:
        for i in range(n):
            if near_ties and i % 10 == 0:
                la, lb = 120, 184  # chars/4 tokens 30 vs 46 round to the same whole second at 0.05 s/token
                la_text = "x" * la
                lb_text = "y" * lb
            else:
                la, lb = r.randint(3, 250), r.randint(3, 250)
                la_text = " ".join(r.choice(WORDS) for _ in range(la))
                lb_text = " ".join(r.choice(WORDS) for _ in range(lb))
            prompt = f"Question {i}: tell me about {r.choice(WORDS)}"
            if shape == "arena":
                rec = {"question_id": f"q{i:04d}", "model_a": "model-one", "model_b": "model-two",
                       "conversation_a": [{"role": "user", "content": prompt},
                                          {"role": "assistant", "content": la_text}],
                       "conversation_b": [{"role": "user", "content": prompt},
                                          {"role": "assistant", "content": lb_text}]}
            else:
                rec = {"pair_id": f"q{i:04d}", "prompt": prompt, "response_a": la_text, "response_b": lb_text}
            f.write(json.dumps(rec) + "\n")
    return path


def write_mc_dataset(path, n=12):
    with open(path, "w", encoding="utf-8") as f:
        for i in range(n):
            f.write(json.dumps({"id": f"mc{i}", "question": f"Which option names item {i}?",
                                "choices": ["one", "two", "three", "four"], "answer": "ABCD"[i % 4]}) + "\n")
    return path


def write_math_dataset(path, n=12):
    with open(path, "w", encoding="utf-8") as f:
        for i in range(n):
            f.write(json.dumps({"id": f"m{i}", "question": f"What is {i} plus {i}?", "answer": f"{2 * i}"}) + "\n")
    return path


@pytest.fixture
def conversations(tmp_path):
    return write_conversations(tmp_path / "conversations.jsonl")


@pytest.fixture(scope="session")
def o200k_path():
    for p in O200K_CANDIDATES:
        if p and Path(p).exists():
            return p
    pytest.skip("o200k_base ranks file not available")


@pytest.fixture(scope="session")
def bpe_o200k(o200k_path):
    from tokentime.chronometry import BpeCounter

    return BpeCounter.from_file(o200k_path)


@pytest.fixture(scope="session")
def tiktoken_o200k(o200k_path, tmp_path_factory):
    """tiktoken's own o200k encoder (test oracle), fed the local ranks file through its download cache."""
    tiktoken = pytest.importorskip("tiktoken")
    cache = tmp_path_factory.mktemp("tiktoken-cache")
    url = "https://openaipublic.blob.core.windows.net/encodings/o200k_base.tiktoken"
    shutil.copy(o200k_path, cache / hashlib.sha1(url.encode()).hexdigest())
    mp = pytest.MonkeyPatch()
    mp.setenv("TIKTOKEN_CACHE_DIR", str(cache))
    try:
        enc = tiktoken.get_encoding("o200k_base")
    except Exception:  # noqa: BLE001
        mp.undo()
        pytest.skip("tiktoken cannot load o200k_base")
    yield enc
    mp.undo()


# --- acceptance reporting -------------------------------------------------------------

ACCEPTANCE_LINES: dict = {}


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance.py" not in report.nodeid:
        return
    label = getattr(report, "criterion_label", None)
    name = report.nodeid.split("::")[-1]
    ACCEPTANCE_LINES[name] = ("PASS" if report.passed else "FAIL", label or name)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        rep.criterion_label = f"criterion {marker.args[0]:>2}: {marker.args[1]}"


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for status, label in sorted(ACCEPTANCE_LINES.values(), key=lambda v: v[1]):
        terminalreporter.write_line(f"[{status}] {label}")
