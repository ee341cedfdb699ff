"""Command line entry point: ``tokentime {bombrush,calibrate,ddj,uqa,report}``.

Settings come from built-in defaults, then an optional JSON ``--config``
file (a ``common`` block plus one block per command), then explicit flags.
Each run appends a manifest line to ``manifests.jsonl`` next to its outputs.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import uuid
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .episode import SCHEMA_VERSION

log = logging.getLogger("tokentime")


class ConfigError(ValueError):
    pass


GATEWAY_DEFAULTS = {
    "backend": "mock", "endpoint": None, "api_key_env": "OPENAI_API_KEY", "model": "mock",
    "record": None, "replay": None, "judge_policy": "timestamp", "max_in_flight": 8,
    "rate_limit": None, "temperature": 0.0, "max_output_tokens": None,
}
DEFAULTS = {
    "bombrush": {
        **GATEWAY_DEFAULTS, "setting": "s1", "agent": "bfs-oracle", "runs": 100, "seed": 0,
        "v_out": None, "calibration": None, "reasoning_tokens": 0, "tokenizer": "approx",
        "context": "full", "parallelism": 1, "out": "runs/bombrush", "t_buckets": 15, "reprompt": False,
    },
    "calibrate": {
        **GATEWAY_DEFAULTS, "agent": "bfs-oracle", "runs": 100, "seed": 0, "reasoning_tokens": 0,
        "tokenizer": "approx", "horizon": 30, "budget": 300.0, "context": "full", "parallelism": 1,
        "model_label": None, "out": "runs/calibration.json",
    },
    "ddj-build": {
        "input": None, "settings": "all", "pairs": 300, "seed": 0, "ratio": 1.5, "allowlist": None,
        "tokenizer": "approx", "gen_rate": 0.05, "out": "runs/ddj/cases.jsonl",
    },
    "ddj-run": {**GATEWAY_DEFAULTS, "cases": "runs/ddj/cases.jsonl", "replications": 5,
                "parallelism": 1, "out": "runs/ddj"},
    "ddj-attribute": {**GATEWAY_DEFAULTS, "judgments": "runs/ddj/judgments.jsonl", "rules": "offline",
                      "out": None},
    "uqa-run": {
        **GATEWAY_DEFAULTS, "dataset": None, "mode": "both", "replications": 5, "seed": 0, "limit": None,
        "pool": None, "tokenizer": "approx", "parallelism": 1, "out": "runs/uqa",
    },
    "report": {"kind": None, "input": None, "t_buckets": 15, "compare": None, "out": None},
}


# --- plumbing ------------------------------------------------------------------------

def resolve_config(command: str, args: argparse.Namespace) -> dict:
    """defaults < config file (``common`` then ``<command>`` block) < explicit flags."""
    cfg = dict(DEFAULTS[command])
    path = getattr(args, "config", None)
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        for block in (data.get("common", {}), data.get(command, {})):
            unknown = set(block) - set(cfg)
            if unknown:
                raise ConfigError(f"unknown keys for {command}: {sorted(unknown)}")
            cfg.update(block)
    flags = {k: v for k, v in vars(args).items() if k not in ("config", "func", "command", "log_level")}
    cfg.update(flags)
    return cfg


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class Manifest:
    """Append-only run record; written on success and on failure."""

    def __init__(self, experiment: str, cfg: dict, out_dir: Path):
        self.entry = {
            "run_id": uuid.uuid4().hex, "experiment": experiment, "config": cfg,
            "seed": cfg.get("seed"), "code_version": __version__, "schema_version": SCHEMA_VERSION,
            "started": _now(), "finished": None, "artifacts": [], "status": "running",
        }
        self.path = out_dir / "manifests.jsonl"

    def add(self, *paths) -> None:
        self.entry["artifacts"].extend(str(p) for p in paths)

    def close(self, status: str, error: str | None = None) -> None:
        self.entry.update(finished=_now(), status=status)
        if error:
            self.entry["error"] = error
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps(self.entry, sort_keys=True, default=str) + "\n")


def make_gateway(cfg: dict):
    from .gateway import Gateway, HttpBackend, Mode

    if cfg.get("record") and cfg.get("replay"):
        raise ConfigError("--record and --replay are mutually exclusive")
    kw = {"max_in_flight": int(cfg["max_in_flight"]), "rate_limit_per_minute": cfg.get("rate_limit")}
    if cfg.get("replay"):
        if not Path(cfg["replay"]).exists():
            raise ConfigError(f"replay fixture not found: {cfg['replay']}")
        return Gateway(None, Mode.REPLAY, cfg["replay"], **kw)
    if cfg["backend"] == "mock":
        from .mockmodel import mock_backend

        backend = mock_backend(judge_policy=cfg["judge_policy"])
    elif cfg["backend"] == "http":
        if not cfg.get("endpoint"):
            raise ConfigError("the http backend needs --endpoint")
        backend = HttpBackend(cfg["endpoint"], cfg["api_key_env"])
    else:
        raise ConfigError(f"unknown backend {cfg['backend']!r}")
    if cfg.get("record"):
        Path(cfg["record"]).parent.mkdir(parents=True, exist_ok=True)
        return Gateway(backend, Mode.RECORD, cfg["record"], **kw)
    return Gateway(backend, Mode.LIVE, **kw)


def _counter(cfg: dict):
    from .chronometry import make_counter

    try:
        return make_counter(cfg["tokenizer"])
    except OSError as exc:
        raise ConfigError(f"cannot load tokenizer {cfg['tokenizer']!r}: {exc}") from None


def _agent_factory(cfg: dict, counter, gateway_cell: list):
    from .agents import BfsOptimalAgent, GreedySignalAgent, LlmAgent, RandomAgent

    kind = cfg["agent"]
    rt = int(cfg["reasoning_tokens"])
    if kind == "bfs-oracle":
        return lambda seed: BfsOptimalAgent(rt, counter)
    if kind == "greedy":
        return lambda seed: GreedySignalAgent(rt, counter)
    if kind == "random":
        return lambda seed: RandomAgent(int(cfg["seed"]), rt, counter)
    if kind == "llm":
        gateway_cell.append(make_gateway(cfg))
        gw = gateway_cell[0]
        return lambda seed: LlmAgent(gw, cfg["model"], float(cfg["temperature"]), cfg["max_output_tokens"],
                                     bool(cfg.get("reprompt")))
    raise ConfigError(f"unknown agent {kind!r}")


def episode_seeds(root: int, runs: int) -> list[int]:
    from ._rng import derive_seed

    return [derive_seed(root, "episode", i) % 2**31 for i in range(runs)]


def _write_json(path: Path, obj) -> None:
    from .analytics import dumps

    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8")


def _fmt(v, spec=".1f") -> str:
    return "-" if v is None else format(v, spec)


def print_bombrush_table(summary: dict, out=None) -> None:
    out = out or sys.stdout
    m = summary["metrics"]
    print(f"setting {summary['setting']}: {m['n_episodes']} episodes ({m['n_aborted']} aborted)", file=out)
    print(f"  Success {_fmt(m['success_pct'])}%  OverSteps {_fmt(m['oversteps_pct'])}%  "
          f"TimeOut {_fmt(m['timeout_pct'])}%", file=out)
    print(f"  steps {_fmt(m['mean_steps'], '.2f')}  tokens/step {_fmt(m['mean_tokens_per_step'], '.2f')}  "
          f"nav-acc {_fmt(m['navigation_accuracy_pct'])}%  time-eff {_fmt(m['time_efficiency_pct'])}%", file=out)
    audit = summary.get("reasoning_audit")
    if audit and audit["n"]:
        print(f"  urgency mentions {_fmt(audit['urgency_mention_pct'])}%  "
              f"token-time awareness {_fmt(audit['tw_mapping_pct'])}%", file=out)


# --- commands ------------------------------------------------------------------------

def cmd_bombrush(cfg: dict) -> dict:
    from .analytics import bombrush_summary
    from .chronometry import CalibrationReport, ConversionRate
    from .episode import ContextPolicy, get_setting, run_batch, write_jsonl

    try:
        setting = get_setting(cfg["setting"])
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    rate = None
    if setting.timed:
        if cfg.get("v_out") is not None:
            rate = ConversionRate(float(cfg["v_out"]))
        elif cfg.get("calibration"):
            rate = ConversionRate(CalibrationReport.load(cfg["calibration"]).v_out)
        else:
            raise ConfigError(f"setting {setting.id} is timed: give --v-out or --calibration")
    counter = _counter(cfg)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest("bombrush", cfg, out)
    try:
        factory = _agent_factory(cfg, counter, [])
        records = run_batch(setting, factory, episode_seeds(int(cfg["seed"]), int(cfg["runs"])), rate,
                            counter, ContextPolicy(cfg["context"]), int(cfg["parallelism"]))
        episodes, summary_path = out / "episodes.jsonl", out / "summary.json"
        write_jsonl(records, episodes)
        summary = bombrush_summary(records, int(cfg["t_buckets"]))
        summary["v_out"] = rate.v_out if rate else None
        summary["counter"] = counter.counter_id
        _write_json(summary_path, summary)
        manifest.add(episodes, summary_path)
        aborted = sum(r.aborted for r in records)
        manifest.close("partial" if aborted else "ok")
    except Exception as exc:
        manifest.close("failed", repr(exc))
        raise
    print_bombrush_table(summary)
    return summary


def cmd_calibrate(cfg: dict) -> dict:
    from .chronometry import calibration_report
    from .episode import ContextPolicy, get_setting, run_batch

    counter = _counter(cfg)
    out = Path(cfg["out"])
    manifest = Manifest("calibrate", cfg, out.parent)
    try:
        factory = _agent_factory(cfg, counter, [])
        records = run_batch(get_setting("s1"), factory, episode_seeds(int(cfg["seed"]), int(cfg["runs"])),
                            None, counter, ContextPolicy(cfg["context"]), int(cfg["parallelism"]))
        tokens = [s.tokens_charged for r in records if not r.aborted for s in r.steps]
        avg = sum(tokens) / len(tokens) if tokens else 0.0
        label = cfg.get("model_label") or (cfg["model"] if cfg["agent"] == "llm" else cfg["agent"])
        report = calibration_report(label, avg, int(cfg["horizon"]), float(cfg["budget"]))
        out.parent.mkdir(parents=True, exist_ok=True)
        report.dump(out)
        manifest.add(out)
        manifest.close("ok")
    except Exception as exc:
        manifest.close("failed", repr(exc))
        raise
    print(f"{report.model_id}: {report.avg_tokens_per_step:.2f} tokens/step over horizon {report.horizon} "
          f"-> v_out = {report.v_out:.5f} s/token")
    return report.to_dict()


def cmd_ddj_build(cfg: dict) -> dict:
    from .ddj import build_cases, ingest_pairs, parse_settings, write_jsonl

    if not cfg.get("input"):
        raise ConfigError("ddj build needs --input")
    try:
        settings = parse_settings(cfg["settings"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    allow = cfg["allowlist"]
    if isinstance(allow, str):
        allow = [a.strip() for a in allow.split(",") if a.strip()]
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    manifest = Manifest("ddj", cfg, out.parent)
    try:
        pairs = ingest_pairs(cfg["input"], _counter(cfg), float(cfg["ratio"]), allow, int(cfg["pairs"]))
        if len(pairs) < int(cfg["pairs"]):
            log.warning("only %d pairs passed the filters (wanted %d)", len(pairs), cfg["pairs"])
        cases = build_cases(pairs, settings, int(cfg["seed"]), float(cfg["gen_rate"]))
        write_jsonl(cases, out)
        manifest.add(out)
        manifest.close("ok")
    except Exception as exc:
        manifest.close("failed", repr(exc))
        raise
    print(f"{len(pairs)} pairs x {len(settings)} settings -> {len(cases)} cases in {out}")
    return {"pairs": len(pairs), "cases": len(cases)}


def print_accuracy(table: dict, out=None) -> None:
    out = out or sys.stdout
    for setting, row in table.items():
        vec = " ".join(f"{v:.1f}" for v in row["per_replication"])
        print(f"  {setting:8s} {row['accuracy']:6.2f}%  [{vec}]  parse failures {row['parse_failures']}", file=out)


def cmd_ddj_run(cfg: dict) -> dict:
    from .ddj import judge_and_score, read_cases, write_jsonl

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    if not Path(cfg["cases"]).exists():
        raise ConfigError(f"cases file not found: {cfg['cases']} (run `ddj build` first)")
    manifest = Manifest("ddj", cfg, out)
    try:
        cases = read_cases(cfg["cases"])
        gateway = make_gateway(cfg)
        table, judgments = judge_and_score(cases, gateway, cfg["model"], int(cfg["replications"]),
                                           float(cfg["temperature"]), int(cfg["parallelism"]))
        jpath, apath = out / "judgments.jsonl", out / "accuracy.json"
        write_jsonl(judgments, jpath)
        _write_json(apath, table)
        manifest.add(jpath, apath)
        manifest.close("ok")
    except Exception as exc:
        manifest.close("failed", repr(exc))
        raise
    print(f"duration judgment accuracy ({cfg['model']}, {cfg['replications']} replications):")
    print_accuracy(table)
    return table


def print_attribution(table: dict, out=None) -> None:
    out = out or sys.stdout
    cats = ("TextLength", "Semantic", "Time", "Other")
    print("  setting  " + "  ".join(f"{c:>18s}" for c in cats) + "   (usage% / acc%)", file=out)
    for setting, row in table.items():
        cells = [f"{_fmt(row[c]['usage_pct']):>8s} / {_fmt(row[c]['accuracy_pct']):>7s}" for c in cats]
        print(f"  {setting:8s} " + "  ".join(cells), file=out)


def cmd_ddj_attribute(cfg: dict) -> dict:
    from .ddj import attribute_judgments, attribution_table, read_judgments, write_jsonl

    src = Path(cfg["judgments"])
    if not src.exists():
        raise ConfigError(f"judgments file not found: {src}")
    if cfg["rules"] not in ("offline", "llm"):
        raise ConfigError("--rules must be 'offline' or 'llm'")
    out = Path(cfg["out"]) if cfg.get("out") else src.parent
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest("ddj", cfg, out)
    try:
        gateway = make_gateway(cfg) if cfg["rules"] == "llm" else None
        judgments = attribute_judgments(read_judgments(src), gateway, cfg["model"])
        table = attribution_table(judgments)
        jpath, tpath = out / "attributed.jsonl", out / "attribution.json"
        write_jsonl(judgments, jpath)
        _write_json(tpath, table)
        manifest.add(jpath, tpath)
        manifest.close("ok")
    except Exception as exc:
        manifest.close("failed", repr(exc))
        raise
    print_attribution(table)
    return table


def _datasets(spec) -> list[tuple[str, str]]:
    if not spec:
        raise ConfigError("uqa run needs at least one --dataset PATH:TAG")
    items = spec if isinstance(spec, list) else [spec]
    out = []
    for s in items:
        path, sep, tag = str(s).rpartition(":")
        if not sep:
            raise ConfigError(f"dataset must be PATH:TAG, got {s!r}")
        out.append((path, tag))
    return out


def print_uqa(report: dict, out=None) -> None:
    out = out or sys.stdout
    for tag, block in report.items():
        if not isinstance(block, dict):
            continue
        n, u, d = block["Normal"], block["Urgent"], block["delta_pct"]
        print(f"  {tag} ({block['n_items']} items)", file=out)
        print(f"    accuracy {n['accuracy']:.2f} -> {u['accuracy']:.2f}  ({_fmt(d['accuracy'], '+.2f')}%)", file=out)
        print(f"    tokens   {n['tokens_shared']:.2f} -> {u['tokens_shared']:.2f}  "
              f"({_fmt(d['tokens_shared'], '+.2f')}%)", file=out)


def cmd_uqa_run(cfg: dict) -> dict:
    from .uqa import DatasetError, Mode, load_dataset, load_pool, run_uqa, score_run, write_results

    modes = {"both": (Mode.NORMAL, Mode.URGENT), "normal": (Mode.NORMAL,), "urgent": (Mode.URGENT,)}
    if cfg["mode"] not in modes:
        raise ConfigError("--mode must be both, normal or urgent")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest("uqa", cfg, out)
    try:
        items = []
        for path, tag in _datasets(cfg["dataset"]):
            try:
                items += load_dataset(path, tag, cfg.get("limit"))
            except (DatasetError, OSError) as exc:
                raise ConfigError(str(exc)) from None
        results = run_uqa(items, make_gateway(cfg), cfg["model"], _counter(cfg), int(cfg["seed"]),
                          int(cfg["replications"]), modes[cfg["mode"]], load_pool(cfg.get("pool")),
                          float(cfg["temperature"]), cfg["max_output_tokens"], int(cfg["parallelism"]))
        rpath = out / "results.jsonl"
        write_results(results, rpath)
        manifest.add(rpath)
        report = None
        if cfg["mode"] == "both":
            report = score_run(results)
            spath = out / "summary.json"
            _write_json(spath, report)
            manifest.add(spath)
        manifest.close("ok")
    except Exception as exc:
        manifest.close("failed", repr(exc))
        raise
    if report:
        print(f"urgency-aware QA ({cfg['model']}, {cfg['replications']} replications):")
        print_uqa(report)
    else:
        print(f"{len(results)} answers written to {rpath}; scoring needs --mode both")
    return report or {}


def cmd_report(cfg: dict) -> dict:
    from .analytics import bombrush_summary, paired_ttest

    kind, src = cfg.get("kind"), cfg.get("input")
    if not src or not Path(src).exists():
        raise ConfigError(f"input file not found: {src}")
    if kind == "bombrush":
        from .episode import read_jsonl

        result = bombrush_summary(read_jsonl(src), int(cfg["t_buckets"]))
        print_bombrush_table(result)
    elif kind == "ddj":
        from .ddj import accuracy_table, attribution_table, read_judgments

        judgments = read_judgments(src)
        result = {"accuracy": accuracy_table(judgments)}
        print_accuracy(result["accuracy"])
        if all(j.attribution for j in judgments):
            result["attribution"] = attribution_table(judgments)
            print_attribution(result["attribution"])
        if cfg.get("compare"):
            a, b = cfg["compare"]
            x, y = result["accuracy"][a]["per_replication"], result["accuracy"][b]["per_replication"]
            result["ttest"] = {"x": a, "y": b, "alternative": "greater", "p_value": paired_ttest(x, y)}
            print(f"  paired t-test {a} > {b}: p = {result['ttest']['p_value']:.4g}")
    elif kind == "uqa":
        from .uqa import read_results, score_run

        result = score_run(read_results(src))
        print_uqa(result)
    else:
        raise ConfigError("--kind must be bombrush, ddj or uqa")
    if cfg.get("out"):
        _write_json(Path(cfg["out"]), result)
    return result


# --- parser --------------------------------------------------------------------------

def _gateway_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model gateway")
    g.add_argument("--backend", choices=["mock", "http"])
    g.add_argument("--endpoint", help="base URL of an OpenAI-compatible server")
    g.add_argument("--api-key-env", help="name of the env var holding the API key")
    g.add_argument("--model")
    g.add_argument("--record", metavar="FIXTURE", help="call the backend and append exchanges to FIXTURE")
    g.add_argument("--replay", metavar="FIXTURE", help="answer only from FIXTURE")
    g.add_argument("--judge-policy", choices=["timestamp", "length"], help="mock backend judging policy")
    g.add_argument("--max-in-flight", type=int)
    g.add_argument("--rate-limit", type=int, help="requests per minute")
    g.add_argument("--temperature", type=float)
    g.add_argument("--max-output-tokens", type=int)


def _agent_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--agent", choices=["bfs-oracle", "greedy", "random", "llm"])
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--reasoning-tokens", type=int, help="reasoning length emitted by scripted agents")
    p.add_argument("--tokenizer", help="'approx' or a path to a BPE ranks file")
    p.add_argument("--context", choices=["full", "solution"])
    p.add_argument("--parallelism", type=int)


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="tokentime", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON config file", default=S)
    parser.add_argument("--log-level", default="WARNING")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bombrush", help="run a batch of BombRush episodes", argument_default=S)
    p.add_argument("--setting", help="s1, s2, s2-hint, s2-hurry, s2-hint-hurry, s3-passive, s3-active")
    _agent_flags(p)
    p.add_argument("--v-out", type=float, help="seconds per output token")
    p.add_argument("--calibration", help="calibration report JSON providing v_out")
    p.add_argument("--reprompt", action="store_true", help="re-ask once when no action can be parsed")
    p.add_argument("--t-buckets", type=int)
    p.add_argument("--out")
    _gateway_flags(p)
    p.set_defaults(func=cmd_bombrush, command="bombrush")

    p = sub.add_parser("calibrate", help="derive v_out from an untimed S1 batch", argument_default=S)
    _agent_flags(p)
    p.add_argument("--horizon", type=int)
    p.add_argument("--budget", type=float)
    p.add_argument("--model-label")
    p.add_argument("--out")
    _gateway_flags(p)
    p.set_defaults(func=cmd_calibrate, command="calibrate")

    ddj = sub.add_parser("ddj", help="dialogue duration judgment").add_subparsers(dest="stage", required=True)
    p = ddj.add_parser("build", help="ingest pairs and render cases", argument_default=S)
    p.add_argument("--input", help="conversations JSONL")
    p.add_argument("--settings", help="'all' or a comma list such as S1,S2-M")
    p.add_argument("--pairs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--ratio", type=float, help="minimum reply length ratio")
    p.add_argument("--allowlist", help="comma list of model name fragments")
    p.add_argument("--tokenizer")
    p.add_argument("--gen-rate", type=float, help="displayed seconds per output token")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ddj_build, command="ddj-build")
    p = ddj.add_parser("run", help="judge cases and score accuracy", argument_default=S)
    p.add_argument("--cases")
    p.add_argument("--replications", type=int)
    p.add_argument("--parallelism", type=int)
    p.add_argument("--out")
    _gateway_flags(p)
    p.set_defaults(func=cmd_ddj_run, command="ddj-run")
    p = ddj.add_parser("attribute", help="classify judge justifications", argument_default=S)
    p.add_argument("--judgments")
    p.add_argument("--rules", choices=["offline", "llm"])
    p.add_argument("--out")
    _gateway_flags(p)
    p.set_defaults(func=cmd_ddj_attribute, command="ddj-attribute")

    uqa = sub.add_parser("uqa", help="urgency-aware QA").add_subparsers(dest="stage", required=True)
    p = uqa.add_parser("run", help="answer datasets in normal and urgent mode", argument_default=S)
    p.add_argument("--dataset", action="append", help="PATH:TAG, TAG in commonsense_mc, math_word, science_mc")
    p.add_argument("--mode", choices=["both", "normal", "urgent"])
    p.add_argument("--replications", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--limit", type=int)
    p.add_argument("--pool", help="JSON list of urgency phrases")
    p.add_argument("--tokenizer")
    p.add_argument("--parallelism", type=int)
    p.add_argument("--out")
    _gateway_flags(p)
    p.set_defaults(func=cmd_uqa_run, command="uqa-run")

    p = sub.add_parser("report", help="recompute a summary from saved outputs", argument_default=S)
    p.add_argument("--kind", choices=["bombrush", "ddj", "uqa"])
    p.add_argument("--input")
    p.add_argument("--t-buckets", type=int)
    p.add_argument("--compare", nargs=2, metavar=("X", "Y"), help="DDJ settings for a paired t-test X > Y")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report, command="report")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    func = args.func
    try:
        cfg = resolve_config(args.command, args)
        cfg.pop("stage", None)
        func(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        from .chronometry import InvalidCalibration
        from .gateway import GatewayError
        from .analytics import DegenerateSample
        from .uqa import IncompleteRun
        from .ddj import IngestError

        if isinstance(exc, (GatewayError, InvalidCalibration, IncompleteRun, IngestError, DegenerateSample)):
            print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
            return 1
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
