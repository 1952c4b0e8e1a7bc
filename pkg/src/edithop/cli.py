"""Command line entry point: ``edithop ingest | answer | evaluate``.

Settings resolve as flags > ``EDITHOP_*`` environment variables > ``--config``
JSON file > built-in defaults.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from .core import AliasTable, EditCollection, ValidationError
from .embedding import EmbedderConfig, make_embedder
from .evaluation import (
    ExperimentAborted,
    ExperimentConfig,
    ablate,
    format_table,
    load_dataset,
    run_experiment,
)
from .gateway import (
    CassetteMiss,
    Gateway,
    GatewayError,
    MockKnowledgeBase,
    TargetModelConfig,
    make_backend,
)
from .memory import EditIndex, FingerprintMismatch, build_index, read_edits_jsonl
from .rules import RuleParseError, load_rules
from .traversal import TraversalConfig, solve

log = logging.getLogger("edithop")

DEFAULTS = {
    "dimension": 512,
    "embedder": "local_trigram",
    "embedder_url": None,
    "aliases": None,
    "implications": None,
    "compositions": None,
    "backend": "mock_kb",
    "kb": None,
    "cassette": None,
    "record": False,
    "url": None,
    "model": "target-model",
    "token_env": None,
    "timeout_ms": 30_000,
    "max_retries": 2,
    "relation_template": None,
    "query_template": None,
    "eta": 0.6,
    "top_k": 10,
    "max_hops": 8,
    "direction": "query_implies_edit",
    "no_implication": False,
    "no_composition": False,
    "trace_candidates": False,
    "k": "1",
    "rounds": 1,
    "seed": 0,
    "jobs": 1,
    "ablate": False,
}
_TYPES = {k: type(v) for k, v in DEFAULTS.items() if v is not None}
# not part of the reproducibility snapshot
_VOLATILE = {"config", "command", "out", "index", "question", "edits", "out_index", "dataset", "trace"}


class CliError(Exception):
    pass


def _coerce(name: str, value):
    kind = _TYPES.get(name)
    if kind is bool and isinstance(value, str):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if kind in (int, float) and isinstance(value, str):
        return kind(value)
    return value


def resolve_settings(args: argparse.Namespace) -> dict:
    file_cfg = {}
    if getattr(args, "config", None):
        file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
    out = {}
    for name, default in DEFAULTS.items():
        flag = getattr(args, name, None)
        env = os.environ.get(f"EDITHOP_{name.upper()}")
        if flag is not None and flag is not False:
            value = flag
        elif env is not None:
            value = env
        elif name in file_cfg:
            value = file_cfg[name]
        else:
            value = default
        out[name] = _coerce(name, value)
    for key, value in vars(args).items():
        if key not in out:
            out[key] = value
    return out


def settings_fingerprint(settings: dict) -> str:
    snap = {k: v for k, v in settings.items() if k not in _VOLATILE}
    return hashlib.sha256(json.dumps(snap, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _embedder(s: dict):
    return make_embedder(
        EmbedderConfig(backend=s["embedder"], dimension=s["dimension"], url=s["embedder_url"])
    )


def _aliases(s: dict) -> AliasTable:
    if not s["aliases"]:
        return AliasTable()
    return AliasTable(json.loads(Path(s["aliases"]).read_text(encoding="utf-8")))


def _gateway(s: dict) -> Gateway:
    config = TargetModelConfig(
        backend=s["backend"],
        url=s["url"],
        model=s["model"],
        timeout_ms=s["timeout_ms"],
        max_retries=s["max_retries"],
        token_env=s["token_env"],
        relation_template=s["relation_template"],
        query_template=s["query_template"],
    )
    kb = MockKnowledgeBase.load(s["kb"]) if config.backend == "mock_kb" and s["kb"] else None
    backend = make_backend(config, kb=kb, cassette=s["cassette"], record=s["record"])
    return Gateway(backend, config)


def _traversal(s: dict) -> TraversalConfig:
    return TraversalConfig(
        eta=s["eta"],
        top_k=s["top_k"],
        max_hops=s["max_hops"],
        direction=s["direction"],
        disable_implication=s["no_implication"],
        disable_composition=s["no_composition"],
        record_candidates=s["trace_candidates"],
    )


def cmd_ingest(s: dict) -> int:
    aliases = _aliases(s)
    edits = read_edits_jsonl(s["edits"])
    index = build_index(EditCollection(edits, aliases), _embedder(s), aliases)
    index.save(s["out_index"])
    digest = hashlib.sha256(Path(s["out_index"]).read_bytes()).hexdigest()[:16]
    print(f"indexed {len(index)} edits")
    print(f"dimension {index.embedder.dimension}  embedder {index.embedder.fingerprint}  index {digest}")
    return 0


def cmd_answer(s: dict) -> int:
    gateway = _gateway(s)
    rules = load_rules(s["implications"], s["compositions"])
    if not Path(s["index"]).exists():
        raise CliError(f"index not found: {s['index']}")
    index = EditIndex.load(s["index"], _embedder(s), _aliases(s))
    trace = solve(s["question"], index, rules, gateway, _traversal(s))
    if trace.failure:
        print(f"no answer: {trace.failure}", file=sys.stderr)
    else:
        print(trace.final_answer)
    if s["trace"]:
        print(json.dumps(trace.to_dict(), ensure_ascii=False), file=sys.stderr)
    return 0 if trace.ok else 1


def _batch_size(raw):
    if str(raw) == "all":
        return "all"
    return int(raw)


def cmd_evaluate(s: dict) -> int:
    gateway = _gateway(s)
    rules = load_rules(s["implications"], s["compositions"])
    dataset = load_dataset(s["dataset"])
    config = ExperimentConfig(
        batch_size=_batch_size(s["k"]),
        traversal=_traversal(s),
        rounds=s["rounds"],
        seed=s["seed"],
        jobs=s["jobs"],
        backend=s["backend"],
    )
    out = Path(s["out"])
    (out / "traces").mkdir(parents=True, exist_ok=True)
    settings = {k: v for k, v in s.items() if k not in _VOLATILE}
    fp = settings_fingerprint(s)
    log.info("resolved settings fingerprint %s", fp)
    embedder = _embedder(s)

    try:
        if s["ablate"]:
            reports = ablate(dataset, config, rules, gateway, embedder)
        else:
            reports = {"full": run_experiment(dataset, config, rules, gateway, embedder)}
    except ExperimentAborted as exc:
        _write_report(out / "report.partial.json", {"full": exc.partial}, settings, fp)
        raise CliError(str(exc)) from exc

    _write_report(out / "report.json", reports, settings, fp)
    for name, rep in reports.items():
        for v in rep.verdicts:
            name_part = "" if len(reports) == 1 else f"{name}."
            path = out / "traces" / f"{name_part}{v.instance_id}.r{v.round}.json"
            path.write_text(
                json.dumps([t.to_dict() for t in v.traces], indent=1, ensure_ascii=False),
                encoding="utf-8",
            )
    print(format_table(reports))
    return 0


def _write_report(path: Path, reports: dict, settings: dict, fp: str) -> None:
    body = {
        "settings_fingerprint": fp,
        "settings": settings,
        "reports": {name: rep.to_dict() for name, rep in reports.items()},
    }
    path.write_text(
        json.dumps(body, indent=1, sort_keys=True, ensure_ascii=False, default=str), encoding="utf-8"
    )


def _add_shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON settings file")
    p.add_argument("--dimension", type=int)
    p.add_argument("--embedder", choices=["local_trigram", "remote_service"])
    p.add_argument("--embedder-url")
    p.add_argument("--aliases", help="JSON {canonical: [alias, ...]}")


def _add_pipeline(p: argparse.ArgumentParser) -> None:
    p.add_argument("--implications", help="implication rule file")
    p.add_argument("--compositions", help="horn rule file")
    p.add_argument("--backend", choices=["mock_kb", "replay", "http_chat"])
    p.add_argument("--kb", help="mock knowledge-base JSON")
    p.add_argument("--cassette", help="record/replay cassette JSON")
    p.add_argument("--record", action="store_true", help="record backend responses to --cassette")
    p.add_argument("--url")
    p.add_argument("--model")
    p.add_argument("--token-env", help="name of the env var holding the API token")
    p.add_argument("--timeout-ms", type=int)
    p.add_argument("--max-retries", type=int)
    p.add_argument("--relation-template")
    p.add_argument("--query-template")
    p.add_argument("--eta", type=float)
    p.add_argument("--top-k", type=int)
    p.add_argument("--max-hops", type=int)
    p.add_argument("--direction", choices=["query_implies_edit", "edit_implies_query"])
    p.add_argument("--no-implication", action="store_true")
    p.add_argument("--no-composition", action="store_true")
    p.add_argument("--trace-candidates", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edithop")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="embed a JSONL edit file into an index")
    _add_shared(p)
    p.add_argument("edits")
    p.add_argument("out_index")

    p = sub.add_parser("answer", help="answer one question")
    _add_shared(p)
    _add_pipeline(p)
    p.add_argument("question")
    p.add_argument("--index", required=True)
    p.add_argument("--trace", action="store_true", help="write the hop trace JSON to stderr")

    p = sub.add_parser("evaluate", help="run a batch-edit experiment")
    _add_shared(p)
    _add_pipeline(p)
    p.add_argument("dataset")
    p.add_argument("--k", help="batch size: integer or 'all'")
    p.add_argument("--rounds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--ablate", action="store_true")
    p.add_argument("--out", default="edithop-out")
    return parser


COMMANDS = {"ingest": cmd_ingest, "answer": cmd_answer, "evaluate": cmd_evaluate}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        settings = resolve_settings(args)
        return COMMANDS[args.command](settings)
    except (CliError, ValidationError, RuleParseError, FingerprintMismatch, CassetteMiss,
            GatewayError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
