"""Datasets, the multi-hop and hop-wise accuracy metrics, and batch experiments."""

from __future__ import annotations

import hashlib
import json
import random
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence, Union

from .core import (
    EMPTY_ALIASES,
    AliasTable,
    EditCollection,
    FactEdit,
    MultiHopInstance,
    ResolutionTrace,
    ValidationError,
    triplets_from_lists,
)
from .gateway import Gateway, GatewayError
from .memory import build_index
from .rules import RuleSet
from .traversal import TraversalConfig, solve

BatchSize = Union[int, str]


class DatasetError(ValidationError):
    def __init__(self, index: int | None, field_name: str, reason: str):
        where = "dataset" if index is None else f"instance {index}"
        super().__init__(f"{where}, field {field_name!r}: {reason}")
        self.index = index
        self.field = field_name


class ExperimentAborted(RuntimeError):
    def __init__(self, message: str, partial: Report):
        super().__init__(message)
        self.partial = partial


@dataclass
class Dataset:
    name: str
    instances: list[MultiHopInstance]
    alias_table: AliasTable = field(default_factory=AliasTable)

    def __post_init__(self) -> None:
        seen = set()
        for i, inst in enumerate(self.instances):
            if inst.instance_id in seen:
                raise DatasetError(i, "instance_id", f"duplicate id {inst.instance_id!r}")
            seen.add(inst.instance_id)

    def __len__(self) -> int:
        return len(self.instances)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "instances": [_instance_to_dict(inst) for inst in self.instances],
            "aliases": self.alias_table.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> Dataset:
        if not isinstance(data, Mapping):
            raise DatasetError(None, "<root>", "expected a JSON object")
        if "instances" not in data or not isinstance(data["instances"], list):
            raise DatasetError(None, "instances", "missing or not a list")
        try:
            aliases = AliasTable(data.get("aliases", {}))
        except ValidationError as exc:
            raise DatasetError(None, "aliases", str(exc)) from None
        instances = [_instance_from_dict(i, raw) for i, raw in enumerate(data["instances"])]
        return cls(str(data.get("name", "")), instances, aliases)


_REQUIRED = (
    "instance_id",
    "questions",
    "original_answer",
    "edited_answer",
    "edits",
    "original_path",
    "edited_path",
)


def _instance_from_dict(index: int, raw: Mapping) -> MultiHopInstance:
    if not isinstance(raw, Mapping):
        raise DatasetError(index, "<instance>", "expected a JSON object")
    for name in _REQUIRED:
        if name not in raw:
            raise DatasetError(index, name, "missing")
    if not raw["edits"]:
        raise DatasetError(index, "edits", "edited evaluation needs at least one edit")
    parsed = {}
    for name, convert in (
        ("edits", lambda v: tuple(FactEdit.from_dict(e) for e in v)),
        ("original_path", triplets_from_lists),
        ("edited_path", triplets_from_lists),
        ("questions", lambda v: tuple(str(q) for q in v)),
        ("answer_aliases", frozenset),
    ):
        try:
            parsed[name] = convert(raw.get(name, []))
        except (ValidationError, TypeError) as exc:
            raise DatasetError(index, name, str(exc)) from None
    try:
        return MultiHopInstance(
            instance_id=str(raw["instance_id"]),
            original_answer=raw["original_answer"],
            edited_answer=raw["edited_answer"],
            **parsed,
        )
    except ValidationError as exc:
        msg = str(exc)
        name = "edited_path" if "path" in msg else "questions" if "question" in msg else "edited_answer"
        raise DatasetError(index, name, msg) from None


def _instance_to_dict(inst: MultiHopInstance) -> dict:
    return {
        "instance_id": inst.instance_id,
        "questions": list(inst.questions),
        "original_answer": inst.original_answer,
        "edited_answer": inst.edited_answer,
        "answer_aliases": sorted(inst.answer_aliases),
        "edits": [e.to_dict() for e in inst.edits],
        "original_path": [list(t) for t in inst.original_path],
        "edited_path": [list(t) for t in inst.edited_path],
    }


def load_dataset(path: str | Path) -> Dataset:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(None, "<file>", f"invalid JSON: {exc}") from None
    return Dataset.from_dict(data)


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(dataset.to_dict(), indent=1, ensure_ascii=False), encoding="utf-8"
    )


def answer_matches(answer: str | None, golds: Iterable[str], aliases: AliasTable) -> bool:
    if not answer:
        return False
    try:
        return any(aliases.matches(answer, g) for g in golds)
    except ValidationError:
        return False


def m_acc(
    instance: MultiHopInstance,
    answers: Mapping[str, str | None],
    aliases: AliasTable = EMPTY_ALIASES,
) -> int:
    """1 if any question variant was answered with the edited answer (or an alias)."""
    missing = [q for q in instance.questions if q not in answers]
    if missing:
        raise ValidationError(f"no answer for question variant {missing[0]!r}")
    return int(
        any(answer_matches(answers[q], instance.answer_aliases, aliases) for q in instance.questions)
    )


def h_acc(
    instance: MultiHopInstance,
    trace: ResolutionTrace,
    aliases: AliasTable = EMPTY_ALIASES,
) -> int:
    """1 if every hop of the trace resolved to the matching edited-path object.

    Hops subsumed by a composition count as correct iff the composed run's final
    object is correct. A trace whose length differs from the edited path scores 0.
    """
    gold = instance.edited_path
    hops = trace.hops
    if not trace.ok or len(hops) != len(gold):
        return 0
    last = len(gold) - 1

    def golds(i: int) -> set[str]:
        return set(instance.answer_aliases) if i == last else {gold[i].object}

    for i, hop in enumerate(hops):
        k = i
        if hop.subsumed:
            while k < last and hops[k].subsumed:
                k += 1
            if hops[k].subsumed:
                return 0
        if not answer_matches(hops[k].resolved_object, golds(k), aliases):
            return 0
    return 1


@dataclass(frozen=True)
class ExperimentConfig:
    batch_size: BatchSize = 1
    traversal: TraversalConfig = field(default_factory=TraversalConfig)
    rounds: int = 1
    seed: int = 0
    jobs: int = 1
    backend: str = "mock_kb"

    def __post_init__(self) -> None:
        if self.batch_size != "all" and (not isinstance(self.batch_size, int) or self.batch_size < 1):
            raise ValidationError("batch_size must be a positive integer or 'all'")
        if self.rounds < 1 or self.jobs < 1:
            raise ValidationError("rounds and jobs must be >= 1")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["traversal"]["direction"] = self.traversal.direction.value
        return out

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_ablation(self, implication: bool, composition: bool) -> ExperimentConfig:
        t = replace(
            self.traversal, disable_implication=implication, disable_composition=composition
        )
        return replace(self, traversal=t)


@dataclass
class InstanceVerdict:
    instance_id: str
    round: int
    batch: int
    m_acc: int
    h_acc: int
    answers: dict[str, str | None]
    traces: list[ResolutionTrace] = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "round": self.round,
            "batch": self.batch,
            "m_acc": self.m_acc,
            "h_acc": self.h_acc,
            "answers": self.answers,
        }


@dataclass
class BatchResult:
    round: int
    index: int
    instance_ids: list[str]
    n_edits: int
    m_acc: float
    h_acc: float


@dataclass
class Report:
    dataset: str
    config: dict
    fingerprint: str
    batches: list[BatchResult] = field(default_factory=list)
    verdicts: list[InstanceVerdict] = field(default_factory=list)
    complete: bool = True

    def _weighted(self, attr: str) -> float:
        total = sum(len(b.instance_ids) for b in self.batches)
        if not total:
            return 0.0
        return sum(getattr(b, attr) * len(b.instance_ids) for b in self.batches) / total

    @property
    def m_acc(self) -> float:
        return self._weighted("m_acc")

    @property
    def h_acc(self) -> float:
        return self._weighted("h_acc")

    def round_scores(self) -> list[tuple[int, float, float]]:
        out = []
        for r in sorted({b.round for b in self.batches}):
            sub = Report(self.dataset, self.config, self.fingerprint,
                         [b for b in self.batches if b.round == r])
            out.append((r, sub.m_acc, sub.h_acc))
        return out

    def source_histogram(self) -> dict[str, int]:
        counts: Counter[str] = Counter()
        for v in self.verdicts:
            for t in v.traces:
                if t.failure:
                    counts["failure"] += 1
                for hop in t.hops:
                    counts[hop.source.value] += 1
        return dict(sorted(counts.items()))

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "fingerprint": self.fingerprint,
            "config": self.config,
            "complete": self.complete,
            "m_acc": self.m_acc,
            "h_acc": self.h_acc,
            "rounds": [{"round": r, "m_acc": m, "h_acc": h} for r, m, h in self.round_scores()],
            "batches": [asdict(b) for b in self.batches],
            "source_histogram": self.source_histogram(),
            "verdicts": [v.to_dict() for v in self.verdicts],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True, ensure_ascii=False)


def make_batches(ids: Sequence[str], batch_size: BatchSize, rng: random.Random) -> list[list[str]]:
    order = list(ids)
    rng.shuffle(order)
    size = len(order) if batch_size == "all" else batch_size
    return [order[i : i + size] for i in range(0, len(order), size)]


def batch_edits(instances: Sequence[MultiHopInstance], aliases: AliasTable) -> EditCollection:
    """Deduplicated union of the instances' edits, in batch order."""
    collection = EditCollection(aliases=aliases)
    for inst in instances:
        for edit in inst.edits:
            collection.add(edit)
    return collection


def run_experiment(
    dataset: Dataset,
    config: ExperimentConfig,
    rules: RuleSet,
    gateway: Gateway,
    embedder,
    index_builder: Callable = build_index,
) -> Report:
    """Evaluate the pipeline batch by batch; each batch gets a fresh edit index."""
    if isinstance(config.batch_size, int) and config.batch_size > len(dataset):
        raise ValidationError(
            f"batch size {config.batch_size} exceeds dataset size {len(dataset)}"
        )
    report = Report(dataset.name, config.to_dict(), config.fingerprint())
    by_id = {inst.instance_id: inst for inst in dataset.instances}
    aliases = dataset.alias_table

    for rnd in range(config.rounds):
        rng = random.Random(config.seed * 1_000_003 + rnd)
        batches = make_batches([i.instance_id for i in dataset.instances], config.batch_size, rng)
        for b_index, ids in enumerate(batches):
            members = [by_id[i] for i in ids]
            edits = batch_edits(members, aliases)
            index = index_builder(edits, embedder, aliases)
            jobs = [(inst, q) for inst in members for q in inst.questions]

            def run(job):
                return solve(job[1], index, rules, gateway, config.traversal)

            try:
                if config.jobs > 1:
                    with ThreadPoolExecutor(config.jobs) as pool:
                        traces = list(pool.map(run, jobs))
                else:
                    traces = [run(job) for job in jobs]
            except GatewayError as exc:
                report.complete = False
                raise ExperimentAborted(
                    f"round {rnd} batch {b_index}: gateway failure: {exc}", report
                ) from exc

            it = iter(traces)
            verdicts = []
            for inst in members:
                inst_traces = [next(it) for _ in inst.questions]
                answers = {q: t.final_answer for q, t in zip(inst.questions, inst_traces)}
                verdicts.append(
                    InstanceVerdict(
                        instance_id=inst.instance_id,
                        round=rnd,
                        batch=b_index,
                        m_acc=m_acc(inst, answers, aliases),
                        h_acc=max(h_acc(inst, t, aliases) for t in inst_traces),
                        answers=answers,
                        traces=inst_traces,
                    )
                )
            report.verdicts.extend(verdicts)
            report.batches.append(
                BatchResult(
                    round=rnd,
                    index=b_index,
                    instance_ids=list(ids),
                    n_edits=len(edits),
                    m_acc=sum(v.m_acc for v in verdicts) / len(verdicts),
                    h_acc=sum(v.h_acc for v in verdicts) / len(verdicts),
                )
            )
    return report


ABLATIONS = {
    "full": (False, False),
    "-I": (True, False),
    "-C": (False, True),
    "-IC": (True, True),
}


def ablate(
    dataset: Dataset,
    base_config: ExperimentConfig,
    rules: RuleSet,
    gateway: Gateway,
    embedder,
) -> dict[str, Report]:
    return {
        name: run_experiment(dataset, base_config.with_ablation(*flags), rules, gateway, embedder)
        for name, flags in ABLATIONS.items()
    }


def format_table(rows: Mapping[str, Report]) -> str:
    width = max([len(n) for n in rows] + [7])
    lines = [f"{'variant':<{width}}  {'M-Acc':>7}  {'H-Acc':>7}"]
    for name, rep in rows.items():
        lines.append(f"{name:<{width}}  {rep.m_acc * 100:7.2f}  {rep.h_acc * 100:7.2f}")
    return "\n".join(lines)
