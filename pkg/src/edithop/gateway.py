"""Target-model access: question decomposition and per-hop answering.

Three backends sit behind the same ``complete(request) -> str`` call:

* ``MockBackend`` answers from a fixed knowledge base and decomposition table,
  standing in for the model's prior knowledge in tests and desk experiments.
* ``HttpChatBackend`` talks to an OpenAI-compatible chat completions endpoint.
* ``CassetteBackend`` records another backend's responses to a JSON file keyed
  by request hash, or replays them without touching the network.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from string import Template
from typing import Iterable, Mapping, Sequence

import httpx

from .core import (
    EMPTY_ALIASES,
    UNBOUND_TEXT,
    AliasTable,
    ReasoningPath,
    SubProblem,
    ValidationError,
    entity_key,
    normalize_entity,
    normalize_relation,
)

MODEL_UNKNOWN = "<unknown>"


class GatewayError(RuntimeError):
    """The backend could not be reached or returned an unusable response."""


class DecompositionParseError(ValueError):
    def __init__(self, message: str, raw_output: str):
        super().__init__(message)
        self.raw_output = raw_output


class CassetteMiss(GatewayError):
    pass


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    # routing hints for the mock backend; not part of the request identity
    kind: str = field(default="", compare=False)
    payload: str = field(default="", compare=False)

    def canonical(self) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": r, "content": c} for r, c in self.messages],
            "temperature": self.temperature,
        }

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class MockKnowledgeBase:
    """Deterministic stand-in for a model's prior knowledge."""

    def __init__(
        self,
        facts: Iterable[Sequence[str]] = (),
        decompositions: Mapping[str, tuple[str, Sequence[str]]] | None = None,
        aliases: AliasTable | None = None,
    ):
        self.aliases = aliases or EMPTY_ALIASES
        self._facts: dict[tuple[str, str], str] = {}
        self._rows: dict[tuple[str, str], tuple[str, str]] = {}
        for s, r, o in facts:
            self.add_fact(s, r, o)
        self._decomp: dict[str, tuple[str, tuple[str, ...]]] = {}
        for q, (entity, relations) in (decompositions or {}).items():
            self.add_decomposition(q, entity, relations)

    def add_fact(self, subject: str, relation: str, obj: str) -> None:
        relation = normalize_relation(relation)
        self._facts[(entity_key(subject), relation)] = normalize_entity(obj)
        self._rows[(entity_key(subject), relation)] = (normalize_entity(subject), relation)

    def add_decomposition(self, question: str, entity: str, relations: Sequence[str]) -> None:
        self._decomp[question.strip()] = (
            normalize_entity(entity),
            tuple(normalize_relation(r) for r in relations),
        )

    def lookup(self, subject: str, relation: str) -> str:
        relation = normalize_relation(relation)
        for key in sorted(self.aliases.expand(subject)):
            hit = self._facts.get((key, relation))
            if hit is not None:
                return hit
        return MODEL_UNKNOWN

    def decomposition(self, question: str) -> tuple[str, tuple[str, ...]] | None:
        return self._decomp.get(question.strip())

    @classmethod
    def from_dict(cls, data: Mapping) -> MockKnowledgeBase:
        return cls(
            facts=data.get("facts", []),
            decompositions={
                q: (d["entity"], d["relations"]) for q, d in data.get("decompositions", {}).items()
            },
            aliases=AliasTable(data.get("aliases", {})),
        )

    def to_dict(self) -> dict:
        return {
            "facts": [[*self._rows[key], obj] for key, obj in sorted(self._facts.items())],
            "decompositions": {
                q: {"entity": e, "relations": list(rs)} for q, (e, rs) in sorted(self._decomp.items())
            },
            "aliases": self.aliases.to_dict(),
        }

    @classmethod
    def load(cls, path: str | Path) -> MockKnowledgeBase:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def format_decomposition(entity: str, relations: Sequence[str]) -> str:
    lines = [f"Entity: {entity}"]
    for i, rel in enumerate(relations, 1):
        subj = entity if i == 1 else UNBOUND_TEXT
        lines.append(f"Hop {i}: {subj}; {rel}; {UNBOUND_TEXT}")
    return "\n".join(lines)


class MockBackend:
    def __init__(self, kb: MockKnowledgeBase):
        self.kb = kb
        self.calls = 0

    def complete(self, request: ChatRequest) -> str:
        self.calls += 1
        if request.kind == "decompose":
            hit = self.kb.decomposition(request.payload)
            return "UNKNOWN" if hit is None else format_decomposition(*hit)
        if request.kind == "query":
            subject, relation, _ = request.payload.rsplit("; ", 2)
            return self.kb.lookup(subject, relation)
        raise GatewayError(f"mock backend cannot route request kind {request.kind!r}")


class HttpChatBackend:
    """OpenAI-compatible ``/chat/completions`` client with bounded retries."""

    def __init__(
        self,
        url: str,
        model: str,
        timeout_ms: int = 30_000,
        max_retries: int = 2,
        token_env: str | None = None,
        max_in_flight: int = 4,
        transport: httpx.BaseTransport | None = None,
    ):
        if max_retries < 0:
            raise ValidationError("max_retries must be >= 0")
        self.url = url
        self.model = model
        self.max_retries = max_retries
        self.token_env = token_env
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._client = httpx.Client(timeout=timeout_ms / 1000, transport=transport)

    def complete(self, request: ChatRequest) -> str:
        headers = {}
        if self.token_env and os.environ.get(self.token_env):
            headers["Authorization"] = f"Bearer {os.environ[self.token_env]}"
        last: Exception | None = None
        for _ in range(self.max_retries + 1):
            try:
                with self._slots:
                    resp = self._client.post(self.url, json=request.canonical(), headers=headers)
                if resp.status_code >= 500:
                    last = GatewayError(f"server error {resp.status_code}")
                    continue
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except httpx.TransportError as exc:
                last = exc
            except (httpx.HTTPStatusError, KeyError, IndexError, TypeError, ValueError) as exc:
                raise GatewayError(f"bad response from {self.url}: {exc}") from exc
        raise GatewayError(f"{self.url} failed after {self.max_retries + 1} attempts: {last}")


class CassetteBackend:
    """Record/replay wrapper. Replay mode never calls the wrapped backend."""

    def __init__(self, path: str | Path, mode: str, inner=None):
        if mode not in ("record", "replay"):
            raise ValueError(f"cassette mode must be record or replay, not {mode!r}")
        if mode == "record" and inner is None:
            raise ValueError("record mode needs a backend to record from")
        self.path = Path(path)
        self.mode = mode
        self.inner = inner
        self._lock = threading.Lock()
        if self.path.exists():
            self._entries: dict[str, str] = json.loads(self.path.read_text(encoding="utf-8"))
        elif mode == "replay":
            raise CassetteMiss(f"cassette {self.path} does not exist")
        else:
            self._entries = {}

    def __len__(self) -> int:
        return len(self._entries)

    def complete(self, request: ChatRequest) -> str:
        key = request.digest()
        if self.mode == "replay":
            try:
                return self._entries[key]
            except KeyError:
                raise CassetteMiss(f"no recorded response for request {key[:12]}") from None
        response = self.inner.complete(request)
        with self._lock:
            self._entries[key] = response
            self.path.write_text(
                json.dumps(self._entries, indent=1, sort_keys=True, ensure_ascii=False),
                encoding="utf-8",
            )
        return response


def record_replay(mode: str, cassette_path: str | Path, inner=None) -> CassetteBackend:
    return CassetteBackend(cassette_path, mode, inner)


@dataclass(frozen=True)
class TargetModelConfig:
    backend: str = "mock_kb"
    url: str | None = None
    model: str = "target-model"
    timeout_ms: int = 30_000
    max_retries: int = 2
    token_env: str | None = None
    relation_template: str | None = None
    query_template: str | None = None
    temperature: float = 0.0
    max_in_flight: int = 4

    def __post_init__(self) -> None:
        if self.backend not in ("http_chat", "mock_kb", "replay"):
            raise ValidationError(f"unknown backend {self.backend!r}")
        if self.temperature < 0:
            raise ValidationError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ValidationError("max_retries must be >= 0")


def _load_template(path: str | None, default_name: str) -> Template:
    if path is None:
        text = resources.files("edithop.templates").joinpath(default_name).read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return Template(text)


@dataclass(frozen=True)
class DecompositionResult:
    start_entity: str
    path: ReasoningPath
    raw_model_output: str


_HOP = re.compile(r"^hop\s*(\d+)\s*:\s*(.*)$", re.IGNORECASE)
_ENTITY = re.compile(r"^entity\s*:\s*(.*)$", re.IGNORECASE)


def parse_decomposition(raw: str) -> DecompositionResult:
    """Parse ``Entity: ...`` / ``Hop i: s; r; ?`` lines into a reasoning path."""
    entity = None
    hops: list[tuple[int, str]] = []
    for line in raw.splitlines():
        line = line.strip()
        if m := _ENTITY.match(line):
            if entity is None:
                entity = m.group(1).strip()
        elif m := _HOP.match(line):
            hops.append((int(m.group(1)), m.group(2)))
    if not entity:
        raise DecompositionParseError("no 'Entity:' line", raw)
    if not hops:
        raise DecompositionParseError("no 'Hop i:' lines", raw)
    steps = []
    for expected, (index, body) in enumerate(hops, 1):
        if index != expected:
            raise DecompositionParseError(f"hop {index} out of order (expected {expected})", raw)
        parts = body.rsplit(";", 2)
        if len(parts) != 3 or not parts[1].strip():
            raise DecompositionParseError(f"hop {index} is not 'subject; relation; ?'", raw)
        try:
            steps.append(SubProblem(relation=parts[1], hop_index=index))
        except ValidationError as exc:
            raise DecompositionParseError(str(exc), raw) from None
    try:
        start = normalize_entity(entity)
    except ValidationError as exc:
        raise DecompositionParseError(str(exc), raw) from None
    steps[0] = steps[0].bind_subject(start)
    return DecompositionResult(start, ReasoningPath(start, tuple(steps)), raw)


def first_line(text: str) -> str:
    for line in text.splitlines():
        if line.strip():
            return line.strip()
    return ""


class Gateway:
    """Renders prompts, calls the backend and parses what comes back."""

    def __init__(self, backend, config: TargetModelConfig | None = None):
        self.backend = backend
        self.config = config or TargetModelConfig()
        self._t_relation = _load_template(self.config.relation_template, "relation.txt")
        self._t_query = _load_template(self.config.query_template, "query.txt")

    def render_relation(self, question: str) -> str:
        return self._t_relation.substitute(question=question)

    def render_query(self, p: SubProblem) -> str:
        return self._t_query.substitute(subproblem=p.to_text())

    def _request(self, prompt: str, kind: str, payload: str) -> ChatRequest:
        return ChatRequest(
            model=self.config.model,
            messages=(("user", prompt),),
            temperature=self.config.temperature,
            kind=kind,
            payload=payload,
        )

    def _call(self, request: ChatRequest) -> str:
        try:
            return self.backend.complete(request)
        except GatewayError:
            raise
        except httpx.HTTPError as exc:
            raise GatewayError(str(exc)) from exc

    def decompose(self, question: str) -> DecompositionResult:
        raw = self._call(self._request(self.render_relation(question), "decompose", question))
        return parse_decomposition(raw)

    def answer_subproblem(self, p: SubProblem) -> str:
        if not p.is_bound:
            raise ValidationError("sub-problem subject must be bound")
        raw = self._call(self._request(self.render_query(p), "query", p.to_text()))
        answer = first_line(raw)
        if not answer or answer == MODEL_UNKNOWN:
            return MODEL_UNKNOWN
        return normalize_entity(answer)


def make_backend(
    config: TargetModelConfig,
    kb: MockKnowledgeBase | None = None,
    cassette: str | Path | None = None,
    record: bool = False,
    transport: httpx.BaseTransport | None = None,
):
    """Build the backend named in ``config``; optionally wrap it in a recording cassette."""
    if config.backend == "replay":
        if cassette is None:
            raise ValidationError("replay backend needs a cassette path")
        return CassetteBackend(cassette, "replay")
    if config.backend == "mock_kb":
        if kb is None:
            raise ValidationError("mock_kb backend needs a knowledge-base file")
        inner = MockBackend(kb)
    else:
        if not config.url:
            raise ValidationError("http_chat backend needs a url")
        inner = HttpChatBackend(
            config.url,
            config.model,
            timeout_ms=config.timeout_ms,
            max_retries=config.max_retries,
            token_env=config.token_env,
            max_in_flight=config.max_in_flight,
            transport=transport,
        )
    if record:
        if cassette is None:
            raise ValidationError("recording needs a cassette path")
        return CassetteBackend(cassette, "record", inner)
    return inner
