"""Pluggable model providers: embeddings, candidate captions, paraphrases,
and answers.

Each role has a deterministic offline implementation (for CI and replays)
and a remote HTTP implementation speaking a minimal JSON contract: POST
``{endpoint}/embed`` with ``{"model", "texts"}`` returning ``{"vectors"}``,
and POST ``{endpoint}/generate`` with ``{"model", "prompt", "temperature"}``
returning ``{"text"}``. Every generation call is captured as a
GenerationRecord so a run can be audited and replayed bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
import uuid
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Mapping, Sequence

import numpy as np
import requests

from .errors import (
    ConfigError,
    CountMismatch,
    DataError,
    DimInconsistent,
    EmptyResponse,
    ParseFailure,
    ProviderError,
)

CANDIDATE_TEMPERATURE = 0.7
PARAPHRASE_TEMPERATURE = 0.3


@dataclass(frozen=True)
class ProviderConfig:
    endpoint: str = ""
    token: str = ""
    model: str = "mock"
    temperature: float = CANDIDATE_TEMPERATURE
    timeout: float = 30.0
    max_retries: int = 3
    parallelism: int = 4

    def __post_init__(self):
        if self.temperature < 0:
            raise ConfigError(f"temperature must be >= 0, got {self.temperature}")
        if self.timeout <= 0:
            raise ConfigError(f"timeout must be > 0, got {self.timeout}")
        if self.max_retries < 0:
            raise ConfigError(f"max_retries must be >= 0, got {self.max_retries}")
        if self.parallelism < 1:
            raise ConfigError(f"parallelism must be >= 1, got {self.parallelism}")

    @classmethod
    def from_env(cls, **overrides) -> "ProviderConfig":
        overrides.setdefault("endpoint", os.environ.get("PROVIDER_ENDPOINT", ""))
        overrides.setdefault("token", os.environ.get("PROVIDER_TOKEN", ""))
        return cls(**overrides)


# -- audit trail ---------------------------------------------------------------

@dataclass(frozen=True)
class GenerationRecord:
    provider: str
    kind: str  # embed | candidates | paraphrase | answer
    prompt: str
    raw_response: str
    parsed: object
    meta: dict
    timestamp: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "provider": self.provider,
                "kind": self.kind,
                "prompt": self.prompt,
                "raw_response": self.raw_response,
                "parsed": self.parsed,
                "meta": self.meta,
                "timestamp": self.timestamp,
            },
            ensure_ascii=False,
        )

    @classmethod
    def from_obj(cls, obj: dict) -> "GenerationRecord":
        return cls(
            provider=obj["provider"],
            kind=obj["kind"],
            prompt=obj["prompt"],
            raw_response=obj["raw_response"],
            parsed=obj.get("parsed"),
            meta=obj.get("meta", {}),
            timestamp=obj.get("timestamp", 0.0),
        )


class RecordLog:
    """Append-only log of provider calls; single writer, any readers."""

    def __init__(self, path=None):
        self.path = path
        self.records: list[GenerationRecord] = []
        self._lock = threading.Lock()
        self._fh = open(path, "w", encoding="utf-8", newline="\n") if path else None

    def add(self, record: GenerationRecord) -> None:
        with self._lock:
            self.records.append(record)
            if self._fh is not None:
                self._fh.write(record.to_json() + "\n")
                self._fh.flush()

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __len__(self) -> int:
        return len(self.records)


def load_records(path) -> list[GenerationRecord]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(GenerationRecord.from_obj(json.loads(line)))
    return out


# -- prompt templates ----------------------------------------------------------

def _template(name: str) -> str:
    return (resources.files("mepa") / "prompts" / name).read_text(encoding="utf-8")


def render_candidate_prompt(
    image_context: str, target_query: str, true_answer: str, n: int
) -> str:
    """Fill the caption-generation template; placeholders substituted verbatim."""
    if n < 1:
        raise DataError(f"candidate count must be >= 1, got {n}")
    for label, value in (
        ("image_context", image_context),
        ("target_query", target_query),
        ("true_answer", true_answer),
    ):
        if not value or not value.strip():
            raise DataError(f"prompt field {label!r} is empty")
    return (
        _template("attack_generation.txt")
        .replace("{image_context}", image_context)
        .replace("{target_query}", target_query)
        .replace("{true_answer}", true_answer)
        .replace("{n_candidates}", str(n))
    )


def render_paraphrase_prompt(question: str) -> str:
    if not question or not question.strip():
        raise DataError("question is empty")
    return _template("paraphrase.txt").replace("<QUESTION>", question)


# -- response parsing ----------------------------------------------------------

_QUOTE_PAIRS = (('"', '"'), ("'", "'"), ("“", "”"), ("‘", "’"))

_ITEM_RE = re.compile(r"^\s*(\d+)[.)]\s*(.*\S)?\s*$")


def strip_quotes(s: str) -> str:
    """Remove one layer of matched surrounding quotes, if present."""
    s = s.strip()
    for left, right in _QUOTE_PAIRS:
        if len(s) >= 2 and s.startswith(left) and s.endswith(right):
            return s[1:-1].strip()
    return s


def parse_numbered_list(raw: str, n: int) -> list[str]:
    """Extract items 1..n from a `1. "..."` style response.

    Items are collected by their stated number, so ordering and blank
    lines in the response do not matter. The first occurrence of a number
    wins; numbers above n are ignored. All of 1..n must be present.
    """
    found: dict[int, str] = {}
    numbered = False
    for line in raw.splitlines():
        m = _ITEM_RE.match(line)
        if m is None:
            continue
        numbered = True
        num = int(m.group(1))
        if num in found:
            continue
        found[num] = strip_quotes(m.group(2) or "")
    if not numbered:
        raise ParseFailure("no numbered items in response", raw)
    present = [i for i in range(1, n + 1) if i in found]
    if len(present) < n:
        raise CountMismatch(n, len(present), raw)
    items = [found[i] for i in range(1, n + 1)]
    if any(not t for t in items):
        raise ParseFailure("numbered item with empty text", raw)
    return items


def parse_single_text(raw: str) -> str:
    text = strip_quotes(raw)
    if not text:
        raise EmptyResponse("provider returned an empty response")
    return text


# -- evidence passed to answer generators --------------------------------------

@dataclass(frozen=True)
class EvidenceItem:
    """One retrieved entry as seen by the answer generator.

    Real generators consume only caption and image_ref. The trailing
    annotation fields exist for the offline context-echo generator and
    are filled in by the evaluation runner, never sent over the wire.
    """

    entry_id: str
    caption: str
    image_ref: str
    poisoned: bool = False
    payload_answer: str | None = None
    gold_answer: str | None = None


def answer_prompt(question: str, evidence: Sequence[EvidenceItem]) -> str:
    """Canonical answer-generation prompt; also the replay lookup key."""
    lines = [f"Question: {question}", "Evidence:"]
    for i, item in enumerate(evidence, start=1):
        lines.append(f"{i}. {item.caption} [image: {item.image_ref}]")
    lines.append("Answer:")
    return "\n".join(lines)


# -- deterministic offline providers -------------------------------------------

class MockEmbedder:
    """Hash-seeded random projection: reproducible geometry with no model.

    Each text deterministically seeds a generator that draws a d-dimensional
    gaussian, which is then unit-normalized. Identical (seed, text) pairs
    always produce identical vectors; distinct texts are nearly orthogonal
    at moderate d. Image refs are embedded through the same text path.
    """

    name = "mock-embedder"

    def __init__(self, seed: int = 0, dim: int = 32):
        if dim < 1:
            raise ConfigError(f"dim must be >= 1, got {dim}")
        self.seed = seed
        self.dim = dim

    def embed_text(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(
            f"{self.seed}\x00{text}".encode("utf-8")
        ).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "big"))
        v = rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)

    def embed_texts(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise DataError("empty embedding batch")
        return [self.embed_text(t) for t in texts]


_MOCK_CAPTION_PATTERNS = (
    "Photo of {ctx}, clearly showing {payload}.",
    "{ctx}, with {payload} plainly visible.",
    "An archival image of {ctx} featuring {payload}.",
    "Close-up of {ctx}; note {payload}.",
    "{ctx} photographed so that {payload} stands out.",
    "Official picture of {ctx}, documented as {payload}.",
    "A widely shared shot of {ctx} confirming {payload}.",
    "{ctx} as captured on the day, revealing {payload}.",
    "Press photo: {ctx}, identified as {payload}.",
    "Candid view of {ctx} where {payload} is unmistakable.",
)


class MockCandidateGenerator:
    """Offline caption writer for attack runs.

    Canned pools (keyed by the target query text) pass through verbatim.
    Otherwise captions are synthesized around a payload phrase: the
    per-query payload if one is registered, else the negation of the
    true answer. Every synthesized caption mentions the payload exactly
    once, mirroring the instruction in the prompt template.
    """

    name = "mock-candidates"

    def __init__(
        self,
        payload_by_query: Mapping[str, str] | None = None,
        canned: Mapping[str, Sequence[str]] | None = None,
        log: RecordLog | None = None,
    ):
        self.payload_by_query = dict(payload_by_query or {})
        self.canned = {k: list(v) for k, v in (canned or {}).items()}
        self.log = log

    def _synthesize(self, image_context: str, target_query: str, true_answer: str, n: int):
        payload = self.payload_by_query.get(target_query, f"not {true_answer}")
        out = []
        for i in range(n):
            pattern = _MOCK_CAPTION_PATTERNS[i % len(_MOCK_CAPTION_PATTERNS)]
            text = pattern.format(ctx=image_context, payload=payload)
            if i >= len(_MOCK_CAPTION_PATTERNS):
                text = f"{text} (variant {i + 1})"
            out.append(text)
        return out

    def generate_candidates(
        self, image_context: str, target_query: str, true_answer: str, n: int
    ) -> list[str]:
        prompt = render_candidate_prompt(image_context, target_query, true_answer, n)
        if target_query in self.canned:
            texts = self.canned[target_query]
        else:
            texts = self._synthesize(image_context, target_query, true_answer, n)
        raw = "\n".join(f'{i}. "{t}"' for i, t in enumerate(texts, start=1))
        parsed = parse_numbered_list(raw, n)
        if self.log is not None:
            self.log.add(
                GenerationRecord(
                    provider=self.name,
                    kind="candidates",
                    prompt=prompt,
                    raw_response=raw,
                    parsed=parsed,
                    meta={"n": n},
                    timestamp=time.time(),
                )
            )
        return parsed


class IdentityParaphraser:
    """Returns the question unchanged; the do-nothing defense baseline."""

    name = "identity-paraphraser"

    def __init__(self, log: RecordLog | None = None):
        self.log = log

    def paraphrase(self, question: str) -> str:
        prompt = render_paraphrase_prompt(question)
        parsed = parse_single_text(question)
        if self.log is not None:
            self.log.add(
                GenerationRecord(
                    provider=self.name,
                    kind="paraphrase",
                    prompt=prompt,
                    raw_response=question,
                    parsed=parsed,
                    meta={},
                    timestamp=time.time(),
                )
            )
        return parsed


class CannedParaphraser:
    """Serves pre-written raw responses keyed by question text."""

    name = "canned-paraphraser"

    def __init__(self, responses: Mapping[str, str], log: RecordLog | None = None):
        self.responses = dict(responses)
        self.log = log

    def paraphrase(self, question: str) -> str:
        prompt = render_paraphrase_prompt(question)
        try:
            raw = self.responses[question]
        except KeyError:
            raise ProviderError(f"no canned paraphrase for {question!r}") from None
        parsed = parse_single_text(raw)
        if self.log is not None:
            self.log.add(
                GenerationRecord(
                    provider=self.name,
                    kind="paraphrase",
                    prompt=prompt,
                    raw_response=raw,
                    parsed=parsed,
                    meta={},
                    timestamp=time.time(),
                )
            )
        return parsed


class EchoAnswerGenerator:
    """Context-echo reader: a deterministic stand-in for the generator.

    Rules, in order: answer with the payload of the highest-ranked
    poisoned evidence item; else with the gold answer attached to the
    highest-ranked gold item; else with the empty string. This makes
    answer adoption exactly track poison retrieval, which end-to-end
    tests rely on.
    """

    name = "echo-answerer"

    def __init__(self, log: RecordLog | None = None):
        self.log = log

    def generate_answer(self, question: str, evidence: Sequence[EvidenceItem]) -> str:
        answer = ""
        for item in evidence:
            if item.poisoned and item.payload_answer is not None:
                answer = item.payload_answer
                break
        else:
            for item in evidence:
                if item.gold_answer is not None:
                    answer = item.gold_answer
                    break
        if self.log is not None:
            self.log.add(
                GenerationRecord(
                    provider=self.name,
                    kind="answer",
                    prompt=answer_prompt(question, evidence),
                    raw_response=answer,
                    parsed=answer,
                    meta={"k": len(evidence)},
                    timestamp=time.time(),
                )
            )
        return answer


# -- remote providers ----------------------------------------------------------

class _HttpClient:
    """Shared transport: bearer auth, retries with backoff, idempotency keys.

    Server errors and transport failures retry with exponential backoff;
    client errors (4xx) fail immediately. One idempotency key covers all
    retries of a logical request, so a duplicate delivery cannot double
    its effects server-side.
    """

    def __init__(
        self,
        cfg: ProviderConfig,
        session=None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not cfg.endpoint:
            raise ConfigError("provider endpoint not set (PROVIDER_ENDPOINT)")
        self.cfg = cfg
        self.session = session if session is not None else requests.Session()
        self.sleep = sleep

    def post_json(self, path: str, payload: dict) -> dict:
        url = self.cfg.endpoint.rstrip("/") + path
        headers = {
            "Authorization": f"Bearer {self.cfg.token}",
            "Idempotency-Key": str(uuid.uuid4()),
        }
        last_error = None
        for attempt in range(self.cfg.max_retries + 1):
            if attempt > 0:
                self.sleep(min(8.0, 0.5 * 2 ** (attempt - 1)))
            try:
                resp = self.session.post(
                    url, json=payload, headers=headers, timeout=self.cfg.timeout
                )
            except requests.RequestException as exc:
                last_error = ProviderError(f"transport failure calling {url}: {exc}")
                continue
            if resp.status_code >= 500:
                last_error = ProviderError(f"{url} returned {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise ProviderError(f"{url} returned {resp.status_code}: {resp.text}")
            try:
                return resp.json()
            except ValueError as exc:
                raise ProviderError(f"{url} returned non-JSON body") from exc
        raise last_error if last_error is not None else ProviderError(
            f"no attempts made calling {url}"
        )


class HttpEmbedder:
    name = "http-embedder"

    def __init__(self, cfg: ProviderConfig, log: RecordLog | None = None, session=None):
        self.cfg = cfg
        self.log = log
        self._client = _HttpClient(cfg, session=session)

    def embed_texts(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise DataError("empty embedding batch")
        body = self._client.post_json(
            "/embed", {"model": self.cfg.model, "texts": list(texts)}
        )
        vectors = body.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise ProviderError(
                f"embed returned {0 if not isinstance(vectors, list) else len(vectors)}"
                f" vectors for {len(texts)} texts"
            )
        arrays = [np.asarray(v, dtype=np.float64) for v in vectors]
        dims = {a.shape for a in arrays}
        if len(dims) != 1 or arrays[0].ndim != 1:
            raise DimInconsistent(f"embed returned mixed shapes: {sorted(dims)}")
        if self.log is not None:
            self.log.add(
                GenerationRecord(
                    provider=self.name,
                    kind="embed",
                    prompt=json.dumps(list(texts), ensure_ascii=False),
                    raw_response=json.dumps(vectors),
                    parsed=None,
                    meta={"model": self.cfg.model, "count": len(texts)},
                    timestamp=time.time(),
                )
            )
        return arrays

    def embed_text(self, text: str) -> np.ndarray:
        return self.embed_texts([text])[0]


class _HttpGenerator:
    kind = "generate"
    name = "http-generator"

    def __init__(self, cfg: ProviderConfig, log: RecordLog | None = None, session=None):
        self.cfg = cfg
        self.log = log
        self._client = _HttpClient(cfg, session=session)

    def _generate_raw(self, prompt: str) -> str:
        body = self._client.post_json(
            "/generate",
            {
                "model": self.cfg.model,
                "prompt": prompt,
                "temperature": self.cfg.temperature,
            },
        )
        text = body.get("text")
        if not isinstance(text, str):
            raise ProviderError("generate response missing 'text'")
        return text

    def _record(self, prompt: str, raw: str, parsed) -> None:
        if self.log is not None:
            self.log.add(
                GenerationRecord(
                    provider=self.name,
                    kind=self.kind,
                    prompt=prompt,
                    raw_response=raw,
                    parsed=parsed,
                    meta={
                        "model": self.cfg.model,
                        "temperature": self.cfg.temperature,
                    },
                    timestamp=time.time(),
                )
            )


class HttpCandidateGenerator(_HttpGenerator):
    kind = "candidates"
    name = "http-candidates"

    def generate_candidates(
        self, image_context: str, target_query: str, true_answer: str, n: int
    ) -> list[str]:
        prompt = render_candidate_prompt(image_context, target_query, true_answer, n)
        raw = self._generate_raw(prompt)
        parsed = parse_numbered_list(raw, n)
        self._record(prompt, raw, parsed)
        return parsed


class HttpParaphraser(_HttpGenerator):
    kind = "paraphrase"
    name = "http-paraphraser"

    def paraphrase(self, question: str) -> str:
        prompt = render_paraphrase_prompt(question)
        raw = self._generate_raw(prompt)
        parsed = parse_single_text(raw)
        self._record(prompt, raw, parsed)
        return parsed


class HttpAnswerGenerator(_HttpGenerator):
    kind = "answer"
    name = "http-answerer"

    def generate_answer(self, question: str, evidence: Sequence[EvidenceItem]) -> str:
        prompt = answer_prompt(question, evidence)
        raw = self._generate_raw(prompt)
        parsed = raw.strip()
        self._record(prompt, raw, parsed)
        return parsed


# -- record replay -------------------------------------------------------------

class ReplayProvider:
    """Serves recorded raw responses back through the normal parsers.

    Lookup is by (kind, rendered prompt); multiple records for the same
    prompt replay in their original order. Covers the three generation
    roles; embeddings replay through the deterministic mock embedder or
    the original embedding files instead.
    """

    name = "replay"

    def __init__(self, records: Sequence[GenerationRecord], log: RecordLog | None = None):
        self._queues: dict[tuple[str, str], deque[str]] = {}
        for rec in records:
            self._queues.setdefault((rec.kind, rec.prompt), deque()).append(
                rec.raw_response
            )
        self.log = log

    def _next_raw(self, kind: str, prompt: str) -> str:
        queue = self._queues.get((kind, prompt))
        if not queue:
            raise ProviderError(f"no recorded {kind} response for this prompt")
        return queue.popleft()

    def generate_candidates(
        self, image_context: str, target_query: str, true_answer: str, n: int
    ) -> list[str]:
        prompt = render_candidate_prompt(image_context, target_query, true_answer, n)
        return parse_numbered_list(self._next_raw("candidates", prompt), n)

    def paraphrase(self, question: str) -> str:
        prompt = render_paraphrase_prompt(question)
        return parse_single_text(self._next_raw("paraphrase", prompt))

    def generate_answer(self, question: str, evidence: Sequence[EvidenceItem]) -> str:
        prompt = answer_prompt(question, evidence)
        return self._next_raw("answer", prompt).strip()


# -- shared concurrency helper -------------------------------------------------

def map_ordered(fn: Callable, items: Sequence, parallelism: int) -> list:
    """Apply fn to every item, at most `parallelism` in flight, results in
    input order regardless of completion order."""
    items = list(items)
    if parallelism <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(fn, items))
