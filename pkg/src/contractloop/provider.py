"""Prompt rendering, model backends, wrapper parsing and the repair-retry loop."""

from __future__ import annotations

import enum
import hashlib
import json
import re
import time
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence, Union

import httpx

from .config import BudgetPolicy, Config
from .contracts import AnnotatedSource, CodeMutation, SyntaxFailure, validate_syntax
from .verifier import EvidenceBundle

# Characters of a rejected response quoted back in a repair prompt.
REPAIR_QUOTE_CHARS = 500

PLACEHOLDER = re.compile(r"\{\{([A-Z_]+)\}\}")


class TemplateError(ValueError):
    pass


class TransportError(RuntimeError):
    def __init__(self, message: str, status_code: Optional[int] = None):
        super().__init__(message)
        self.status_code = status_code


class FixtureMiss(LookupError):
    def __init__(self, digest: str, where: str):
        super().__init__(f"no replay fixture {digest}.json in {where}")
        self.digest = digest


class PromptKind(str, enum.Enum):
    GENERATION = "GENERATION"
    REFINEMENT = "REFINEMENT"


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")

    @property
    def total(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(self.prompt_tokens + other.prompt_tokens, self.completion_tokens + other.completion_tokens)


@dataclass(frozen=True)
class PromptRequest:
    kind: PromptKind
    system_text: str
    user_text: str
    model_id: str
    temperature: float


@dataclass(frozen=True)
class ModelResponse:
    raw_text: str
    usage: TokenUsage = field(default_factory=TokenUsage)
    latency_s: float = 0.0


@dataclass(frozen=True)
class TemplateSet:
    """Prompt templates with ``{{NAME}}`` placeholders."""

    generation_system: str
    generation_user: str
    refinement_system: str
    refinement_user: str
    repair: str

    @classmethod
    def load(cls, directory: Union[str, Path, None] = None) -> "TemplateSet":
        if directory is None:
            root = resources.files("contractloop") / "templates"
            read = lambda name: (root / f"{name}.txt").read_text(encoding="utf-8")  # noqa: E731
        else:
            read = lambda name: (Path(directory) / f"{name}.txt").read_text(encoding="utf-8")  # noqa: E731
        try:
            return cls(**{name: read(name) for name in cls.__dataclass_fields__})
        except FileNotFoundError as exc:
            raise TemplateError(f"missing template file: {exc.filename}") from exc


def render_template(template: str, **values: str) -> str:
    wanted = set(PLACEHOLDER.findall(template))
    missing = set(values) - wanted
    if missing:
        raise TemplateError(f"template has no placeholder for {', '.join(sorted(missing))}")
    unfilled = wanted - set(values)
    if unfilled:
        raise TemplateError(f"no value for placeholder(s) {', '.join(sorted(unfilled))}")
    return PLACEHOLDER.sub(lambda m: values[m.group(1)], template)


def render_generation_prompt(target_source: str, templates: TemplateSet, cfg: Config) -> PromptRequest:
    if not target_source.strip():
        raise TemplateError("target source is empty")
    return PromptRequest(
        kind=PromptKind.GENERATION,
        system_text=render_template(templates.generation_system),
        user_text=render_template(templates.generation_user, TARGET_SOURCE=target_source.rstrip("\n")),
        model_id=cfg.model_id,
        temperature=cfg.temperature,
    )


def render_refinement_prompt(
    current: AnnotatedSource, evidence: EvidenceBundle, cfg: Config, templates: Optional[TemplateSet] = None
) -> PromptRequest:
    if not evidence.counterexamples:
        raise ValueError("refinement needs at least one counterexample")
    templates = templates or TemplateSet.load()
    return PromptRequest(
        kind=PromptKind.REFINEMENT,
        system_text=render_template(templates.refinement_system),
        user_text=render_template(
            templates.refinement_user,
            ANNOTATED_SOURCE=current.source_text.rstrip("\n"),
            EVIDENCE=evidence.render(),
        ),
        model_id=cfg.model_id,
        temperature=cfg.temperature,
    )


def render_repair_prompt(request: PromptRequest, defect: str, offending: str, templates: TemplateSet) -> PromptRequest:
    """Original request plus a note naming the defect; never cumulative."""
    note = render_template(templates.repair, DEFECT=defect, OFFENDING=offending[:REPAIR_QUOTE_CHARS])
    return replace(request, user_text=f"{request.user_text.rstrip()}\n\n{note}")


# -- wrapper parsing ---------------------------------------------------------

class FormatDefect(str, enum.Enum):
    NO_BLOCK = "NoBlock"
    MULTIPLE_BLOCKS = "MultipleBlocks"
    EMPTY_BLOCK = "EmptyBlock"


class FormatError(ValueError):
    def __init__(self, defect: FormatDefect, detail: str = ""):
        super().__init__(f"{defect.value}: {detail}" if detail else defect.value)
        self.defect = defect
        self.detail = detail


_FENCE_OPEN = re.compile(r"^[ \t]*```[\w+.-]*[ \t]*$")
_FENCE_CLOSE = re.compile(r"^[ \t]*```[ \t]*$")


def parse_wrapper(raw_text: str) -> str:
    """Return the interior of the single fenced code block in ``raw_text``."""
    blocks: list[str] = []
    inside: Optional[list[str]] = None
    for line in raw_text.splitlines(keepends=True):
        bare = line.rstrip("\r\n")
        if inside is None:
            if _FENCE_OPEN.match(bare):
                inside = []
        elif _FENCE_CLOSE.match(bare):
            blocks.append("".join(inside))
            inside = None
        else:
            inside.append(line)
    if not blocks:
        detail = "a code fence was opened but never closed" if inside is not None else "no ``` fenced code block found"
        raise FormatError(FormatDefect.NO_BLOCK, detail)
    if len(blocks) > 1:
        raise FormatError(FormatDefect.MULTIPLE_BLOCKS, f"found {len(blocks)} fenced code blocks, expected exactly one")
    if not blocks[0].strip():
        raise FormatError(FormatDefect.EMPTY_BLOCK, "the fenced code block is empty")
    return blocks[0]


# -- backends ----------------------------------------------------------------

class Backend(Protocol):
    def complete(self, request: PromptRequest) -> ModelResponse: ...


def normalize_prompt(text: str) -> str:
    lines = text.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    return "\n".join(line.rstrip() for line in lines).strip()


def fixture_digest(request: PromptRequest) -> str:
    payload = f"{request.kind.value}\n{normalize_prompt(request.user_text)}"
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:24]


def write_fixture(directory: Path, request: PromptRequest, response_text: str, usage: TokenUsage) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{fixture_digest(request)}.json"
    record = {
        "kind": request.kind.value,
        "response_text": response_text,
        "prompt_tokens": usage.prompt_tokens,
        "completion_tokens": usage.completion_tokens,
    }
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


class ReplayBackend:
    """Serves recorded responses from ``<digest>.json`` files."""

    def __init__(self, fixtures_dir: Union[str, Path]):
        self.fixtures_dir = Path(fixtures_dir)
        if not self.fixtures_dir.is_dir():
            raise FileNotFoundError(f"fixture directory {self.fixtures_dir} does not exist")
        self._records = {}
        for path in sorted(self.fixtures_dir.glob("*.json")):
            data = json.loads(path.read_text(encoding="utf-8"))
            self._records[path.stem] = ModelResponse(
                raw_text=data["response_text"],
                usage=TokenUsage(int(data.get("prompt_tokens", 0)), int(data.get("completion_tokens", 0))),
            )

    def complete(self, request: PromptRequest) -> ModelResponse:
        digest = fixture_digest(request)
        try:
            return self._records[digest]
        except KeyError:
            raise FixtureMiss(digest, str(self.fixtures_dir)) from None


class ScriptedBackend:
    """Returns canned responses in order, whatever the request. Records requests."""

    def __init__(self, responses: Sequence[Union[str, ModelResponse]]):
        self._responses = [r if isinstance(r, ModelResponse) else ModelResponse(r) for r in responses]
        self.requests: list[PromptRequest] = []

    def complete(self, request: PromptRequest) -> ModelResponse:
        if len(self.requests) >= len(self._responses):
            raise FixtureMiss(fixture_digest(request), "scripted response list (exhausted)")
        self.requests.append(request)
        return self._responses[len(self.requests) - 1]


class RecordingBackend:
    """Wraps another backend and saves every exchange as a replay fixture."""

    def __init__(self, inner: Backend, fixtures_dir: Union[str, Path]):
        self.inner = inner
        self.fixtures_dir = Path(fixtures_dir)

    def complete(self, request: PromptRequest) -> ModelResponse:
        response = self.inner.complete(request)
        write_fixture(self.fixtures_dir, request, response.raw_text, response.usage)
        return response


class _HttpBackend:
    url: str

    def __init__(self, api_key: str, base_url: Optional[str] = None, timeout_s: float = 120.0,
                 client: Optional[httpx.Client] = None, max_tokens: int = 4096):
        self.api_key = api_key
        if base_url:
            self.url = base_url
        self.max_tokens = max_tokens
        self._client = client or httpx.Client(timeout=timeout_s)

    def _post(self, headers: dict, body: dict) -> dict:
        try:
            resp = self._client.post(self.url, headers=headers, json=body)
        except httpx.HTTPError as exc:
            raise TransportError(f"{type(self).__name__}: {exc}") from exc
        if resp.status_code >= 400:
            try:
                detail = resp.json().get("error", {})
                message = detail.get("message") if isinstance(detail, dict) else str(detail)
            except (ValueError, AttributeError):
                message = None
            raise TransportError(
                f"{type(self).__name__}: HTTP {resp.status_code}: {message or resp.text[:300]}", resp.status_code
            )
        try:
            return resp.json()
        except ValueError as exc:
            raise TransportError(f"{type(self).__name__}: response is not JSON") from exc


class OpenAIChatBackend(_HttpBackend):
    url = "https://api.openai.com/v1/chat/completions"

    def complete(self, request: PromptRequest) -> ModelResponse:
        data = self._post(
            {"Authorization": f"Bearer {self.api_key}"},
            {
                "model": request.model_id,
                "temperature": request.temperature,
                "messages": [
                    {"role": "system", "content": request.system_text},
                    {"role": "user", "content": request.user_text},
                ],
            },
        )
        try:
            text = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"unexpected OpenAI response shape: {str(data)[:300]}") from exc
        usage = data.get("usage") or {}
        return ModelResponse(text, TokenUsage(usage.get("prompt_tokens", 0), usage.get("completion_tokens", 0)))


class AnthropicMessagesBackend(_HttpBackend):
    url = "https://api.anthropic.com/v1/messages"

    def complete(self, request: PromptRequest) -> ModelResponse:
        data = self._post(
            {"x-api-key": self.api_key, "anthropic-version": "2023-06-01"},
            {
                "model": request.model_id,
                "max_tokens": self.max_tokens,
                "temperature": request.temperature,
                "system": request.system_text,
                "messages": [{"role": "user", "content": request.user_text}],
            },
        )
        try:
            text = "".join(part.get("text", "") for part in data["content"] if part.get("type") == "text")
        except (KeyError, TypeError, AttributeError) as exc:
            raise TransportError(f"unexpected Anthropic response shape: {str(data)[:300]}") from exc
        usage = data.get("usage") or {}
        return ModelResponse(text, TokenUsage(usage.get("input_tokens", 0), usage.get("output_tokens", 0)))


def make_backend(cfg: Config) -> Backend:
    if cfg.provider_id == "replay":
        if cfg.fixtures_dir is None:
            raise ValueError("replay provider needs a fixtures directory")
        return ReplayBackend(cfg.fixtures_dir)
    if cfg.provider_id == "openai":
        return OpenAIChatBackend(cfg.api_key or "")
    if cfg.provider_id == "anthropic":
        return AnthropicMessagesBackend(cfg.api_key or "")
    raise ValueError(f"unknown provider {cfg.provider_id!r}")


def complete(request: PromptRequest, backend: Backend) -> ModelResponse:
    """Call ``backend`` and stamp the wall-clock latency on the response."""
    start = time.monotonic()
    response = backend.complete(request)
    return replace(response, latency_s=time.monotonic() - start)


# -- generation with repair --------------------------------------------------

@dataclass(frozen=True)
class Exchange:
    """One backend call: what was sent and what came back."""

    request: PromptRequest
    response: ModelResponse
    is_repair: bool
    defect: Optional[str] = None


class RetriesExhausted(RuntimeError):
    def __init__(self, last_error: object, exchanges: list[Exchange]):
        super().__init__(f"no usable response after {len(exchanges)} call(s); last defect: {last_error}")
        self.last_error = last_error
        self.exchanges = exchanges


@dataclass(frozen=True)
class Generation:
    annotated: AnnotatedSource
    exchanges: tuple[Exchange, ...]


Acceptor = Callable[[AnnotatedSource], Optional[CodeMutation]]


def _defect_text(error: object) -> str:
    if isinstance(error, FormatError):
        return f"FormatError {error.defect.value}: {error.detail}"
    if isinstance(error, SyntaxFailure):
        return f"the code block is not valid Python. {error}"
    if isinstance(error, CodeMutation):
        return f"CodeMutation: you changed the program, not only the contracts; {error}"
    return str(error)


def generate_with_retries(
    request: PromptRequest,
    backend: Backend,
    budget: BudgetPolicy,
    accept: Optional[Acceptor] = None,
    templates: Optional[TemplateSet] = None,
) -> Generation:
    """Ask for annotated code, re-prompting with a repair note on each defect.

    A response is usable once its wrapper parses, the code is valid Python and
    ``accept`` (if given) raises no objection. At most
    ``1 + budget.max_format_retries`` backend calls are made.
    """
    templates = templates or TemplateSet.load()
    exchanges: list[Exchange] = []
    current = request
    last_error: object = None
    for attempt in range(budget.max_format_retries + 1):
        response = complete(current, backend)
        error: object = None
        annotated = None
        try:
            code = parse_wrapper(response.raw_text)
        except FormatError as exc:
            error = exc
        else:
            error = validate_syntax(code)
            if error is None:
                annotated = AnnotatedSource.from_text(code)
                if accept is not None:
                    error = accept(annotated)
        exchanges.append(Exchange(current, response, is_repair=attempt > 0, defect=_defect_text(error) if error else None))
        if error is None and annotated is not None:
            return Generation(annotated, tuple(exchanges))
        last_error = error
        current = render_repair_prompt(request, _defect_text(error), response.raw_text, templates)
    raise RetriesExhausted(last_error, exchanges)
