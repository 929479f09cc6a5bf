"""Prompt construction, model endpoints and structured-response parsing."""

from __future__ import annotations

import hashlib
import json
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import httpx

from .labels import LABEL_NAMES, LABELS

ZERO_SHOT = "zero_shot"
FEW_SHOT = "few_shot"
EXPLAINABLE = "explainable"
STRATEGIES = (ZERO_SHOT, FEW_SHOT, EXPLAINABLE)

LOGIT_TOLERANCE = 0.01
DEFAULT_TIMEOUT = 60.0
DEFAULT_RETRIES = 2


class ConfigError(ValueError):
    """Invalid strategy, endpoint descriptor or prompt configuration."""


class EndpointError(RuntimeError):
    """Transport failure talking to a model endpoint."""


class ParseError(ValueError):
    def __init__(self, reason: str, raw: str):
        super().__init__(reason)
        self.reason = reason
        self.raw = raw


# ---------------------------------------------------------------- prompts

@dataclass(frozen=True)
class Demonstration:
    text: str
    label: str
    confidence: float
    logits: Mapping[str, float]


@lru_cache(maxsize=1)
def _default_pool() -> dict[str, tuple[Demonstration, ...]]:
    raw = json.loads(resources.files("conflict_audit").joinpath("data/fewshot_pool.json").read_text("utf-8"))
    return {lab: tuple(Demonstration(**d) for d in raw[lab]) for lab in LABELS}


def load_example_pool(path: str | Path | None = None) -> dict[str, tuple[Demonstration, ...]]:
    if path is None:
        return _default_pool()
    raw = json.loads(Path(path).read_text("utf-8"))
    return {lab: tuple(Demonstration(**d) for d in raw.get(lab, [])) for lab in LABELS}


@dataclass(frozen=True)
class StrategyConfig:
    kind: str = ZERO_SHOT
    examples_per_category: int = 3
    example_pool: Mapping[str, Sequence[Demonstration]] | None = None
    options: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.kind!r}")
        if not 1 <= self.examples_per_category <= 5:
            raise ConfigError("examples_per_category must be between 1 and 5")

    @property
    def shots(self) -> int:
        return self.examples_per_category if self.kind == FEW_SHOT else 0

    @property
    def pool(self) -> Mapping[str, Sequence[Demonstration]]:
        return self.example_pool if self.example_pool is not None else _default_pool()

    @classmethod
    def from_env(cls, kind: str | None = None, shots: int | None = None,
                 env: Mapping[str, str] | None = None) -> "StrategyConfig":
        """Explicit arguments win; STRATEGY and NUM_EXAMPLES fill the gaps."""
        env = os.environ if env is None else env
        kind = kind or env.get("STRATEGY") or ZERO_SHOT
        if shots is None:
            try:
                shots = int(env.get("NUM_EXAMPLES", 3))
            except ValueError as exc:
                raise ConfigError(f"NUM_EXAMPLES is not an integer: {env.get('NUM_EXAMPLES')!r}") from exc
        return cls(kind, shots)


@dataclass(frozen=True)
class Prompt:
    user: str
    system: str | None = None

    def messages(self) -> list[dict[str, str]]:
        msgs = [{"role": "system", "content": self.system}] if self.system else []
        msgs.append({"role": "user", "content": self.user})
        return msgs


_CATEGORY_BLOCK = "\n".join(f"- {code} = {LABEL_NAMES[code]}" for code in LABELS)

_ZERO_SHOT = f"""You are an expert political conflict event analyst.

Classify the following event into one of six categories: {{event}}

Categories (use ONLY these single-letter codes):
{_CATEGORY_BLOCK}

Return ONLY valid JSON with this structure:
{{{{
    "label": "<V, B, E, P, R, or S>",
    "confidence": <decimal between 0 and 1>,
    "logits": {{{{"V": <num>, "B": <num>, "E": <num>, 
                "P": <num>, "R": <num>, "S": <num>}}}}
}}}}

CRITICAL: The "label" field must be exactly one of: V, B, E, P, R, S
Do not use numbers, full words, or any other values.

Additional requirements for `logits`:
- Each value in the `logits` object must be a decimal probability between 0 and 1.
- The six logits (V, B, E, P, R, S) must sum to 1.0.
"""

_FEW_SHOT = """Examples:

{examples}
--- Now classify the following event in the same format ---
Final Answer: JSON matching the examples above.

Return ONLY valid JSON with this structure:
{{
    "label": "<V, B, E, P, R, or S>",
    "confidence": <decimal between 0 and 1>,
    "logits": {{
        "V": <num>, "B": <num>, "E": <num>,
        "P": <num>, "R": <num>, "S": <num>
    }}
}}

Additional requirements for `logits`:
- Each value must be between 0 and 1.
- The six logits must sum to 1.0.

Event: {event}
"""

_FEW_SHOT_SYSTEM = f"""You are an expert political conflict event analyst.
Classify events into one of six categories:
{_CATEGORY_BLOCK}

Return JSON with label, confidence (0-1), and logits."""

_EXPLAINABLE = f"""You are an expert political conflict event analyst.

Classify the following event into one of six categories: {{event}}

Categories (use ONLY these single-letter codes):
{_CATEGORY_BLOCK}

Step 1 - Brief structured reasoning (exactly three short items):
- Provide three numbered, one-line observations:
  1. Key actors (who)
  2. Key actions (what)
  3. Category rationale (why)
- Each observation must be at most 20 words.
- No extra commentary.

Step 2 - Final answer (valid JSON only):
Return ONLY valid JSON with this structure:
{{{{
    "reasoning": [<three strings>],
    "label": "<V, B, E, P, R, or S>",
    "confidence": <decimal between 0 and 1>,
    "logits": {{{{
        "V": <num>, "B": <num>, "E": <num>,
        "P": <num>, "R": <num>, "S": <num>
    }}}}
}}}}

CRITICAL: "label" must be exactly one of V, B, E, P, R, S.

Additional requirements for `logits`:
- Each value must be between 0 and 1.
- The six logits must sum to 1.0.
"""

_EXPLAINABLE_SYSTEM = ("You are an expert political conflict event analyst. "
                       "Always explain your reasoning step-by-step before classification.")


def _demonstrations(cfg: StrategyConfig) -> str:
    lines: list[str] = []
    pool = cfg.pool
    for lab in LABELS:
        items = list(pool.get(lab, ()))
        if len(items) < cfg.examples_per_category:
            raise ConfigError(f"example pool has {len(items)} items for {lab}, "
                              f"need {cfg.examples_per_category}")
        for d in items[:cfg.examples_per_category]:
            out = {"label": d.label, "confidence": d.confidence, "logits": dict(d.logits)}
            lines += [f"Event: {d.text}", json.dumps(out), ""]
    return "\n".join(lines)


def build_prompt(notes: str, cfg: StrategyConfig) -> Prompt:
    """Prompt text (and system message, if the strategy has one) for one event."""
    if cfg.kind == ZERO_SHOT:
        return Prompt(_ZERO_SHOT.format(event=notes))
    if cfg.kind == FEW_SHOT:
        return Prompt(_FEW_SHOT.format(examples=_demonstrations(cfg), event=notes), _FEW_SHOT_SYSTEM)
    return Prompt(_EXPLAINABLE.format(event=notes), _EXPLAINABLE_SYSTEM)


def response_schema(kind: str) -> dict:
    num = {"type": "number"}
    props: dict = {
        "label": {"type": "string", "enum": list(LABELS)},
        "confidence": num,
        "logits": {"type": "object", "properties": {lab: num for lab in LABELS}},
    }
    required = ["label", "confidence"]
    if kind == EXPLAINABLE:
        props = {"reasoning": {"type": "array", "items": {"type": "string"}}, **props}
        required = ["reasoning", "label", "confidence", "logits"]
    elif kind == FEW_SHOT:
        required = ["label", "confidence", "logits"]
    return {"type": "object", "properties": props, "required": required}


# ---------------------------------------------------------------- parsing

@dataclass(frozen=True)
class ParsedResponse:
    label: str
    confidence: float
    logits: dict[str, float]
    rationale: tuple[str, ...] | None = None
    flags: tuple[str, ...] = ()


def _first_object(raw: str) -> dict | None:
    decoder = json.JSONDecoder()
    start = raw.find("{")
    while start != -1:
        try:
            obj, _ = decoder.raw_decode(raw, start)
        except json.JSONDecodeError:
            obj = None
        if isinstance(obj, dict):
            return obj
        start = raw.find("{", start + 1)
    return None


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def parse_response(raw: str, kind: str) -> ParsedResponse:
    """Validate the first JSON object in ``raw`` against the strategy's contract.

    Logits within 0.01 of summing to one are renormalized; anything further off
    is rejected. A zero-shot reply without logits gets a distribution that puts
    the stated confidence on the label and spreads the rest evenly.
    """
    obj = _first_object(raw or "")
    if obj is None:
        raise ParseError("no_json_object", raw)
    label = obj.get("label")
    if not isinstance(label, str) or label not in LABELS:
        raise ParseError("invalid_label", raw)
    conf = obj.get("confidence")
    if not _is_number(conf) or not 0.0 <= conf <= 1.0:
        raise ParseError("confidence_out_of_range", raw)
    conf = float(conf)

    flags: list[str] = []
    logits = obj.get("logits")
    if logits is None:
        if kind != ZERO_SHOT:
            raise ParseError("missing_logits", raw)
        rest = (1.0 - conf) / (len(LABELS) - 1)
        logits = {lab: (conf if lab == label else rest) for lab in LABELS}
        flags.append("logits_synthesized")
    else:
        if not isinstance(logits, dict) or set(logits) != set(LABELS):
            raise ParseError("logits_incomplete", raw)
        if not all(_is_number(v) and 0.0 <= v <= 1.0 for v in logits.values()):
            raise ParseError("logit_out_of_range", raw)
        total = float(sum(logits.values()))
        if abs(total - 1.0) > LOGIT_TOLERANCE:
            raise ParseError("logits_sum", raw)
        if total != 1.0:
            flags.append("logits_renormalized")
        logits = {lab: float(logits[lab]) / total for lab in LABELS}

    rationale = None
    if kind == EXPLAINABLE:
        reasoning = obj.get("reasoning")
        if not isinstance(reasoning, list) or len(reasoning) != 3 \
                or not all(isinstance(s, str) for s in reasoning):
            raise ParseError("rationale_arity", raw)
        rationale = tuple(reasoning)
    return ParsedResponse(label, conf, logits, rationale, tuple(flags))


# ---------------------------------------------------------------- predictions

def input_hash(notes: str) -> str:
    return hashlib.sha256(notes.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class Prediction:
    event_id: str
    model_id: str
    strategy: str
    shots: int
    label: str
    confidence: float
    logits: Mapping[str, float]
    rationale: tuple[str, ...] | None = None
    raw_response: str = ""
    input_hash: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["logits"] = {lab: self.logits[lab] for lab in LABELS}
        d["rationale"] = list(self.rationale) if self.rationale is not None else None
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Prediction":
        d = dict(d)
        if d.get("rationale") is not None:
            d["rationale"] = tuple(d["rationale"])
        return cls(**d)


@dataclass(frozen=True)
class ClassificationFailure:
    event_id: str
    model_id: str
    reason: str
    raw_response: str


def write_predictions(preds: Iterable[Prediction], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for p in preds:
            fh.write(json.dumps(p.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")


def read_predictions(path: str | Path) -> list[Prediction]:
    with Path(path).open(encoding="utf-8") as fh:
        return [Prediction.from_dict(json.loads(line)) for line in fh if line.strip()]


# ---------------------------------------------------------------- endpoints

@dataclass(frozen=True)
class Request:
    model_id: str
    event_id: str
    notes: str
    kind: str
    prompt: Prompt
    schema: dict


class Endpoint(Protocol):
    def respond(self, request: Request) -> str: ...

    def check(self) -> None: ...


class ChatEndpoint:
    """Chat-completion server speaking the /api/chat wire format."""

    def __init__(self, url: str, timeout: float = DEFAULT_TIMEOUT, retries: int = DEFAULT_RETRIES,
                 options: Mapping[str, object] | None = None, client: httpx.Client | None = None):
        self.url = url
        self.retries = retries
        self.options = dict(options or {})
        self._client = client or httpx.Client(timeout=timeout)

    def payload(self, request: Request) -> dict:
        return {
            "model": request.model_id,
            "messages": request.prompt.messages(),
            "stream": False,
            "format": request.schema,
            "options": {**self.options, "temperature": 0.0},
        }

    def respond(self, request: Request) -> str:
        body = self.payload(request)
        last: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                resp = self._client.post(self.url, json=body)
            except httpx.TransportError as exc:
                last = exc
                continue
            if resp.status_code >= 400:
                raise EndpointError(f"{self.url} returned HTTP {resp.status_code}")
            try:
                return resp.json()["message"]["content"]
            except (ValueError, KeyError, TypeError):
                # A malformed envelope is a parse problem, not a transport one.
                return resp.text
        raise EndpointError(f"{self.url}: {last}")

    def check(self) -> None:
        try:
            self._client.get(self.url)
        except httpx.TransportError as exc:
            raise EndpointError(f"endpoint unreachable: {self.url}: {exc}") from exc


def _unit(*parts: str) -> float:
    h = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big") / 2 ** 64


# Keyword cues for the offline mock, checked in this order.
_MOCK_CUES: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("E", ("bomb", "ied", "explo", "mortar", "rocket", "airstrike", "shelled", "detonat")),
    ("P", ("protest", "demonstrat", "marched", "sit-in", "rally")),
    ("R", ("riot", "mob", "looted", "vandali", "angry youths")),
    ("B", ("clash", "fought", "exchanged fire", "engaged", "ambush", "repulsed", "battle")),
    ("V", ("killed", "shot", "abduct", "kidnap", "tortur", "beat", "civilian", "burned")),
    ("S", ("arrest", "curfew", "patrol", "deploy", "checkpoint", "recruit", "agreement")),
)


class MockEndpoint:
    """Deterministic offline model.

    Labels come from ``rules`` (substring -> label, first hit wins), then from a
    keyword heuristic. Per-(event, model) hash noise relabels a fraction of
    events, and a per-(text, model) hash relabels a smaller fraction so that
    rewording can flip a prediction. ``constant`` short-circuits all of this.
    """

    def __init__(self, constant: str | None = None, confidence: float = 0.9,
                 noise: float = 0.15, text_sensitivity: float = 0.08,
                 rules: Mapping[str, str] | None = None):
        if constant is not None and constant not in LABELS:
            raise ConfigError(f"mock constant label must be one of {LABELS}")
        self.constant = constant
        self.confidence = confidence
        self.noise = noise
        self.text_sensitivity = text_sensitivity
        self.rules = dict(rules or {})

    def check(self) -> None:
        return None

    def decide(self, model_id: str, event_id: str, notes: str) -> tuple[str, float]:
        if self.constant is not None:
            return self.constant, self.confidence
        low = notes.lower()
        for cue, lab in self.rules.items():
            if cue.lower() in low:
                return lab, self.confidence
        label = "S"
        for lab, cues in _MOCK_CUES:
            if any(c in low for c in cues):
                label = lab
                break
        u = _unit("noise", model_id, event_id)
        if u < self.noise:
            label = LABELS[int(_unit("alt", model_id, event_id) * 6)]
        if _unit("text", model_id, notes) < self.text_sensitivity:
            label = LABELS[int(_unit("text-alt", model_id, notes) * 6)]
        conf = round(0.5 + 0.49 * _unit("conf", model_id, event_id), 4)
        return label, conf

    def respond(self, request: Request) -> str:
        label, conf = self.decide(request.model_id, request.event_id, request.notes)
        rest = 1.0 - conf
        weights = [_unit("w", request.model_id, request.event_id, lab) + 0.05
                   for lab in LABELS if lab != label]
        scale = rest / sum(weights)
        others = iter(round(w * scale, 4) for w in weights)
        logits = {lab: (conf if lab == label else next(others)) for lab in LABELS}
        out: dict = {"label": label, "confidence": conf, "logits": logits}
        if request.kind == EXPLAINABLE:
            words = request.notes.split()
            out = {"reasoning": [
                "Actors: " + " ".join(words[:6]),
                "Action: " + " ".join(words[:12]),
                f"Category {label}: consistent with {LABEL_NAMES[label].lower()}",
            ], **out}
        return json.dumps(out)


class ReplayEndpoint:
    """Serve stored raw responses as if they came from a live model."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._index: dict[tuple, str] | None = None
        self._lock = threading.Lock()

    def _load(self) -> dict[tuple, str]:
        with self._lock:
            if self._index is None:
                index: dict[tuple, str] = {}
                for p in read_predictions(self.path):
                    index.setdefault((p.model_id, p.event_id, p.input_hash), p.raw_response)
                self._index = index
        return self._index

    def check(self) -> None:
        if not self.path.is_file():
            raise EndpointError(f"replay file not found: {self.path}")

    def respond(self, request: Request) -> str:
        index = self._load()
        key = (request.model_id, request.event_id, input_hash(request.notes))
        if key in index:
            return index[key]
        fallback = (request.model_id, request.event_id, None)
        if fallback in index:
            return index[fallback]
        raise EndpointError(f"no stored response for {request.model_id}/{request.event_id}")


def make_endpoint(descriptor: str, timeout: float = DEFAULT_TIMEOUT,
                  retries: int = DEFAULT_RETRIES) -> Endpoint:
    """``mock``, ``mock:constant=B,confidence=0.9``, ``replay:<path>`` or an http(s) URL."""
    if descriptor.startswith(("http://", "https://")):
        return ChatEndpoint(descriptor, timeout=timeout, retries=retries)
    if descriptor.startswith("replay:"):
        return ReplayEndpoint(descriptor[len("replay:"):])
    if descriptor == "mock" or descriptor.startswith("mock:"):
        kwargs: dict = {}
        spec = descriptor[5:] if descriptor.startswith("mock:") else ""
        for part in filter(None, spec.split(",")):
            key, _, value = part.partition("=")
            if key == "constant":
                kwargs["constant"] = value
            elif key in ("confidence", "noise", "text_sensitivity"):
                try:
                    kwargs[key] = float(value)
                except ValueError as exc:
                    raise ConfigError(f"bad mock option {part!r}") from exc
            else:
                raise ConfigError(f"unknown mock option {key!r}")
        return MockEndpoint(**kwargs)
    raise ConfigError(f"unrecognized endpoint {descriptor!r}")


# ---------------------------------------------------------------- classification

def classify(event_id: str, notes: str, cfg: StrategyConfig, endpoint: Endpoint,
             model_id: str) -> Prediction:
    """One prediction; raises ParseError on an invalid reply, EndpointError on transport."""
    request = Request(model_id, event_id, notes, cfg.kind, build_prompt(notes, cfg),
                      response_schema(cfg.kind))
    raw = endpoint.respond(request)
    parsed = parse_response(raw, cfg.kind)
    return Prediction(event_id, model_id, cfg.kind, cfg.shots, parsed.label, parsed.confidence,
                      parsed.logits, parsed.rationale, raw, input_hash(notes))


def classify_batch(
    items: Sequence[tuple[str, str]],
    cfg: StrategyConfig,
    endpoint: Endpoint,
    model_id: str,
    parallelism: int = 4,
) -> tuple[list[Prediction], list[ClassificationFailure]]:
    """Classify (event_id, notes) pairs concurrently; output sorted by event_id."""

    def one(item):
        eid, notes = item
        try:
            return classify(eid, notes, cfg, endpoint, model_id)
        except ParseError as exc:
            return ClassificationFailure(eid, model_id, exc.reason, exc.raw)

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        results = list(pool.map(one, items))
    preds = sorted((r for r in results if isinstance(r, Prediction)), key=lambda p: p.event_id)
    fails = sorted((r for r in results if isinstance(r, ClassificationFailure)), key=lambda f: f.event_id)
    return preds, fails
