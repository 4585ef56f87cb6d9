"""Gateway to a configurable ensemble of chat-completion endpoints.

The gateway enforces the query budget (reserve-then-call: a reservation is
consumption, so the cap can never be overrun by races or retries), fans
completions out round-robin across endpoints, and converts prompt bundles
into the provider message schema, with images as base64 data URLs.

The deterministic stub backend makes entire multi-generation runs
bit-reproducible: its response is a pure function of the prompt content
hash and the completion index, and the default response always parses,
embedding the first parent's code with exactly one mutated numeric literal.
"""

from __future__ import annotations

import base64
import hashlib
import io
import os
import re
import threading
from dataclasses import dataclass, field

from mles.errors import BudgetExhausted, EndpointFailure, ImageUnsupported
from mles.operators import (
    IBE_IMAGE,
    ImageSegment,
    Operator,
    PromptBundle,
    TextSegment,
    extract_code_region,
)

MAX_IMAGE_BYTES = 1 << 20  # provider cap; larger images are downscaled


@dataclass
class BudgetLedger:
    """Monotone counters for LLM queries and environment resets.

    Reservations are serialized and count as consumption; an attempt past a
    cap raises before anything is consumed, which is what halts the run.
    """

    query_budget: int
    reset_budget: int
    queries_used: int = 0
    resets_used: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def queries_remaining(self) -> int:
        return self.query_budget - self.queries_used

    @property
    def resets_remaining(self) -> int:
        return self.reset_budget - self.resets_used

    def reserve_queries(self, k: int) -> None:
        if k < 0:
            raise ValueError("k must be non-negative")
        with self._lock:
            if self.queries_used + k > self.query_budget:
                raise BudgetExhausted(
                    f"need {k} queries, {self.query_budget - self.queries_used} remaining"
                )
            self.queries_used += k

    def reserve_resets(self, n: int) -> None:
        if n < 0:
            raise ValueError("n must be non-negative")
        with self._lock:
            if self.resets_used + n > self.reset_budget:
                raise BudgetExhausted(
                    f"need {n} resets, {self.reset_budget - self.resets_used} remaining"
                )
            self.resets_used += n


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str
    model_name: str
    api_key_env_var: str
    supports_images: bool = True


@dataclass(frozen=True)
class GatewayConfig:
    endpoints: tuple[EndpointConfig, ...]
    temperature: float = 1.0
    max_retries: int = 3
    request_timeout: float = 60.0

    def __post_init__(self) -> None:
        if not self.endpoints:
            raise ValueError("at least one endpoint is required")


def bundle_hash(bundle: PromptBundle) -> str:
    """Stable content hash of a bundle (text plus image references)."""
    h = hashlib.sha256()
    for seg in bundle.segments:
        if isinstance(seg, TextSegment):
            h.update(b"T")
            h.update(seg.text.encode("utf-8"))
        else:
            h.update(b"I")
            h.update(seg.ref.content_ref.encode("utf-8"))
    return h.hexdigest()


def bundle_to_messages(bundle: PromptBundle, load_image) -> list[dict]:
    """Provider chat schema: one user message with text and image parts."""
    content: list[dict] = []
    for seg in bundle.segments:
        if isinstance(seg, TextSegment):
            content.append({"type": "text", "text": seg.text})
        else:
            data = load_image(seg.ref.content_ref)
            data = _cap_image(data)
            b64 = base64.b64encode(data).decode("ascii")
            media = seg.ref.media_type or "image/png"
            content.append(
                {"type": "image_url", "image_url": {"url": f"data:{media};base64,{b64}"}}
            )
    return [{"role": "user", "content": content}]


def _cap_image(data: bytes) -> bytes:
    """Downscale images over the provider size cap (halving until they fit)."""
    if len(data) <= MAX_IMAGE_BYTES:
        return data
    from PIL import Image

    img = Image.open(io.BytesIO(data))
    while True:
        img = img.resize((max(1, img.width // 2), max(1, img.height // 2)))
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        if buf.tell() <= MAX_IMAGE_BYTES or (img.width == 1 and img.height == 1):
            return buf.getvalue()


class StubBackend:
    """Deterministic offline backend.

    ``seed_table`` maps a bundle hash to either a fixed response string or a
    callable ``(bundle, index) -> str``; unknown hashes fall back to the
    default template-conforming response.
    """

    supports_images = True
    name = "stub"

    def __init__(self, seed_table: dict | None = None):
        self.seed_table = dict(seed_table or {})

    def complete(self, bundle: PromptBundle, index: int, *, temperature: float, timeout: float) -> str:
        key = bundle_hash(bundle)
        if key in self.seed_table:
            entry = self.seed_table[key]
            return entry(bundle, index) if callable(entry) else str(entry)
        return _default_stub_response(bundle, key, index)


def _default_stub_response(bundle: PromptBundle, key: str, index: int) -> str:
    text = bundle.text
    match = re.search(r"^[ \t]*def[ \t]+([A-Za-z_]\w*)[ \t]*\(", text, re.MULTILINE)
    salt = hashlib.sha256(f"{key}:{index}".encode()).hexdigest()
    if match is None:
        return (
            f"The execution trace shows the policy's behavior over the episode. "
            f"Observed pattern signature {salt[:12]}: the agent follows its "
            f"control rule with visible drift near the end of the trace."
        )
    code = extract_code_region(text, match.group(1)) or ""
    mutated = _mutate_one_literal(code, salt)
    op = bundle.operator
    parts = []
    if op.wants_sections:
        parts.append(f"'The execution trace {salt[:10]} shows the policy behavior in detail.'")
        parts.append(f"[The control gains look mistuned; evidence {salt[10:18]} suggests overshoot.]")
    parts.append(f"{{Adjusted variant {salt[:8]} of the parent control rule.}}")
    parts.append("```python\n" + mutated + "\n```")
    return "\n".join(parts)


def _mutate_one_literal(code: str, salt: str) -> str:
    """Replace exactly one numeric literal, deterministically chosen."""
    literals = list(re.finditer(r"(?<![\w.])(\d+\.\d+|\d+)(?![\w.])", code))
    if not literals:
        return code + f"\n# variant {salt[:8]}"
    pick = literals[int(salt[:8], 16) % len(literals)]
    token = pick.group(1)
    if "." in token:
        new = f"{float(token) * 1.1 + 0.01:.4f}"
    else:
        new = str(int(token) + 1)
    return code[: pick.start(1)] + new + code[pick.end(1) :]


class HttpBackend:
    """OpenAI-compatible chat-completions endpoint over HTTP."""

    def __init__(self, endpoint: EndpointConfig, load_image):
        self.endpoint = endpoint
        self.supports_images = endpoint.supports_images
        self.name = endpoint.model_name
        self._load_image = load_image
        key = os.environ.get(endpoint.api_key_env_var, "")
        if not key:
            raise KeyError(endpoint.api_key_env_var)
        self._headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

    def complete(self, bundle: PromptBundle, index: int, *, temperature: float, timeout: float) -> str:
        import httpx

        payload = {
            "model": self.endpoint.model_name,
            "temperature": temperature,
            "messages": bundle_to_messages(bundle, self._load_image),
        }
        url = self.endpoint.base_url.rstrip("/") + "/chat/completions"
        resp = httpx.post(url, json=payload, headers=self._headers, timeout=timeout)
        resp.raise_for_status()
        return resp.json()["choices"][0]["message"]["content"]


class LlmGateway:
    """Round-robin fan-out over backends with per-slot retry."""

    def __init__(self, backends: list, config: GatewayConfig):
        if not backends:
            raise ValueError("gateway needs at least one backend")
        self.backends = list(backends)
        self.config = config
        self._cursor = 0
        self._lock = threading.Lock()

    @classmethod
    def stub(cls, seed_table: dict | None = None, **config_kwargs) -> "LlmGateway":
        cfg = GatewayConfig(
            endpoints=(EndpointConfig("stub://", "stub", "MLES_STUB_KEY", True),),
            **config_kwargs,
        )
        return cls([StubBackend(seed_table)], cfg)

    def _pick(self, needs_images: bool) -> object:
        capable = [b for b in self.backends if not needs_images or b.supports_images]
        if not capable:
            raise ImageUnsupported("bundle carries images but no endpoint supports them")
        with self._lock:
            idx = self._cursor
            self._cursor += 1
        return capable[idx % len(capable)]

    def generate(self, bundle: PromptBundle, k: int, budget: BudgetLedger) -> list:
        """Produce k completions for one bundle.

        Reserves k queries up front (raising BudgetExhausted before any call
        when the budget cannot cover them). Transport failures are retried up
        to ``max_retries`` per slot without consuming extra budget; a slot
        that exhausts retries yields an EndpointFailure instance in its
        position, leaving the other slots unaffected.
        """
        if k < 1:
            raise ValueError("k must be positive")
        needs_images = bundle.has_images
        if needs_images and not any(b.supports_images for b in self.backends):
            raise ImageUnsupported("bundle carries images but no endpoint supports them")
        budget.reserve_queries(k)
        results: list = []
        for i in range(k):
            attempts = 0
            last_error: Exception | None = None
            while attempts < max(1, self.config.max_retries):
                backend = self._pick(needs_images)
                try:
                    results.append(
                        backend.complete(
                            bundle,
                            i,
                            temperature=self.config.temperature,
                            timeout=self.config.request_timeout,
                        )
                    )
                    break
                except (ImageUnsupported, BudgetExhausted):
                    raise
                except Exception as exc:  # transport/provider failure: retry
                    last_error = exc
                    attempts += 1
            else:
                results.append(
                    EndpointFailure(f"slot {i} failed after {attempts} attempts: {last_error}")
                )
        return results
