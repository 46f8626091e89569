"""OpenAI-compatible chat completion calls with a record/replay cache.

The cache is an append-only JSON-lines log keyed by a hash of
``(model_id, temperature, prompt text)``. In replay mode every request must
already be in the log; in live mode misses are fetched once and appended.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import threading
import time
from concurrent.futures import Future
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Protocol

import httpx

from pnb.errors import AuthMissing, CacheMissInReplayMode, EndpointError
from pnb.prompting import RenderedPrompt

log = logging.getLogger(__name__)

API_KEY_ENV = "PNB_API_KEY"
DEFAULT_URL = "https://api.openai.com/v1/chat/completions"
DEFAULT_MODEL = "gpt-3.5-turbo"


def request_key(model_id: str, temperature: float, prompt_text: str) -> str:
    blob = json.dumps([model_id, float(temperature), prompt_text], ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class LlmRequest:
    model_id: str
    temperature: float
    prompt: RenderedPrompt

    @property
    def request_key(self) -> str:
        return request_key(self.model_id, self.temperature, self.prompt.text)


@dataclass(frozen=True)
class LlmResponse:
    raw_text: str
    latency_ms: int
    from_cache: bool


class ResponseCache:
    """Append-only JSON-lines response log.

    Reads are served from memory. Appends are serialized under a lock and
    written with a single ``write`` on an ``O_APPEND`` descriptor, so a record
    is either fully present or absent. The cache also tracks in-flight keys so
    concurrent identical requests share one live call.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._records: dict[str, dict] = {}
        self._lock = threading.Lock()
        self._inflight: dict[str, Future] = {}
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    # A torn final line from an interrupted run; everything before it is intact.
                    log.warning("%s:%d: ignoring unreadable cache record", self.path, lineno)
                    continue
                self._records.setdefault(rec["key"], rec)

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, key: str) -> bool:
        return key in self._records

    def get(self, key: str) -> dict | None:
        return self._records.get(key)

    def append(self, record: dict) -> None:
        line = json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n"
        with self._lock:
            if record["key"] in self._records:
                return
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                fd = os.open(self.path, os.O_WRONLY | os.O_CREAT | os.O_APPEND, 0o644)
                try:
                    os.write(fd, line.encode("utf-8"))
                    os.fsync(fd)
                finally:
                    os.close(fd)
            self._records[record["key"]] = record

    def digest(self) -> str:
        """Order-independent hash of the cached key/response pairs."""
        h = hashlib.sha256()
        for key in sorted(self._records):
            h.update(key.encode())
            h.update(b"\0")
            h.update(self._records[key]["raw_text"].encode("utf-8"))
            h.update(b"\0")
        return h.hexdigest()


class ChatBackend(Protocol):
    def chat(self, model_id: str, temperature: float, prompt: str) -> str: ...


class ChatClient:
    """Minimal chat-completions client: one user message, bounded retries on 429/5xx."""

    def __init__(
        self,
        url: str = DEFAULT_URL,
        api_key: str | None = None,
        timeout_s: float = 60.0,
        max_retries: int = 5,
        backoff_s: float = 1.0,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        if not key.strip():
            raise AuthMissing(f"set {API_KEY_ENV} to call {url}")
        self.url = url
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self._sleep = sleep
        self._http = httpx.Client(
            timeout=timeout_s,
            transport=transport,
            headers={"Authorization": f"Bearer {key.strip()}"},
        )

    def close(self) -> None:
        self._http.close()

    def chat(self, model_id: str, temperature: float, prompt: str) -> str:
        payload = {
            "model": model_id,
            "temperature": temperature,
            "messages": [{"role": "user", "content": prompt}],
        }
        last: str = ""
        for attempt in range(self.max_retries + 1):
            try:
                resp = self._http.post(self.url, json=payload)
            except httpx.TransportError as exc:
                last = f"transport error: {exc}"
            else:
                if resp.status_code == 200:
                    return _message_content(resp)
                last = f"HTTP {resp.status_code}: {resp.text[:200]}"
                if resp.status_code != 429 and resp.status_code < 500:
                    raise EndpointError(last)
            if attempt < self.max_retries:
                delay = self.backoff_s * (2 ** attempt) * (1 + random.random() * 0.1)
                log.info("retrying in %.1fs after %s", delay, last)
                self._sleep(delay)
        raise EndpointError(f"giving up after {self.max_retries + 1} attempts: {last}")


def _message_content(resp: httpx.Response) -> str:
    try:
        data = resp.json()
        content = data["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise EndpointError(f"unexpected response body: {resp.text[:200]}") from exc
    return content if isinstance(content, str) else ""


def complete(
    req: LlmRequest,
    cache: ResponseCache,
    live_allowed: bool,
    client: ChatBackend | None = None,
) -> LlmResponse:
    key = req.request_key
    hit = cache.get(key)
    if hit is not None:
        return LlmResponse(hit["raw_text"], int(hit.get("latency_ms", 0)), True)
    if not live_allowed:
        raise CacheMissInReplayMode(f"request {key[:12]} not in cache")
    if client is None:
        raise AuthMissing("live mode needs a configured client")

    with cache._lock:
        hit = cache.get(key)
        fut = cache._inflight.get(key)
        owner = hit is None and fut is None
        if owner:
            fut = Future()
            cache._inflight[key] = fut
    if hit is not None:
        return LlmResponse(hit["raw_text"], int(hit.get("latency_ms", 0)), True)
    if not owner:
        return fut.result()

    try:
        t0 = time.perf_counter()
        raw = client.chat(req.model_id, req.temperature, req.prompt.text)
        latency = int((time.perf_counter() - t0) * 1000)
        cache.append({
            "key": key,
            "model_id": req.model_id,
            "temperature": req.temperature,
            "prompt": req.prompt.text,
            "raw_text": raw,
            "latency_ms": latency,
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        })
        response = LlmResponse(raw, latency, False)
        fut.set_result(response)
        return response
    except BaseException as exc:
        fut.set_exception(exc)
        raise
    finally:
        with cache._lock:
            cache._inflight.pop(key, None)


# ---------------------------------------------------------------------------
# Response parsing

@dataclass(frozen=True)
class ParsedOutput:
    items: list[str]
    unstructured: bool = False


_LIST_MARKER = re.compile(r"^\s*(?:\(?\d{1,3}[.)]|[-*•‣●▪◦–])\s+")
_LABEL_PREFIX = re.compile(r"^[A-Za-z][A-Za-z ]{0,40}:\s+(?=\S)")
_REFUSAL = re.compile(
    r"^(?:none|n/?a|nil|null|no(?:ne)?\s+found|not\s+(?:mentioned|found|applicable)"
    r"|there\s+(?:are|were|is)\s+no\b.*|no\s+.*\b(?:mentioned|found|identified|present|extracted|listed)"
    r"|no\s+(?:rare\s+)?(?:diseases?|signs?|symptoms?|entities)"
    r"|\[\s*\])$",
    re.IGNORECASE,
)
_QUOTES = "\"'`“”‘’«»"
_TRAILING = ".,;:!?"
_UNSTRUCTURED_WORDS = 6


def _is_refusal(s: str) -> bool:
    return bool(_REFUSAL.match(s.strip().strip(_QUOTES + _TRAILING + "*").strip()))


def _clean(item: str) -> str:
    s = item.strip()
    prev = None
    while s != prev:
        prev = s
        s = _LIST_MARKER.sub("", s).strip()
        s = s.strip("*").strip()
        s = s.strip(_QUOTES).strip()
        s = s.rstrip(_TRAILING).strip()
        if s.startswith("[") and not ("]" in s[1:-1] and s.endswith("]")):
            s = s[1:].strip()
        if s.endswith("]") and "[" not in s[:-1]:
            s = s[:-1].strip()
    return s


def _split_commas(line: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in line:
        if ch in "([{":
            depth += 1
        elif ch in ")]}" and depth:
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    parts.append("".join(cur))
    return parts


def _strip_brackets(line: str) -> str:
    s = line.strip()
    if s.startswith("[") and s.endswith("]"):
        return s[1:-1]
    return s


def parse_response(raw_text: str) -> ParsedOutput:
    text = raw_text.strip()
    if not text or _is_refusal(text):
        return ParsedOutput([])

    lines = [ln for ln in text.splitlines() if ln.strip()]
    unstructured = False
    marked = [ln for ln in lines if _LIST_MARKER.match(ln)]
    if marked:
        candidates = marked
    elif len(lines) > 1:
        # Drop preamble lines such as "Here are the rare diseases:".
        candidates = [ln for ln in lines if not ln.rstrip().endswith(":")]
    else:
        line = _LABEL_PREFIX.sub("", lines[0], count=1)
        candidates = _split_commas(_strip_brackets(line))
        if len(candidates) == 1 and len(candidates[0].split()) > _UNSTRUCTURED_WORDS:
            unstructured = True

    items: list[str] = []
    seen: set[str] = set()
    for cand in candidates:
        s = _clean(cand)
        if not s or _is_refusal(s):
            continue
        key = s.casefold()
        if key not in seen:
            seen.add(key)
            items.append(s)
    return ParsedOutput(items, unstructured)


def parse_llm_output(raw_text: str) -> list[str]:
    """Extract entity strings from a list-style model response."""
    return parse_response(raw_text).items


def format_list(items: list[str]) -> str:
    return "\n".join(f"{i}. {s}" for i, s in enumerate(items, start=1))
