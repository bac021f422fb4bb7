"""Client for external model-based judges (VLM rubric, CLIP, LPIPS, EditScore).

Wire protocol: ``POST <endpoint>/score`` with a JSON body::

    {"kind": "VlmRubric", "images": ["<base64 PNG>", ...], "text": "...", "request_id": "..."}

answered by::

    {"request_id": "...", "raw": 4.5, "scale_max": 5.0, "model_id": "..."}

Anything exposing ``score(ScoreRequest) -> ScoreResponse`` can stand in for a
client; :class:`StubScorer` provides deterministic backends for tests.
"""

from __future__ import annotations

import base64
import enum
import hashlib
import io
import json
import logging
import os
import socket
import tempfile
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np
from PIL import Image

from ._validation import check_image

log = logging.getLogger(__name__)

ENV_SCORER_URL = "FINEBENCH_SCORER_URL"
ENV_CACHE_DIR = "FINEBENCH_CACHE_DIR"


class ScoreKind(str, enum.Enum):
    VLM_RUBRIC = "VlmRubric"
    CLIP_TEXT = "ClipText"
    LPIPS = "Lpips"
    EDIT_SCORE = "EditScore"

    @property
    def n_images(self) -> int:
        return 1 if self is ScoreKind.CLIP_TEXT else 2


class ScorerError(Exception):
    def __init__(self, message: str, request_id: str | None = None):
        super().__init__(f"[{request_id}] {message}" if request_id else message)
        self.request_id = request_id


class TransportError(ScorerError):
    """The judge could not be reached after all retries."""


class ProtocolError(ScorerError):
    """The judge answered with a malformed or out-of-range response."""


def encode_png(img) -> str:
    img = check_image(img)
    buf = io.BytesIO()
    Image.fromarray(img, "RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_png(data: str) -> np.ndarray:
    with Image.open(io.BytesIO(base64.b64decode(data, validate=True))) as im:
        if im.mode != "RGB":
            raise ValueError(f"expected an RGB PNG, got mode {im.mode}")
        return np.ascontiguousarray(np.asarray(im, dtype=np.uint8))


def content_key(kind: ScoreKind, images: Sequence[np.ndarray], text: str, model_pin: str | None = None) -> str:
    h = hashlib.sha256()
    h.update(ScoreKind(kind).value.encode())
    for img in images:
        h.update(b"|img|%d,%d,%d|" % img.shape)
        h.update(img.tobytes())
    h.update(b"|text|" + text.encode("utf-8"))
    h.update(b"|pin|" + (model_pin or "").encode("utf-8"))
    return h.hexdigest()


@dataclass(frozen=True, eq=False)
class ScoreRequest:
    kind: ScoreKind
    images: tuple
    text: str = ""
    request_id: str = ""

    def __post_init__(self):
        kind = ScoreKind(self.kind)
        object.__setattr__(self, "kind", kind)
        images = tuple(check_image(img, "request image") for img in self.images)
        object.__setattr__(self, "images", images)
        if len(images) != kind.n_images:
            raise ValueError(f"{kind.value} requests carry {kind.n_images} image(s), got {len(images)}")
        if kind is ScoreKind.CLIP_TEXT and not self.text:
            raise ValueError("ClipText requests need a non-empty caption")
        if not self.request_id:
            object.__setattr__(self, "request_id", f"{kind.value}-{content_key(kind, images, self.text)[:16]}")

    @classmethod
    def build(cls, kind: ScoreKind | str, images: Iterable, text: str = "") -> "ScoreRequest":
        """Request with a content-derived id, so reruns issue identical requests."""
        return cls(ScoreKind(kind), tuple(images), text)

    def key(self, model_pin: str | None = None) -> str:
        return content_key(self.kind, self.images, self.text, model_pin)

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "images": [encode_png(img) for img in self.images],
            "text": self.text,
            "request_id": self.request_id,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ScoreRequest":
        try:
            return cls(
                kind=ScoreKind(d["kind"]),
                images=tuple(decode_png(s) for s in d["images"]),
                text=str(d.get("text", "")),
                request_id=str(d["request_id"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed score request: {exc}", d.get("request_id") if isinstance(d, dict) else None) from exc

    def __eq__(self, other):
        if not isinstance(other, ScoreRequest):
            return NotImplemented
        return (
            self.kind is other.kind
            and self.text == other.text
            and self.request_id == other.request_id
            and len(self.images) == len(other.images)
            and all(np.array_equal(a, b) for a, b in zip(self.images, other.images))
        )

    __hash__ = None


@dataclass(frozen=True)
class ScoreResponse:
    request_id: str
    raw: float
    scale_max: float
    model_id: str

    def to_json(self) -> dict:
        return {
            "request_id": self.request_id,
            "raw": self.raw,
            "scale_max": self.scale_max,
            "model_id": self.model_id,
        }

    @classmethod
    def from_json(cls, d) -> "ScoreResponse":
        rid = d.get("request_id") if isinstance(d, dict) else None
        try:
            resp = cls(
                request_id=d["request_id"],
                raw=d["raw"],
                scale_max=d["scale_max"],
                model_id=d["model_id"],
            )
        except (KeyError, TypeError) as exc:
            raise ProtocolError(f"malformed score response: {exc}", rid) from exc
        for name in ("raw", "scale_max"):
            value = getattr(resp, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value):
                raise ProtocolError(f"response field {name} must be a finite number, got {value!r}", rid)
        if not isinstance(resp.request_id, str) or not isinstance(resp.model_id, str):
            raise ProtocolError("request_id and model_id must be strings", rid)
        return cls(resp.request_id, float(resp.raw), float(resp.scale_max), resp.model_id)

    def check_for(self, req: ScoreRequest) -> "ScoreResponse":
        """Validate against the request it answers; raises ProtocolError."""
        rid = req.request_id
        if self.request_id != rid:
            raise ProtocolError(f"response answers {self.request_id!r}", rid)
        if self.scale_max <= 0:
            raise ProtocolError(f"scale_max must be positive, got {self.scale_max}", rid)
        if req.kind in (ScoreKind.VLM_RUBRIC, ScoreKind.EDIT_SCORE):
            ok = 0.0 <= self.raw <= self.scale_max
        elif req.kind is ScoreKind.CLIP_TEXT:
            ok = -1.0 <= self.raw <= 1.0
        else:
            ok = self.raw >= 0.0
        if not ok:
            raise ProtocolError(f"raw score {self.raw} out of range for {req.kind.value} (scale_max {self.scale_max})", rid)
        return self


class Scorer(Protocol):
    def score(self, req: ScoreRequest) -> ScoreResponse: ...


@dataclass(frozen=True)
class RetryPolicy:
    timeout: float = 60.0
    max_retries: int = 3
    backoff: float = 0.5
    backoff_factor: float = 2.0

    def delays(self) -> list[float]:
        return [self.backoff * self.backoff_factor**i for i in range(self.max_retries)]

    def max_wall_time(self) -> float:
        return (self.max_retries + 1) * self.timeout + sum(self.delays())


class TransportFailure(OSError):
    """Raised by transports when no HTTP response was obtained."""


Transport = Callable[[str, bytes, float], "tuple[int, bytes]"]


def http_transport(url: str, body: bytes, timeout: float) -> tuple[int, bytes]:
    req = urllib.request.Request(url, data=body, headers={"Content-Type": "application/json"}, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read()
    except (urllib.error.URLError, socket.timeout, ConnectionError) as exc:
        raise TransportFailure(str(exc)) from exc


class ScorerClient:
    """HTTP judge client with bounded retries and a cap on in-flight requests.

    Safe to share between worker threads.
    """

    def __init__(
        self,
        endpoint: str,
        policy: RetryPolicy | None = None,
        *,
        transport: Transport | None = None,
        max_in_flight: int = 8,
        model_pin: str | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not endpoint:
            raise ValueError("scorer endpoint is not configured")
        self.endpoint = endpoint.rstrip("/")
        self.policy = policy or RetryPolicy()
        self.transport = transport or http_transport
        self.model_pin = model_pin
        self._sleep = sleep
        self._permits = threading.BoundedSemaphore(max_in_flight)
        self._lock = threading.Lock()
        self.attempts = 0
        self.calls = 0

    @property
    def url(self) -> str:
        return f"{self.endpoint}/score"

    def score(self, req: ScoreRequest) -> ScoreResponse:
        body = json.dumps(req.to_json(), sort_keys=True).encode("utf-8")
        with self._lock:
            self.calls += 1
        delays = self.policy.delays()
        last = "no attempt made"
        for attempt in range(self.policy.max_retries + 1):
            if attempt:
                self._sleep(delays[attempt - 1])
            with self._lock:
                self.attempts += 1
            try:
                with self._permits:
                    status, payload = self.transport(self.url, body, self.policy.timeout)
            except (TransportFailure, OSError) as exc:
                last = f"transport failure: {exc}"
                log.warning("scorer attempt %d for %s failed: %s", attempt + 1, req.request_id, exc)
                continue
            if status >= 500:
                last = f"HTTP {status}"
                log.warning("scorer attempt %d for %s got HTTP %d", attempt + 1, req.request_id, status)
                continue
            if status != 200:
                raise ProtocolError(f"HTTP {status}: {payload[:200]!r}", req.request_id)
            try:
                data = json.loads(payload)
            except ValueError as exc:
                raise ProtocolError(f"response is not JSON: {exc}", req.request_id) from exc
            resp = ScoreResponse.from_json(data).check_for(req)
            if self.model_pin is not None and resp.model_id != self.model_pin:
                raise ProtocolError(f"judge model {resp.model_id!r} does not match pin {self.model_pin!r}", req.request_id)
            return resp
        raise TransportError(f"gave up after {self.policy.max_retries + 1} attempts ({last})", req.request_id)


class ScoreCache:
    """Content-addressed JSON files, one per response, written atomically."""

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> dict | None:
        path = self._path(key)
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None
        except (OSError, ValueError) as exc:
            log.warning("ignoring unreadable cache entry %s: %s", path, exc)
            return None

    def put(self, key: str, payload: dict) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(payload, fh, sort_keys=True)
            os.replace(tmp, path)
        except BaseException:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            raise


def cached_score(req: ScoreRequest, client: Scorer, cache: ScoreCache | None) -> ScoreResponse:
    """Serve ``req`` from ``cache`` when possible, otherwise ask ``client`` and store the answer.

    Cache I/O problems are logged and the call falls back to the network.
    """
    if cache is None:
        return client.score(req)
    key = req.key(getattr(client, "model_pin", None))
    try:
        hit = cache.get(key)
    except OSError as exc:
        log.warning("score cache read failed, continuing uncached: %s", exc)
        hit = None
    if hit is not None:
        try:
            stored = ScoreResponse.from_json(hit)
            return ScoreResponse(req.request_id, stored.raw, stored.scale_max, stored.model_id).check_for(req)
        except ProtocolError as exc:
            log.warning("discarding invalid cache entry %s: %s", key, exc)
    resp = client.score(req)
    try:
        cache.put(key, resp.to_json())
    except OSError as exc:
        log.warning("score cache write failed, continuing uncached: %s", exc)
    return resp


class CachedScorer:
    def __init__(self, client: Scorer, cache: ScoreCache | None):
        self.client = client
        self.cache = cache

    @property
    def model_pin(self):
        return getattr(self.client, "model_pin", None)

    def score(self, req: ScoreRequest) -> ScoreResponse:
        return cached_score(req, self.client, self.cache)


@dataclass
class StubScorer:
    """Deterministic judge backend for tests and offline runs.

    Modes:
      * ``"hash"``: the score is a hash of the request content mapped into
        the kind's valid range, so identical inputs always score the same;
      * ``"table"``: ``table[request_id]`` (``default`` when missing);
      * ``"script"``: consume ``script`` in order, where the string
        ``"fail"`` answers with HTTP 500;
      * ``"func"``: ``func(request) -> raw``.

    Use :meth:`transport` to plug it into a :class:`ScorerClient` or
    :meth:`serve` to expose it over HTTP.
    """

    mode: str = "hash"
    scale_max: float = 5.0
    model_id: str = "stub-hash-v1"
    seed: int = 0
    table: dict = field(default_factory=dict)
    default: float = 0.0
    script: list = field(default_factory=list)
    func: Callable[[ScoreRequest], float] | None = None

    def __post_init__(self):
        if self.mode not in ("hash", "table", "script", "func"):
            raise ValueError(f"unknown stub mode {self.mode!r}")
        self._lock = threading.Lock()
        self._script_pos = 0
        self.requests = 0

    def _hash_raw(self, req: ScoreRequest) -> float:
        digest = hashlib.sha256(b"%d|" % self.seed + req.key().encode()).digest()
        u = int.from_bytes(digest[:8], "big") >> 11
        u = u / float(1 << 53)
        if req.kind is ScoreKind.CLIP_TEXT:
            return 2.0 * u - 1.0
        if req.kind is ScoreKind.LPIPS:
            return u
        return self.scale_max * u

    def raw_for(self, req: ScoreRequest) -> float | None:
        """Raw score for ``req``; None means a scripted failure."""
        with self._lock:
            self.requests += 1
            if self.mode == "script":
                if self._script_pos >= len(self.script):
                    raise IndexError("stub script exhausted")
                item = self.script[self._script_pos]
                self._script_pos += 1
                return None if item == "fail" else float(item)
        if self.mode == "hash":
            return self._hash_raw(req)
        if self.mode == "table":
            return float(self.table.get(req.request_id, self.default))
        return float(self.func(req))

    def handle(self, body: bytes) -> tuple[int, bytes]:
        try:
            req = ScoreRequest.from_json(json.loads(body))
        except (ValueError, ProtocolError) as exc:
            return 400, json.dumps({"error": str(exc)}).encode()
        raw = self.raw_for(req)
        if raw is None:
            return 500, b'{"error": "scripted failure"}'
        resp = ScoreResponse(req.request_id, raw, self.scale_max, self.model_id)
        return 200, json.dumps(resp.to_json(), sort_keys=True).encode()

    def transport(self, url: str, body: bytes, timeout: float) -> tuple[int, bytes]:
        return self.handle(body)

    def serve(self, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
        """Start an HTTP server for this stub on a daemon thread; call ``shutdown()`` when done."""
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                if self.path.rstrip("/") != "/score":
                    self.send_error(404)
                    return
                length = int(self.headers.get("Content-Length", 0))
                status, payload = stub.handle(self.rfile.read(length))
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, format, *args):
                pass

        server = ThreadingHTTPServer((host, port), Handler)
        threading.Thread(target=server.serve_forever, daemon=True).start()
        return server


def make_scorer(
    url: str | None = None,
    *,
    cache_dir: str | os.PathLike | None = None,
    policy: RetryPolicy | None = None,
    max_in_flight: int = 8,
    model_pin: str | None = None,
) -> Scorer | None:
    """Build a scorer from a URL (or ``$FINEBENCH_SCORER_URL``).

    ``stub:hash`` (optionally ``stub:hash:<seed>``) selects the in-process
    hash stub behind the regular client, so offline runs still go through
    the full wire protocol. Returns None when no URL is configured.
    """
    url = url or os.environ.get(ENV_SCORER_URL)
    if not url:
        return None
    cache_dir = cache_dir or os.environ.get(ENV_CACHE_DIR)
    if url.startswith("stub:"):
        parts = url.split(":")
        if len(parts) < 2 or parts[1] != "hash":
            raise ValueError(f"unsupported stub scorer {url!r}; use stub:hash[:seed]")
        seed = int(parts[2]) if len(parts) > 2 else 0
        stub = StubScorer(mode="hash", seed=seed)
        client = ScorerClient("stub://hash", policy, transport=stub.transport, max_in_flight=max_in_flight, model_pin=model_pin)
    else:
        client = ScorerClient(url, policy, max_in_flight=max_in_flight, model_pin=model_pin)
    if cache_dir:
        return CachedScorer(client, ScoreCache(cache_dir))
    return client

