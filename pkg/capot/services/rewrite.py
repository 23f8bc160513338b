from __future__ import annotations

import logging
from typing import Any, Optional, Protocol

import requests

from ..errors import BackendError, DataError
from ..models import RewriteMode, RewriteRequest, RewriteResponse
from ..storage import RewriteCache
from .text_resources import TextResources, load_resources, map_word_cores, match_case

logger = logging.getLogger(__name__)

# Round-trip substitutions for the offline back-translation stub. No value is
# also a key, so a second pass leaves the text unchanged.
BACK_TRANSLATION_TABLE: dict[str, str] = {
    "automobile": "car",
    "begin": "start",
    "big": "large",
    "buy": "purchase",
    "called": "named",
    "city": "town",
    "commence": "start",
    "completed": "finished",
    "couch": "sofa",
    "dad": "father",
    "fall": "autumn",
    "famous": "well-known",
    "film": "movie",
    "fix": "repair",
    "huge": "large",
    "ill": "sick",
    "inquire": "ask",
    "journey": "trip",
    "kid": "child",
    "located": "situated",
    "made": "created",
    "mom": "mother",
    "obtain": "get",
    "picture": "photo",
    "quick": "fast",
    "rapid": "fast",
    "receive": "get",
    "reply": "answer",
    "sea": "ocean",
    "shop": "store",
    "showed": "displayed",
    "shut": "close",
    "small": "little",
    "song": "tune",
    "speak": "talk",
    "stone": "rock",
    "story": "tale",
    "tiny": "little",
    "woods": "forest",
}

NORMALIZED_DETERMINERS = {"a": "the", "an": "the"}


class RewriteBackend(Protocol):
    label: str

    def rewrite(self, text: str, mode: RewriteMode) -> str: ...


class StubRewriteBackend:
    """Deterministic offline stand-in for translation and paraphrase models."""

    label = "stub"

    def __init__(self, resources: Optional[TextResources] = None):
        self.resources = resources or load_resources()

    def rewrite(self, text: str, mode: RewriteMode) -> str:
        if mode == "back_translation":
            return map_word_cores(text, self._round_trip)
        return map_word_cores(text, self._paraphrase)

    def _round_trip(self, core: str) -> str:
        replacement = BACK_TRANSLATION_TABLE.get(core.lower())
        return match_case(core, replacement) if replacement else core

    def _paraphrase(self, core: str) -> str:
        lowered = core.lower()
        if lowered in NORMALIZED_DETERMINERS:
            return match_case(core, NORMALIZED_DETERMINERS[lowered])
        synonyms = self.resources.synonyms_of(lowered)
        return match_case(core, synonyms[0]) if synonyms else core


class HttpRewriteBackend:
    """POSTs {text, mode} to a rewrite service and expects {text} back."""

    label = "http"

    def __init__(
        self,
        endpoint: str,
        timeout: int,
        max_retries: int,
        session: Optional[requests.Session] = None,
    ):
        if not endpoint:
            raise BackendError("rewrite backend required: no endpoint configured")
        self.endpoint = endpoint
        self.timeout = timeout
        self.max_retries = max(1, max_retries)
        self.session = session or requests.Session()
        self.session.headers.update({"Content-Type": "application/json"})

    def rewrite(self, text: str, mode: RewriteMode) -> str:
        for attempt in range(1, self.max_retries + 1):
            logger.info("Requesting %s rewrite from %s (attempt %d)", mode, self.endpoint, attempt)
            try:
                return self._request_text(text, mode)
            except (requests.RequestException, ValueError) as exc:
                logger.warning(
                    "Rewrite failed for endpoint=%s mode=%s attempt=%d: %s",
                    self.endpoint,
                    mode,
                    attempt,
                    exc,
                )
                if attempt == self.max_retries:
                    raise BackendError(f"rewrite service failed after {attempt} attempts: {exc}") from exc
        raise BackendError("rewrite service failed")

    def _request_text(self, text: str, mode: RewriteMode) -> str:
        response = self.session.post(self.endpoint, json={"text": text, "mode": mode}, timeout=self.timeout)
        if response.status_code >= 400:
            raise requests.HTTPError(f"HTTP {response.status_code}: {response.text}")

        data: Any = response.json()
        rewritten = data.get("text") if isinstance(data, dict) else None
        if not isinstance(rewritten, str) or not rewritten.strip():
            raise ValueError("rewrite response is empty")
        return rewritten


class RewriteClient:
    """Front door for bt/paraphrase noise; live responses are cached by (mode, text)."""

    def __init__(self, backend: RewriteBackend, cache: Optional[RewriteCache] = None):
        self.backend = backend
        self.cache = cache

    def rewrite(self, request: RewriteRequest) -> RewriteResponse:
        if self.cache is not None:
            cached = self.cache.fetch(request.mode, request.text)
            if cached is not None:
                logger.debug("Rewrite cache hit for mode=%s", request.mode)
                return RewriteResponse(text=cached.rewritten, backend=cached.backend)

        rewritten = self.backend.rewrite(request.text, request.mode)
        if not rewritten.strip():
            raise BackendError("rewrite response is empty")
        if self.cache is not None and self.backend.label != StubRewriteBackend.label:
            self.cache.store(request.mode, request.text, rewritten, self.backend.label)
        return RewriteResponse(text=rewritten, backend=self.backend.label)


def build_rewrite_client(
    backend: str,
    endpoint: str = "",
    cache_dir: Optional[str] = None,
    timeout: int = 30,
    max_retries: int = 3,
    resources: Optional[TextResources] = None,
) -> RewriteClient:
    cache = RewriteCache.in_directory(cache_dir) if cache_dir else None
    if backend == "stub":
        return RewriteClient(StubRewriteBackend(resources), cache)
    if backend == "http":
        return RewriteClient(HttpRewriteBackend(endpoint, timeout, max_retries), cache)
    raise DataError(f"unknown rewrite backend: {backend}")
