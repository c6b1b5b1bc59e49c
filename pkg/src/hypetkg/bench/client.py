"""MediaWiki action-API client with a content-addressed fixture cache.

Three modes:

* ``fixture``: answer only from the cache; a miss is an error.  No network.
* ``record``: answer from the cache, fetch and store on a miss.
* ``live``: always fetch, never store.

Cache files are ``<sha256 of the canonical request>.json`` holding the request
parameters and the decoded response.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

logger = logging.getLogger(__name__)

DEFAULT_ENDPOINT = "https://www.wikidata.org/w/api.php"
FIXTURE_ENV = "HTKG_FIXTURE_DIR"
MODES = ("fixture", "record", "live")


class ClientError(RuntimeError):
    pass


class FixtureMissingError(ClientError):
    pass


class TransportError(ClientError):
    pass


class MalformedResponseError(ClientError):
    pass


@dataclass
class HttpResponse:
    status: int
    body: str
    headers: Mapping[str, str] | None = None


Transport = Callable[[str, Mapping[str, str]], HttpResponse]


def requests_transport(timeout: float = 30.0, user_agent: str = "hypetkg-bench/0.1") -> Transport:
    import requests

    session = requests.Session()
    session.headers.update({"User-Agent": user_agent, "Accept": "application/json"})

    def send(url: str, params: Mapping[str, str]) -> HttpResponse:
        r = session.get(url, params=dict(params), timeout=timeout)
        return HttpResponse(r.status_code, r.text, dict(r.headers))

    return send


def request_key(params: Mapping[str, str]) -> str:
    canonical = json.dumps({k: str(v) for k, v in params.items()}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class WikidataClient:
    def __init__(
        self,
        fixture_dir: str | Path | None = None,
        mode: str = "fixture",
        endpoint: str = DEFAULT_ENDPOINT,
        transport: Transport | None = None,
        min_interval: float = 0.1,
        max_retries: int = 5,
        backoff: float = 1.0,
        maxlag: int | None = 5,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
    ):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        if fixture_dir is None:
            fixture_dir = os.environ.get(FIXTURE_ENV)
        if mode != "live" and fixture_dir is None:
            raise ValueError(f"{mode} mode needs a fixture directory (or ${FIXTURE_ENV})")
        self.fixture_dir = Path(fixture_dir) if fixture_dir is not None else None
        self.mode = mode
        self.endpoint = endpoint
        self._transport = transport
        self.min_interval = min_interval
        self.max_retries = max_retries
        self.backoff = backoff
        self.maxlag = maxlag
        self._sleep = sleep
        self._clock = clock
        self._last_call: float | None = None
        self._pace_lock = threading.Lock()
        self._memo: dict[str, dict] = {}
        self._memo_lock = threading.Lock()
        self.n_network_calls = 0

    # -- raw requests ----------------------------------------------------------
    def get(self, params: Mapping[str, str]) -> dict:
        params = {"format": "json", **{k: str(v) for k, v in params.items()}}
        key = request_key(params)
        with self._memo_lock:
            if key in self._memo:
                return self._memo[key]
        data = self._lookup(key, params)
        with self._memo_lock:
            self._memo[key] = data
        return data

    def _fixture_path(self, key: str) -> Path:
        assert self.fixture_dir is not None
        return self.fixture_dir / f"{key}.json"

    def _lookup(self, key: str, params: dict[str, str]) -> dict:
        if self.mode != "live":
            path = self._fixture_path(key)
            if path.exists():
                return json.loads(path.read_text(encoding="utf-8"))["response"]
            if self.mode == "fixture":
                raise FixtureMissingError(f"no fixture for request {params} (expected {path.name})")
        data = self._fetch(params)
        if self.mode == "record":
            self.fixture_dir.mkdir(parents=True, exist_ok=True)
            payload = {"request": params, "response": data}
            self._fixture_path(key).write_text(
                json.dumps(payload, sort_keys=True, indent=1, ensure_ascii=False) + "\n", encoding="utf-8"
            )
        return data

    def _pace(self) -> None:
        with self._pace_lock:
            now = self._clock()
            if self._last_call is not None:
                wait = self.min_interval - (now - self._last_call)
                if wait > 0:
                    self._sleep(wait)
                    now = self._clock()
            self._last_call = now

    def _fetch(self, params: dict[str, str]) -> dict:
        if self._transport is None:
            self._transport = requests_transport()
        wire = dict(params)
        if self.maxlag is not None:
            wire["maxlag"] = str(self.maxlag)
        last_problem = ""
        for attempt in range(self.max_retries + 1):
            if attempt:
                delay = self.backoff * 2 ** (attempt - 1)
                logger.info("retrying %s in %.2fs (%s)", params.get("action"), delay, last_problem)
                self._sleep(delay)
            self._pace()
            self.n_network_calls += 1
            try:
                resp = self._transport(self.endpoint, wire)
            except OSError as exc:
                last_problem = f"transport error: {exc}"
                continue
            if resp.status in (429, 503):
                last_problem = f"HTTP {resp.status}"
                retry_after = (resp.headers or {}).get("Retry-After")
                if retry_after and retry_after.isdigit():
                    self._sleep(float(retry_after))
                continue
            if resp.status != 200:
                raise TransportError(f"HTTP {resp.status} for {params}")
            try:
                data = json.loads(resp.body)
            except json.JSONDecodeError as exc:
                raise MalformedResponseError(f"response is not JSON: {exc}") from None
            if not isinstance(data, dict):
                raise MalformedResponseError("response is not a JSON object")
            err = data.get("error")
            if isinstance(err, dict) and err.get("code") == "maxlag":
                last_problem = "maxlag"
                continue
            return data
        raise TransportError(f"giving up after {self.max_retries + 1} attempts: {last_problem}")

    # -- API calls -------------------------------------------------------------
    def get_claims(self, entity: str, property_id: str) -> list[dict]:
        """Statements of ``entity`` for ``property_id`` (an empty list if none)."""
        data = self.get({"action": "wbgetclaims", "entity": entity, "property": property_id})
        if "error" in data:
            code = data["error"].get("code") if isinstance(data["error"], dict) else data["error"]
            if code in ("no-such-entity", "invalid-entity-id"):
                return []
            raise MalformedResponseError(f"wbgetclaims {entity}/{property_id}: error {code}")
        claims = data.get("claims")
        if not isinstance(claims, dict):
            raise MalformedResponseError(f"wbgetclaims {entity}/{property_id}: no claims object")
        stmts = claims.get(property_id, [])
        if not isinstance(stmts, list):
            raise MalformedResponseError(f"wbgetclaims {entity}/{property_id}: claims are not a list")
        return stmts

    def search_entity(self, label: str, language: str = "en") -> str | None:
        """QID of the first search hit whose label equals ``label`` exactly, else of the first hit."""
        data = self.get(
            {"action": "wbsearchentities", "search": label, "language": language, "type": "item", "limit": "5"}
        )
        hits = data.get("search")
        if not isinstance(hits, list):
            raise MalformedResponseError(f"wbsearchentities {label!r}: no search list")
        if not hits:
            return None
        for hit in hits:
            if hit.get("label") == label:
                return hit.get("id")
        return hits[0].get("id")
