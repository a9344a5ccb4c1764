"""Chat-style vision-language model gateway.

Implements the strict two-stage protocol: stage 1 describes a patch
image in free text, stage 2 judges that description against a candidate
explanation and answers with one of four class tokens. The judge never
sees pixels. A deterministic mock backend backed by fixture tables makes
the whole pipeline testable offline.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import re
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

import httpx

from .errors import JudgmentError, ParseError, ValidationError, VlmError


class FourWayLabel(str, Enum):
    HIGH = "high"
    MEDIUM_HIGH = "medium-high"
    MEDIUM_LOW = "medium-low"
    LOW = "low"

    def flipped(self) -> "FourWayLabel":
        return _FLIP[self]


_FLIP = {
    FourWayLabel.HIGH: FourWayLabel.LOW,
    FourWayLabel.MEDIUM_HIGH: FourWayLabel.MEDIUM_LOW,
    FourWayLabel.MEDIUM_LOW: FourWayLabel.MEDIUM_HIGH,
    FourWayLabel.LOW: FourWayLabel.HIGH,
}

# ordinal position used for the 4-level diagnostic metric
LABEL_ORDER = {
    FourWayLabel.LOW: 0,
    FourWayLabel.MEDIUM_LOW: 1,
    FourWayLabel.MEDIUM_HIGH: 2,
    FourWayLabel.HIGH: 3,
}


def parse_label(text: str) -> FourWayLabel:
    """Pull exactly one class token out of free text.

    Case-insensitive; hyphen, space and underscore are equivalent; longer
    labels win over their suffixes; conflicting distinct labels fail.
    """
    norm = re.sub(r"[\s_]+", "-", text.lower())
    found: set[FourWayLabel] = set()
    for label in (FourWayLabel.MEDIUM_HIGH, FourWayLabel.MEDIUM_LOW):
        if label.value in norm:
            found.add(label)
            norm = norm.replace(label.value, " ")
    for label in (FourWayLabel.HIGH, FourWayLabel.LOW):
        if re.search(rf"\b{label.value}\b", norm):
            found.add(label)
    if len(found) != 1:
        raise ParseError(
            f"expected exactly one class token, found {sorted(l.value for l in found)} "
            f"in {text!r}"
        )
    return found.pop()


@dataclass(frozen=True)
class VlmConfig:
    backend: str = "mock"  # mock | http_chat
    endpoint: str = ""
    model_name: str = ""
    temperature: float = 0.0
    max_retries: int = 3
    timeout_s: float = 60.0
    rate_limit_per_min: int | None = None
    api_key_env: str = "VLM_API_KEY"
    max_image_bytes: int = 4 * 1024 * 1024
    mock_seed: int = 0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValidationError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ValidationError("max_retries must be >= 0")


@dataclass
class PatchDescription:
    patch_ref: str
    text: str
    raw_response: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.text:
            raise ValidationError("description text must be nonempty")


def _asset_text(name: str) -> str:
    return resources.files("slideprobe").joinpath("assets", name).read_text()


def load_prompt(name: str) -> str:
    """Versioned prompt asset: 'describe' or 'judge'."""
    return _asset_text(f"prompts/{name}.txt")


def render_prompt(template: str, **values: str) -> str:
    for key, val in values.items():
        template = template.replace("{{" + key + "}}", val)
    return template


def load_mock_fixtures() -> dict:
    return json.loads(_asset_text("mock_vlm_fixtures.json"))


class MockVlm:
    """Deterministic fixture-table VLM: pure function of
    (fixture tag, explanation id, seed)."""

    def __init__(self, seed: int = 0, fixtures: dict | None = None):
        self.seed = seed
        self.fixtures = fixtures if fixtures is not None else load_mock_fixtures()

    def describe(self, patch_ref: str) -> str:
        tag = patch_ref.split(":", 1)[1] if patch_ref.startswith("fixture:") else patch_ref
        tag = tag.split("#", 1)[0]  # '#n' suffix only disambiguates refs
        table = self.fixtures["descriptions"]
        return table.get(tag, table["_default"])

    def judge(self, description: str, patch_ref: str, explanation) -> FourWayLabel:
        rules_table = self.fixtures["explanations"]
        entry = rules_table.get(getattr(explanation, "id", None)) or rules_table.get(
            getattr(explanation, "name", None), {}
        )
        invert = False
        if "inverse_of" in entry:
            entry = rules_table.get(entry["inverse_of"], {})
            invert = True
        label = self._apply_rules(description, entry.get("rules", []), patch_ref)
        return label.flipped() if invert else label

    def _apply_rules(self, description: str, rules: list, patch_ref: str) -> FourWayLabel:
        text = description.lower()
        for rule in rules:
            if rule["keyword"].lower() in text:
                return FourWayLabel(rule["label"])
        # no explanatory feature found: deterministic stand-in for the
        # observed fallback of guessing medium-high or medium-low
        digest = hashlib.sha256(f"{self.seed}:{patch_ref}".encode()).digest()
        return FourWayLabel.MEDIUM_HIGH if digest[0] & 1 else FourWayLabel.MEDIUM_LOW


class _RateLimiter:
    """Sliding one-minute window; clock and sleep injectable for tests."""

    def __init__(self, per_minute: int | None, clock=time.monotonic, sleep=time.sleep):
        self.per_minute = per_minute
        self.clock = clock
        self.sleep = sleep
        self._sent: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if self.per_minute is None:
            return
        with self._lock:
            while True:
                now = self.clock()
                while self._sent and now - self._sent[0] >= 60.0:
                    self._sent.popleft()
                if len(self._sent) < self.per_minute:
                    self._sent.append(now)
                    return
                self.sleep(60.0 - (now - self._sent[0]))


class VlmGateway:
    """Shared client for describe/judge calls with retries, rate limiting
    and verbatim response archiving."""

    def __init__(
        self,
        config: VlmConfig | None = None,
        clock=time.monotonic,
        sleep=time.sleep,
        archive_dir: str | Path | None = None,
        http_client: httpx.Client | None = None,
    ):
        self.config = config or VlmConfig()
        self._http = http_client
        self.archive: list[dict] = []
        self._limiter = _RateLimiter(self.config.rate_limit_per_min, clock, sleep)
        self._archive_dir = Path(archive_dir) if archive_dir else None
        self._mock = MockVlm(self.config.mock_seed) if self.config.backend == "mock" else None
        self._sleep = sleep
        if self._archive_dir:
            self._archive_dir.mkdir(parents=True, exist_ok=True)

    # -- stage 1 -------------------------------------------------------------

    def describe_patch(
        self, patch_png: bytes | None = None, patch_ref: str = ""
    ) -> PatchDescription:
        if patch_png is not None and len(patch_png) > self.config.max_image_bytes:
            raise VlmError(
                f"image {len(patch_png)} bytes exceeds cap {self.config.max_image_bytes}"
            )
        if self._mock is not None:
            text = self._mock.describe(patch_ref)
            raw = {"backend": "mock", "patch_ref": patch_ref, "text": text}
        else:
            prompt = load_prompt("describe")
            content: list[dict] = [{"type": "text", "text": prompt}]
            if patch_png is not None:
                b64 = base64.b64encode(patch_png).decode("ascii")
                content.append(
                    {
                        "type": "image_url",
                        "image_url": {"url": f"data:image/png;base64,{b64}"},
                    }
                )
            text, raw = self._chat([{"role": "user", "content": content}])
            if not text.strip():
                raise VlmError("empty completion from describe stage")
        self._archive("describe", patch_ref, raw)
        return PatchDescription(patch_ref=patch_ref, text=text, raw_response=raw)

    # -- stage 2 -------------------------------------------------------------

    def judge(self, description: PatchDescription, explanation) -> FourWayLabel:
        if not description.text or not getattr(explanation, "text", ""):
            raise ValidationError("description and explanation must be nonempty")
        if self._mock is not None:
            label = self._mock.judge(description.text, description.patch_ref, explanation)
            self._archive(
                "judge",
                description.patch_ref,
                {"backend": "mock", "label": label.value,
                 "explanation_id": getattr(explanation, "id", None)},
            )
            return label
        prompt = render_prompt(
            load_prompt("judge"),
            explanation=explanation.text,
            description=description.text,
        )
        last_err: Exception | None = None
        for _ in range(self.config.max_retries + 1):
            text, raw = self._chat([{"role": "user", "content": prompt}])
            self._archive("judge", description.patch_ref, raw)
            try:
                return parse_label(text)
            except ParseError as exc:
                last_err = exc
        raise JudgmentError(f"unparseable judgment after retries: {last_err}")

    # -- transport -------------------------------------------------------------

    def _chat(self, messages: list[dict]) -> tuple[str, dict]:
        cfg = self.config
        headers = {}
        api_key = os.environ.get(cfg.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {
            "model": cfg.model_name,
            "messages": messages,
            "temperature": cfg.temperature,
        }
        if self._http is None:
            self._http = httpx.Client(timeout=cfg.timeout_s)
        last_exc: Exception | None = None
        for attempt in range(cfg.max_retries + 1):
            self._limiter.acquire()
            try:
                resp = self._http.post(cfg.endpoint, json=payload, headers=headers)
            except httpx.HTTPError as exc:
                last_exc = exc
                if attempt < cfg.max_retries:
                    self._sleep(0.5 * (2**attempt))
                continue
            if resp.status_code >= 500 or resp.status_code == 429:
                last_exc = VlmError(f"HTTP {resp.status_code}")
                if attempt < cfg.max_retries:
                    self._sleep(0.5 * (2**attempt))
                continue
            if resp.status_code != 200:
                raise VlmError(f"chat endpoint returned HTTP {resp.status_code}")
            body = resp.json()
            try:
                text = body["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError) as exc:
                raise VlmError(f"malformed chat completion: {exc}") from exc
            return text or "", body
        raise VlmError(f"chat transport failed after retries: {last_exc}")

    def _archive(self, stage: str, patch_ref: str, raw: dict) -> None:
        record = {"stage": stage, "patch_ref": patch_ref, "response": raw}
        self.archive.append(record)
        if self._archive_dir:
            with open(self._archive_dir / "vlm_responses.jsonl", "a") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")
