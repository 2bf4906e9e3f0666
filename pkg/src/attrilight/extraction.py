"""Attribute-word extraction from captions.

Two backends produce the same ``AttributeList`` contract: a deterministic
lexicon lookup (the default, used by the benchmark) and a remote
chat-completion endpoint prompted to emit ``[attr1 attr2 ...]`` or
``[None]``.  Whatever a backend returns is validated against the caption:
words that do not occur verbatim in the caption are dropped.
"""

from __future__ import annotations

import importlib.resources
import json
import os
import re
import threading
import time
from dataclasses import dataclass, field

import requests

from .tokens import normalize_words

API_KEY_ENV = "ATTRILIGHT_API_KEY"

_BRACKET_GROUP = re.compile(r"\[([^\[\]]*)\]")


class ReplyFormatError(ValueError):
    """The raw LLM reply does not contain exactly one bracketed group."""

    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class ExtractionTransportError(RuntimeError):
    """The chat-completion endpoint could not be reached or kept failing."""


@dataclass(frozen=True)
class AttributeList:
    """Ordered attribute words for one caption; empty means 'no attributes'."""

    words: tuple[str, ...]
    is_none: bool

    def __post_init__(self):
        if self.is_none != (len(self.words) == 0):
            raise ValueError("is_none must hold exactly when words is empty")

    @classmethod
    def of(cls, words) -> "AttributeList":
        words = tuple(words)
        return cls(words=words, is_none=not words)

    @classmethod
    def none(cls) -> "AttributeList":
        return cls(words=(), is_none=True)

    def format(self) -> str:
        """Render in the bracketed wire format, e.g. ``[dark brown]``."""
        return "[None]" if self.is_none else "[" + " ".join(self.words) + "]"


def parse_llm_output(raw: str) -> AttributeList:
    """Parse a reply of the form ``... [attr1 attr2 ...] ...``.

    Exactly one bracketed group must be present; prose around it is
    ignored.  A lone ``None`` token (any case) inside the brackets means
    no attributes.
    """
    groups = _BRACKET_GROUP.findall(raw)
    if len(groups) != 1:
        raise ReplyFormatError(
            f"expected exactly one bracketed group, found {len(groups)}", raw
        )
    words = groups[0].split()
    if len(words) == 1 and words[0].lower() == "none":
        return AttributeList.none()
    return AttributeList.of(w.lower() for w in words)


def validate_against_caption(candidate: AttributeList, caption: str) -> AttributeList:
    """Drop words that do not occur verbatim in the caption."""
    caption_tokens = set(normalize_words(caption))
    kept = [w for w in candidate.words if w in caption_tokens]
    return AttributeList.of(kept)


# --------------------------------------------------------------------------
# Rule-based backend
# --------------------------------------------------------------------------

def load_lexicon(path) -> dict[str, str]:
    """Read a ``word<TAB>type`` lexicon file (UTF-8, one entry per line)."""
    lexicon = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            word, attr_type = line.split("\t")
            lexicon[word] = attr_type
    return lexicon


def default_lexicon() -> dict[str, str]:
    """The lexicon shipped with the package (~200 entries, four types)."""
    ref = importlib.resources.files("attrilight.data").joinpath("lexicon.tsv")
    lexicon = {}
    for line in ref.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            word, attr_type = line.split("\t")
            lexicon[word] = attr_type
    return lexicon


def extract_rule_based(text: str, lexicon: dict[str, str]) -> AttributeList:
    """Return the caption words present in the lexicon, in caption order."""
    return AttributeList.of(w for w in normalize_words(text) if w in lexicon)


# --------------------------------------------------------------------------
# LLM backend
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExtractionPrompt:
    """System message, in-context examples and the per-caption template."""

    system_message: str
    examples: tuple[tuple[str, str], ...]
    user_template: str = "Caption: {caption}"

    def messages(self, caption: str) -> list[dict[str, str]]:
        msgs = [{"role": "system", "content": self.system_message}]
        for example_caption, expected in self.examples:
            msgs.append(
                {"role": "user", "content": self.user_template.format(caption=example_caption)}
            )
            msgs.append({"role": "assistant", "content": expected})
        msgs.append({"role": "user", "content": self.user_template.format(caption=caption)})
        return msgs


_DEFAULT_SYSTEM_MESSAGE = (
    "You extract attribute words from image captions. An attribute word "
    "describes a visual property of an object, such as its color, material, "
    "pattern or transparency. Reply with only the attribute words that appear "
    "verbatim in the caption, separated by single spaces and wrapped in one "
    "pair of square brackets, in the form [attribute1 attribute2 ... attributeN]. "
    "Do not output any other words. If the caption contains no attribute "
    "words, the output should be [None]."
)

_DEFAULT_EXAMPLES = (
    ("a dark brown dog", "[dark brown]"),
    ("a red car parked outside", "[red]"),
    ("the cat sleeps on the sofa", "[None]"),
    ("a striped transparent glass bottle", "[striped transparent glass]"),
    ("two wooden chairs near a window", "[wooden]"),
    ("a plastic cup full of water", "[plastic]"),
    ("an umbrella left in the hall", "[None]"),
    ("a checkered blue shirt on the bed", "[checkered blue]"),
    ("a translucent ceramic vase", "[translucent ceramic]"),
    ("the man rides a bicycle", "[None]"),
    ("a pale yellow leather bag", "[pale yellow leather]"),
    ("a dotted scarf and a plain hat", "[dotted plain]"),
    ("a frosted glass lamp on a metal table", "[frosted glass metal]"),
    ("a book lying on the bench", "[None]"),
    ("a shiny opaque black phone", "[opaque black]"),
)


def default_prompt() -> ExtractionPrompt:
    """Prompt with the role definition and 15 in-context example pairs."""
    return ExtractionPrompt(
        system_message=_DEFAULT_SYSTEM_MESSAGE,
        examples=_DEFAULT_EXAMPLES,
    )


@dataclass
class LlmClientConfig:
    endpoint_url: str
    model_name: str
    timeout: float = 30.0
    max_retries: int = 2
    temperature: float = 0.0
    max_in_flight: int = 4

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


class LlmClient:
    """Chat-completion client with retries and an in-flight request cap.

    Speaks the generic JSON protocol: POST {model, messages, temperature},
    expect a single assistant text reply (either OpenAI-style
    ``choices[0].message.content`` or a flat ``content`` field).  The API
    key, if present in the environment, is sent as a bearer token and
    never logged.
    """

    def __init__(self, cfg: LlmClientConfig, session: requests.Session | None = None):
        self.cfg = cfg
        self._session = session or requests.Session()
        self._gate = threading.Semaphore(cfg.max_in_flight)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        return headers

    def complete(self, messages: list[dict[str, str]]) -> str:
        body = {
            "model": self.cfg.model_name,
            "messages": messages,
            "temperature": self.cfg.temperature,
        }
        last_error: Exception | None = None
        for attempt in range(self.cfg.max_retries + 1):
            if attempt > 0:
                time.sleep(0.25 * 2 ** (attempt - 1))
            try:
                with self._gate:
                    resp = self._session.post(
                        self.cfg.endpoint_url,
                        json=body,
                        headers=self._headers(),
                        timeout=self.cfg.timeout,
                    )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code >= 500 or resp.status_code == 429:
                last_error = ExtractionTransportError(
                    f"endpoint returned status {resp.status_code}"
                )
                continue
            if resp.status_code != 200:
                raise ExtractionTransportError(
                    f"endpoint returned status {resp.status_code}"
                )
            return self._reply_text(resp)
        raise ExtractionTransportError(
            f"request failed after {self.cfg.max_retries + 1} attempts: {last_error}"
        )

    @staticmethod
    def _reply_text(resp) -> str:
        try:
            payload = resp.json()
        except (json.JSONDecodeError, ValueError) as exc:
            raise ExtractionTransportError(f"non-JSON reply: {exc}") from exc
        if isinstance(payload, dict):
            choices = payload.get("choices")
            if isinstance(choices, list) and choices:
                message = choices[0].get("message", {})
                content = message.get("content")
                if isinstance(content, str):
                    return content
            content = payload.get("content")
            if isinstance(content, str):
                return content
        raise ExtractionTransportError("reply JSON carries no assistant text field")


def extract_llm(
    text: str,
    prompt: ExtractionPrompt,
    cfg: LlmClientConfig,
    client: LlmClient | None = None,
) -> AttributeList:
    """Extract attributes via the chat endpoint and validate against ``text``."""
    client = client or LlmClient(cfg)
    raw = client.complete(prompt.messages(text))
    parsed = parse_llm_output(raw)
    if parsed.is_none:
        return parsed
    return validate_against_caption(parsed, text)
