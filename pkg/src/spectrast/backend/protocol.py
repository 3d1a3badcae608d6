"""Wire protocol for model backends.

A backend is a subprocess speaking newline-delimited JSON over stdin/stdout:
one object per line, each carrying a correlation ``id`` that the reply
echoes. Requests have a ``kind`` of handshake, load_features, score_batch,
generate, tokenize, or shutdown. Binary payloads (feature matrices) travel
base64-encoded in the FBNK container; cell masks travel as run-length
encoded (bit, run length) integer pairs over flattened row-major cells.

``bow_masses`` entries are the total probability of the word-boundary set:
begin-of-word tokens, punctuation tokens, and end-of-sequence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from ..core import TokenizerInfo
from ..errors import BackendProtocolError

PROTOCOL_VERSION = 1

KIND_HANDSHAKE = "handshake"
KIND_LOAD_FEATURES = "load_features"
KIND_SCORE_BATCH = "score_batch"
KIND_GENERATE = "generate"
KIND_TOKENIZE = "tokenize"
KIND_SHUTDOWN = "shutdown"

REQUEST_KINDS = (
    KIND_HANDSHAKE,
    KIND_LOAD_FEATURES,
    KIND_SCORE_BATCH,
    KIND_GENERATE,
    KIND_TOKENIZE,
    KIND_SHUTDOWN,
)

DEFAULT_BEAM_SIZE = 5
DEFAULT_NO_REPEAT_NGRAM = 5


def encode_line(obj: dict) -> str:
    """One protocol message as a single JSON line (trailing newline included)."""
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":")) + "\n"


def decode_line(line: str) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise BackendProtocolError(f"malformed JSON message: {exc}") from exc
    if not isinstance(obj, dict):
        raise BackendProtocolError("protocol message must be a JSON object")
    return obj


def _require(obj: dict, key: str, types, context: str):
    if key not in obj:
        raise BackendProtocolError(f"{context}: missing field {key!r}")
    value = obj[key]
    if not isinstance(value, types):
        raise BackendProtocolError(f"{context}: field {key!r} has wrong type")
    return value


def _int_list(value, context: str) -> list[int]:
    if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool)
                                              for v in value):
        raise BackendProtocolError(f"{context}: expected a list of integers")
    return [int(v) for v in value]


def parse_rle_pairs(value, context: str) -> list[tuple[int, int]]:
    if not isinstance(value, list):
        raise BackendProtocolError(f"{context}: RLE mask must be a list of [bit, length] pairs")
    pairs = []
    for entry in value:
        if (not isinstance(entry, (list, tuple)) or len(entry) != 2
                or not all(isinstance(v, int) and not isinstance(v, bool) for v in entry)):
            raise BackendProtocolError(f"{context}: RLE entry must be a [bit, length] pair")
        bit, length = int(entry[0]), int(entry[1])
        if bit not in (0, 1) or length < 1 or length > 0xFFFFFFFF:
            raise BackendProtocolError(f"{context}: invalid RLE pair [{bit}, {length}]")
        pairs.append((bit, length))
    return pairs


@dataclass(frozen=True)
class ScoreRequest:
    """Teacher-forced scoring of one continuation under an optional mask.

    ``mask`` is an inline RLE bitset, ``mask_ref`` an index into the batch
    mask table; both absent means unperturbed. ``want_bow_mass_at`` holds
    step indices relative to the continuation start; an index equal to the
    continuation length means the position after its last token.
    """

    feature_id: str
    prefix_tokens: tuple[int, ...]
    continuation_tokens: tuple[int, ...]
    want_bow_mass_at: tuple[int, ...] = ()
    mask: Optional[tuple[tuple[int, int], ...]] = None
    mask_ref: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "prefix_tokens", tuple(int(t) for t in self.prefix_tokens))
        object.__setattr__(self, "continuation_tokens",
                           tuple(int(t) for t in self.continuation_tokens))
        object.__setattr__(self, "want_bow_mass_at",
                           tuple(int(i) for i in self.want_bow_mass_at))
        if self.mask is not None:
            object.__setattr__(self, "mask", tuple((int(b), int(n)) for b, n in self.mask))
        if not self.continuation_tokens:
            raise ValueError("continuation_tokens must be non-empty")
        n = len(self.continuation_tokens)
        if any(i < 0 or i > n for i in self.want_bow_mass_at):
            raise ValueError("want_bow_mass_at indices must lie in [0, len(continuation)]")
        if self.mask is not None and self.mask_ref is not None:
            raise ValueError("a request may carry either an inline mask or a mask_ref, not both")

    def to_payload(self) -> dict:
        payload = {
            "feature_id": self.feature_id,
            "prefix_tokens": list(self.prefix_tokens),
            "continuation_tokens": list(self.continuation_tokens),
            "want_bow_mass_at": list(self.want_bow_mass_at),
            "mask": [list(p) for p in self.mask] if self.mask is not None else None,
        }
        if self.mask_ref is not None:
            payload["mask_ref"] = self.mask_ref
        return payload

    @classmethod
    def from_payload(cls, obj: dict) -> "ScoreRequest":
        context = "score request"
        feature_id = _require(obj, "feature_id", str, context)
        prefix = _int_list(_require(obj, "prefix_tokens", list, context), context)
        continuation = _int_list(_require(obj, "continuation_tokens", list, context), context)
        want = _int_list(obj.get("want_bow_mass_at", []), context)
        mask = obj.get("mask")
        mask_pairs = None if mask is None else tuple(parse_rle_pairs(mask, context))
        mask_ref = obj.get("mask_ref")
        if mask_ref is not None and (not isinstance(mask_ref, int) or isinstance(mask_ref, bool)
                                     or mask_ref < 0):
            raise BackendProtocolError(f"{context}: mask_ref must be a non-negative integer")
        try:
            return cls(feature_id=feature_id, prefix_tokens=tuple(prefix),
                       continuation_tokens=tuple(continuation),
                       want_bow_mass_at=tuple(want), mask=mask_pairs, mask_ref=mask_ref)
        except ValueError as exc:
            raise BackendProtocolError(f"{context}: {exc}") from exc


@dataclass(frozen=True)
class ScoreResponse:
    """Per-token probabilities plus requested word-boundary masses."""

    token_probs: tuple[float, ...]
    bow_masses: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        probs = tuple(float(p) for p in self.token_probs)
        object.__setattr__(self, "token_probs", probs)
        object.__setattr__(self, "bow_masses",
                           {int(k): float(v) for k, v in self.bow_masses.items()})
        for p in probs:
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"token probability {p} outside [0, 1]")
        for v in self.bow_masses.values():
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"boundary mass {v} outside [0, 1]")

    def to_payload(self) -> dict:
        return {
            "token_probs": list(self.token_probs),
            "bow_masses": {str(k): v for k, v in self.bow_masses.items()},
        }

    @classmethod
    def from_payload(cls, obj: dict) -> "ScoreResponse":
        context = "score response"
        probs = _require(obj, "token_probs", list, context)
        if not all(isinstance(p, (int, float)) and not isinstance(p, bool) for p in probs):
            raise BackendProtocolError(f"{context}: token_probs must be numbers")
        masses_raw = obj.get("bow_masses", {})
        if not isinstance(masses_raw, dict):
            raise BackendProtocolError(f"{context}: bow_masses must be an object")
        try:
            masses = {int(k): float(v) for k, v in masses_raw.items()}
            return cls(token_probs=tuple(float(p) for p in probs), bow_masses=masses)
        except (TypeError, ValueError) as exc:
            raise BackendProtocolError(f"{context}: {exc}") from exc


@dataclass(frozen=True)
class GenerateRequest:
    """Free decoding of one utterance under an optional mask."""

    feature_id: str
    mask: Optional[tuple[tuple[int, int], ...]] = None
    beam_size: int = DEFAULT_BEAM_SIZE
    no_repeat_ngram: int = DEFAULT_NO_REPEAT_NGRAM
    max_len: int = 256

    def __post_init__(self):
        if self.mask is not None:
            object.__setattr__(self, "mask", tuple((int(b), int(n)) for b, n in self.mask))
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.no_repeat_ngram < 0:
            raise ValueError("no_repeat_ngram must be >= 0")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")

    def to_payload(self) -> dict:
        return {
            "feature_id": self.feature_id,
            "mask": [list(p) for p in self.mask] if self.mask is not None else None,
            "beam_size": self.beam_size,
            "no_repeat_ngram": self.no_repeat_ngram,
            "max_len": self.max_len,
        }

    @classmethod
    def from_payload(cls, obj: dict) -> "GenerateRequest":
        context = "generate request"
        feature_id = _require(obj, "feature_id", str, context)
        mask = obj.get("mask")
        mask_pairs = None if mask is None else tuple(parse_rle_pairs(mask, context))
        beam = obj.get("beam_size", DEFAULT_BEAM_SIZE)
        ngram = obj.get("no_repeat_ngram", DEFAULT_NO_REPEAT_NGRAM)
        max_len = obj.get("max_len", 256)
        for name, value in (("beam_size", beam), ("no_repeat_ngram", ngram),
                            ("max_len", max_len)):
            if not isinstance(value, int) or isinstance(value, bool):
                raise BackendProtocolError(f"{context}: {name} must be an integer")
        try:
            return cls(feature_id=feature_id, mask=mask_pairs, beam_size=beam,
                       no_repeat_ngram=ngram, max_len=max_len)
        except ValueError as exc:
            raise BackendProtocolError(f"{context}: {exc}") from exc


@dataclass(frozen=True)
class GenerateResponse:
    tokens: tuple[int, ...]
    text: str

    def to_payload(self) -> dict:
        return {"tokens": list(self.tokens), "text": self.text}

    @classmethod
    def from_payload(cls, obj: dict) -> "GenerateResponse":
        context = "generate response"
        tokens = _int_list(_require(obj, "tokens", list, context), context)
        text = _require(obj, "text", str, context)
        return cls(tokens=tuple(tokens), text=text)


def tokenizer_info_to_payload(info: TokenizerInfo) -> dict:
    return {
        "vocab_size": info.vocab_size,
        "bow_token_ids": sorted(info.bow_token_ids),
        "punctuation_token_ids": sorted(info.punctuation_token_ids),
        "eos_token_id": info.eos_token_id,
        "token_surfaces": {str(k): v for k, v in sorted(info.token_surfaces.items())},
    }


def tokenizer_info_from_payload(obj: dict) -> TokenizerInfo:
    context = "handshake response"
    vocab_size = _require(obj, "vocab_size", int, context)
    bow = _int_list(_require(obj, "bow_token_ids", list, context), context)
    punct = _int_list(_require(obj, "punctuation_token_ids", list, context), context)
    eos = _require(obj, "eos_token_id", int, context)
    surfaces_raw = obj.get("token_surfaces", {})
    if not isinstance(surfaces_raw, dict):
        raise BackendProtocolError(f"{context}: token_surfaces must be an object")
    try:
        return TokenizerInfo(
            vocab_size=vocab_size,
            bow_token_ids=frozenset(bow),
            punctuation_token_ids=frozenset(punct),
            eos_token_id=eos,
            token_surfaces={int(k): str(v) for k, v in surfaces_raw.items()},
        )
    except ValueError as exc:
        raise BackendProtocolError(f"{context}: {exc}") from exc


def error_payload(code: str, message: str) -> dict:
    return {"error": {"code": code, "message": message}}
