"""Generic stdio protocol loop: expose any Backend over newline-delimited JSON."""

from __future__ import annotations

import base64
import binascii
import sys

from ..core import Spectrogram
from ..errors import (
    BackendProtocolError,
    DuplicateFeatureError,
    FeatureIOError,
    SpectrastError,
    TokenOutOfVocabError,
    UnknownFeatureError,
)
from ..features import decode_fbnk
from .base import Backend
from .protocol import (
    GenerateRequest,
    KIND_GENERATE,
    KIND_HANDSHAKE,
    KIND_LOAD_FEATURES,
    KIND_SCORE_BATCH,
    KIND_SHUTDOWN,
    KIND_TOKENIZE,
    PROTOCOL_VERSION,
    ScoreRequest,
    decode_line,
    encode_line,
    error_payload,
    parse_rle_pairs,
    tokenizer_info_to_payload,
)

_ERROR_CODES = (
    (DuplicateFeatureError, "duplicate_feature"),
    (UnknownFeatureError, "unknown_feature"),
    (TokenOutOfVocabError, "token_out_of_vocab"),
    (FeatureIOError, "bad_features"),
    (BackendProtocolError, "malformed_message"),
    (SpectrastError, "backend_error"),
    (ValueError, "invalid_argument"),
)


def _error_code(exc: Exception) -> str:
    for cls, code in _ERROR_CODES:
        if isinstance(exc, cls):
            return code
    return "internal"


def _handle(backend: Backend, message: dict) -> dict:
    kind = message.get("kind")
    if kind == KIND_HANDSHAKE:
        version = message.get("protocol_version")
        if version != PROTOCOL_VERSION:
            raise BackendProtocolError(
                f"protocol version mismatch: got {version!r}, serving {PROTOCOL_VERSION}"
            )
        payload = {"protocol_version": PROTOCOL_VERSION}
        payload["tokenizer"] = tokenizer_info_to_payload(backend.handshake())
        return payload
    if kind == KIND_LOAD_FEATURES:
        feature_id = message.get("feature_id")
        blob_b64 = message.get("fbnk_base64")
        if not isinstance(feature_id, str) or not isinstance(blob_b64, str):
            raise BackendProtocolError("load_features needs feature_id and fbnk_base64 strings")
        try:
            blob = base64.b64decode(blob_b64, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise BackendProtocolError(f"invalid base64 payload: {exc}") from exc
        backend.load_features(feature_id, Spectrogram(decode_fbnk(blob)))
        return {}
    if kind == KIND_SCORE_BATCH:
        raw_requests = message.get("requests")
        if not isinstance(raw_requests, list) or not raw_requests:
            raise BackendProtocolError("score_batch needs a non-empty requests list")
        raw_masks = message.get("masks", [])
        if not isinstance(raw_masks, list):
            raise BackendProtocolError("score_batch masks must be a list")
        mask_table = [parse_rle_pairs(m, "mask table entry") for m in raw_masks]
        requests = [ScoreRequest.from_payload(r) for r in raw_requests]
        responses = backend.score_batch(requests, mask_table=mask_table)
        return {"responses": [r.to_payload() for r in responses]}
    if kind == KIND_GENERATE:
        response = backend.generate(GenerateRequest.from_payload(message))
        return response.to_payload()
    if kind == KIND_TOKENIZE:
        text = message.get("text")
        if not isinstance(text, str):
            raise BackendProtocolError("tokenize needs a text string")
        return {"tokens": [int(t) for t in backend.tokenize(text)]}
    raise BackendProtocolError(f"unknown message kind {kind!r}")


def serve(backend: Backend, stdin=None, stdout=None) -> int:
    """Run the protocol loop until shutdown or end of input. Returns exit code."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        corr_id = None
        kind = None
        try:
            message = decode_line(line)
            corr_id = message.get("id")
            kind = message.get("kind")
            if not isinstance(corr_id, int) or isinstance(corr_id, bool):
                raise BackendProtocolError("message must carry an integer id")
            if kind == KIND_SHUTDOWN:
                stdout.write(encode_line({"id": corr_id, "kind": kind, "ok": True}))
                stdout.flush()
                backend.shutdown()
                return 0
            payload = _handle(backend, message)
            reply = {"id": corr_id, "kind": kind, "ok": True}
            reply.update(payload)
        except Exception as exc:  # protocol violations answered, never silent exit
            reply = {"id": corr_id if isinstance(corr_id, int) else -1,
                     "kind": kind if isinstance(kind, str) else "error",
                     "ok": False}
            reply.update(error_payload(_error_code(exc), str(exc)))
        stdout.write(encode_line(reply))
        stdout.flush()
    backend.shutdown()
    return 0
