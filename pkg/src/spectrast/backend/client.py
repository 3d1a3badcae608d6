"""Subprocess client for the wire protocol.

The client launches a backend command, sends one JSON object per line, and
matches replies by correlation id (out-of-order replies are buffered, so
backends may pipeline).
"""

from __future__ import annotations

import base64
import shlex
import subprocess
from typing import Optional, Sequence, Union

import numpy as np

from ..core import Spectrogram, TokenizerInfo
from ..errors import (
    BackendLaunchError,
    BackendProtocolError,
    DuplicateFeatureError,
    TokenOutOfVocabError,
    UnknownFeatureError,
)
from ..features import encode_fbnk
from ..perturbation import intervals_to_runs
from .base import Backend
from .protocol import (
    GenerateRequest,
    GenerateResponse,
    KIND_GENERATE,
    KIND_HANDSHAKE,
    KIND_LOAD_FEATURES,
    KIND_SCORE_BATCH,
    KIND_SHUTDOWN,
    KIND_TOKENIZE,
    PROTOCOL_VERSION,
    ScoreRequest,
    ScoreResponse,
    decode_line,
    encode_line,
    tokenizer_info_from_payload,
)

_ERROR_CLASSES = {
    "duplicate_feature": DuplicateFeatureError,
    "unknown_feature": UnknownFeatureError,
    "token_out_of_vocab": TokenOutOfVocabError,
}


def _mask_entry_to_pairs(entry, n_cells: Optional[int]) -> list[list[int]]:
    if isinstance(entry, tuple) and len(entry) == 2 and isinstance(entry[0], np.ndarray):
        if n_cells is None:
            raise ValueError("interval mask entries need the backend cell count")
        return [list(p) for p in intervals_to_runs(entry[0], entry[1], n_cells)]
    return [[int(b), int(n)] for b, n in entry]


class SubprocessBackend(Backend):
    """Backend adapter that talks to a subprocess over stdin/stdout."""

    def __init__(self, command: Union[str, Sequence[str]], cwd=None):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        if not argv:
            raise BackendLaunchError("empty backend command")
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                cwd=cwd,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            raise BackendLaunchError(f"cannot launch backend {argv[0]!r}: {exc}") from exc
        self._next_id = 0
        self._pending: dict[int, dict] = {}
        self._cell_counts: dict[str, int] = {}
        self._closed = False

    # -- plumbing ----------------------------------------------------------

    def _send(self, kind: str, payload: dict) -> int:
        if self._closed or self._proc.poll() is not None:
            raise BackendLaunchError("backend process is not running")
        corr_id = self._next_id
        self._next_id += 1
        message = {"id": corr_id, "kind": kind}
        message.update(payload)
        try:
            self._proc.stdin.write(encode_line(message))
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BackendLaunchError(f"backend pipe closed: {exc}") from exc
        return corr_id

    def _receive(self, corr_id: int) -> dict:
        if corr_id in self._pending:
            return self._pending.pop(corr_id)
        while True:
            line = self._proc.stdout.readline()
            if not line:
                code = self._proc.poll()
                raise BackendLaunchError(
                    f"backend closed its stdout (exit code {code})"
                )
            line = line.strip()
            if not line:
                continue
            reply = decode_line(line)
            reply_id = reply.get("id")
            if not isinstance(reply_id, int):
                raise BackendProtocolError("backend reply lacks an integer id")
            if reply_id == corr_id:
                return reply
            self._pending[reply_id] = reply

    def _call(self, kind: str, payload: dict) -> dict:
        reply = self._receive(self._send(kind, payload))
        if reply.get("ok") is True:
            return reply
        error = reply.get("error")
        if isinstance(error, dict):
            code = str(error.get("code", "backend_error"))
            message = str(error.get("message", ""))
            raise _ERROR_CLASSES.get(code, BackendProtocolError)(f"{code}: {message}")
        raise BackendProtocolError(f"backend reply is neither ok nor an error: {reply}")

    # -- interface ---------------------------------------------------------

    def handshake(self) -> TokenizerInfo:
        reply = self._call(KIND_HANDSHAKE, {"protocol_version": PROTOCOL_VERSION})
        if reply.get("protocol_version") != PROTOCOL_VERSION:
            raise BackendProtocolError(
                f"backend speaks protocol {reply.get('protocol_version')!r}, "
                f"client speaks {PROTOCOL_VERSION}"
            )
        tokenizer = reply.get("tokenizer")
        if not isinstance(tokenizer, dict):
            raise BackendProtocolError("handshake reply lacks tokenizer info")
        return tokenizer_info_from_payload(tokenizer)

    def load_features(self, feature_id: str, features: Spectrogram) -> None:
        blob = encode_fbnk(features.data)
        self._call(KIND_LOAD_FEATURES, {
            "feature_id": feature_id,
            "fbnk_base64": base64.b64encode(blob).decode("ascii"),
        })
        self._cell_counts[feature_id] = features.n_cells

    def score_batch(self, requests: Sequence[ScoreRequest],
                    mask_table: Optional[Sequence] = None) -> list[ScoreResponse]:
        if not requests:
            return []
        n_cells = self._cell_counts.get(requests[0].feature_id)
        payload = {"requests": [r.to_payload() for r in requests]}
        if mask_table is not None:
            payload["masks"] = [_mask_entry_to_pairs(m, n_cells) for m in mask_table]
        reply = self._call(KIND_SCORE_BATCH, payload)
        raw = reply.get("responses")
        if not isinstance(raw, list) or len(raw) != len(requests):
            raise BackendProtocolError(
                f"expected {len(requests)} score responses, got "
                f"{len(raw) if isinstance(raw, list) else type(raw)}"
            )
        responses = []
        for request, obj in zip(requests, raw):
            if not isinstance(obj, dict):
                raise BackendProtocolError("score response entries must be objects")
            response = ScoreResponse.from_payload(obj)
            if len(response.token_probs) != len(request.continuation_tokens):
                raise BackendProtocolError(
                    "score response token_probs length does not match the continuation"
                )
            missing = set(request.want_bow_mass_at) - set(response.bow_masses)
            if missing:
                raise BackendProtocolError(
                    f"score response lacks boundary masses at steps {sorted(missing)}"
                )
            responses.append(response)
        return responses

    def generate(self, request: GenerateRequest) -> GenerateResponse:
        reply = self._call(KIND_GENERATE, request.to_payload())
        return GenerateResponse.from_payload(reply)

    def tokenize(self, text: str) -> list[int]:
        reply = self._call(KIND_TOKENIZE, {"text": text})
        tokens = reply.get("tokens")
        if not isinstance(tokens, list) or not all(
                isinstance(t, int) and not isinstance(t, bool) for t in tokens):
            raise BackendProtocolError("tokenize reply must carry an integer token list")
        return [int(t) for t in tokens]

    def shutdown(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            if self._proc.poll() is None:
                self._proc.stdin.write(encode_line({"id": self._next_id,
                                                    "kind": KIND_SHUTDOWN}))
                self._proc.stdin.flush()
        except (BrokenPipeError, OSError):
            pass
        try:
            self._proc.wait(timeout=10)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()
