"""Abstract model-oracle interface.

A backend hosts a speech-to-text model: it registers feature matrices by id,
scores teacher-forced continuations under cell masks, and decodes freely. The
engine treats all backends uniformly, whether in-process or behind the wire
protocol.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Optional, Sequence

from ..core import Spectrogram, TokenizerInfo
from .protocol import GenerateRequest, GenerateResponse, ScoreRequest, ScoreResponse


class Backend(ABC):
    """Model oracle: scoring and generation for registered feature matrices."""

    @abstractmethod
    def handshake(self) -> TokenizerInfo:
        """Report vocabulary metadata; identical on every call."""

    @abstractmethod
    def load_features(self, feature_id: str, features: Spectrogram) -> None:
        """Register a feature matrix under an id. Re-registering identical
        content is idempotent; different content is an error."""

    @abstractmethod
    def score_batch(self, requests: Sequence[ScoreRequest],
                    mask_table: Optional[Sequence] = None) -> list[ScoreResponse]:
        """Score teacher-forced continuations. ``mask_table`` resolves the
        requests' ``mask_ref`` indices; entries are RLE (bit, run) pairs or
        precomputed (starts, ends) interval arrays."""

    @abstractmethod
    def generate(self, request: GenerateRequest) -> GenerateResponse:
        """Decode freely under the request's mask."""

    @abstractmethod
    def tokenize(self, text: str) -> list[int]:
        """Tokenize a surface string with the backend's own tokenizer."""

    def shutdown(self) -> None:
        """Release resources; further calls are undefined."""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.shutdown()
        return False
