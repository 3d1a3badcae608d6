"""Shared domain types: spectrograms, saliency maps, benchmark cases, tokenizer info.

All types are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .validation import check_matrix

SCORER_BASE = "base"
SCORER_DIFFERENCE = "difference"
SCORER_RELATIVE = "relative"
SCORER_KINDS = (SCORER_BASE, SCORER_DIFFERENCE, SCORER_RELATIVE)

GENDER_VALUES = ("F", "M")

BOW_MARKER = "▁"


@dataclass(frozen=True)
class Spectrogram:
    """Dense time x frequency matrix of filterbank energies.

    Rows are 10 ms frames, columns are filterbank channels. Data is stored as
    float32 so the binary file format round-trips bit-exactly.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = check_matrix(self.data, "spectrogram data", dtype=np.float32)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_bins(self) -> int:
        return self.data.shape[1]

    @property
    def n_cells(self) -> int:
        return self.data.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, Spectrogram):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)

    def __hash__(self):
        return hash((self.data.shape, self.data.tobytes()))


@dataclass(frozen=True)
class SaliencyMap:
    """Per-cell relevance scores over a spectrogram.

    ``foil_word`` is None for non-contrastive (base) maps. ``provenance``
    carries run metadata (aggregation method, seed, config digest) and does
    not participate in equality.
    """

    scores: np.ndarray
    scorer_kind: str
    target_word: str
    foil_word: Optional[str] = None
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        arr = check_matrix(self.scores, "saliency scores", dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "scores", arr)
        if self.scorer_kind not in SCORER_KINDS:
            raise ValueError(f"unknown scorer kind {self.scorer_kind!r}")
        if self.scorer_kind != SCORER_BASE and not self.foil_word:
            raise ValueError(f"{self.scorer_kind} maps require a foil word")

    @property
    def n_frames(self) -> int:
        return self.scores.shape[0]

    @property
    def n_bins(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True)
class ContrastCase:
    """One benchmark instance: an utterance plus its target/foil word pair."""

    case_id: str
    features_path: str
    reference_text: str
    target_word: str
    foil_word: str
    gender_of_target: str
    category: str

    def __post_init__(self):
        if not self.case_id:
            raise ValueError("case_id must be non-empty")
        if not self.target_word or not self.foil_word:
            raise ValueError(f"case {self.case_id!r}: target and foil must be non-empty")
        if self.target_word == self.foil_word:
            raise ValueError(f"case {self.case_id!r}: target and foil must differ")
        if self.gender_of_target not in GENDER_VALUES:
            raise ValueError(
                f"case {self.case_id!r}: gender_of_target must be one of {GENDER_VALUES}"
            )


@dataclass(frozen=True)
class TokenizerInfo:
    """Vocabulary metadata a backend reports during handshake."""

    vocab_size: int
    bow_token_ids: frozenset[int]
    punctuation_token_ids: frozenset[int]
    eos_token_id: int
    token_surfaces: dict[int, str] = field(default_factory=dict, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "bow_token_ids", frozenset(int(t) for t in self.bow_token_ids))
        object.__setattr__(
            self, "punctuation_token_ids",
            frozenset(int(t) for t in self.punctuation_token_ids),
        )
        object.__setattr__(
            self, "token_surfaces",
            {int(k): str(v) for k, v in self.token_surfaces.items()},
        )
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")
        in_range = lambda t: 0 <= t < self.vocab_size
        if not all(in_range(t) for t in self.bow_token_ids):
            raise ValueError("bow token ids outside [0, vocab_size)")
        if not all(in_range(t) for t in self.punctuation_token_ids):
            raise ValueError("punctuation token ids outside [0, vocab_size)")
        if not in_range(self.eos_token_id):
            raise ValueError("eos token id outside [0, vocab_size)")

    def surface(self, token_id: int) -> str:
        return self.token_surfaces.get(int(token_id), "")

    @property
    def boundary_token_ids(self) -> frozenset[int]:
        """Tokens that may legally follow a complete word: begin-of-word,
        punctuation, and end-of-sequence."""
        return self.bow_token_ids | self.punctuation_token_ids | {self.eos_token_id}


def detokenize(tokens, info: TokenizerInfo) -> str:
    """Concatenate token surfaces under the begin-of-word marker convention."""
    text = "".join(info.surface(t) for t in tokens if t != info.eos_token_id)
    return text.replace(BOW_MARKER, " ").strip()
