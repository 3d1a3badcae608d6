"""Deterministic synthetic backend with planted ground truth.

The synthetic model emits a fixed token template with one contrast slot. The
probability of the slot's target token rises monotonically with the retained
energy of a designated cue rectangle, while each content word is emitted only
while its own content rectangle keeps enough energy (otherwise the
unknown-word token takes over). This gives attribution and deletion tests a
known answer: cue cells drive the target/foil choice, content cells drive
whether the words appear at all.

Probability law at one decoding step, with retained-energy fraction x of the
step's rectangle (x = 1 where no rectangle applies) and principal token pair
(target, foil) at the slot or (word, unknown) elsewhere:

    p(principal)    = (1 - rho) * (eps + (1 - 2*eps) * clamp(x, 0, 1))
    p(counterpart)  = (1 - rho) - p(principal)
    p(other tokens) = rho / (vocab_size - 2) each

After the last template step the distribution is a point mass on EOS.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..core import BOW_MARKER, Spectrogram, TokenizerInfo, detokenize
from ..errors import (
    BackendProtocolError,
    DuplicateFeatureError,
    TokenOutOfVocabError,
    UnknownFeatureError,
)
from ..perturbation import masked_intervals, runs_to_cells
from .base import Backend
from .protocol import GenerateRequest, GenerateResponse, ScoreRequest, ScoreResponse


@dataclass(frozen=True)
class CellRect:
    """Half-open cell rectangle [frame_start, frame_end) x [bin_start, bin_end)."""

    frame_start: int
    frame_end: int
    bin_start: int
    bin_end: int

    def __post_init__(self):
        if not (0 <= self.frame_start < self.frame_end):
            raise ValueError(f"invalid frame range [{self.frame_start}, {self.frame_end})")
        if not (0 <= self.bin_start < self.bin_end):
            raise ValueError(f"invalid bin range [{self.bin_start}, {self.bin_end})")

    def within(self, n_frames: int, n_bins: int) -> bool:
        return self.frame_end <= n_frames and self.bin_end <= n_bins

    def cell_count(self) -> int:
        return (self.frame_end - self.frame_start) * (self.bin_end - self.bin_start)

    def member_matrix(self, n_frames: int, n_bins: int) -> np.ndarray:
        out = np.zeros((n_frames, n_bins), dtype=bool)
        out[self.frame_start:self.frame_end, self.bin_start:self.bin_end] = True
        return out


@dataclass(frozen=True)
class SyntheticModelSpec:
    """Planted behavior for one utterance.

    ``template`` is the full output token sequence with the target token at
    ``slot_index``; ``foil_token`` is the slot's alternative. Each content
    region gates the consecutive template occurrence of its word tokens.
    """

    n_frames: int
    n_bins: int
    cue_region: CellRect
    content_regions: tuple[tuple[CellRect, tuple[int, ...]], ...]
    template: tuple[int, ...]
    slot_index: int
    foil_token: int
    epsilon: float = 0.05
    rho: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "template", tuple(int(t) for t in self.template))
        object.__setattr__(self, "content_regions", tuple(
            (rect, tuple(int(t) for t in word)) for rect, word in self.content_regions
        ))
        if not self.template:
            raise ValueError("template must be non-empty")
        if not (0 <= self.slot_index < len(self.template)):
            raise ValueError("slot_index outside the template")
        if self.foil_token == self.template[self.slot_index]:
            raise ValueError("foil token must differ from the slot's target token")
        if not self.cue_region.within(self.n_frames, self.n_bins):
            raise ValueError("cue region outside the spectrogram bounds")
        for rect, word in self.content_regions:
            if not rect.within(self.n_frames, self.n_bins):
                raise ValueError("content region outside the spectrogram bounds")
            if not word:
                raise ValueError("content regions need at least one word token")
        if not (0 < self.epsilon and 0 < self.rho and 2 * self.epsilon + self.rho < 1):
            raise ValueError("synthetic law requires 2*epsilon + rho < 1")

    @property
    def target_token(self) -> int:
        return self.template[self.slot_index]

    def step_gates(self) -> list[Optional[int]]:
        """Per template step: index into content_regions gating it, or None.

        The slot step is never content-gated; each content word gates the
        first non-overlapping occurrence of its token sequence.
        """
        gates: list[Optional[int]] = [None] * len(self.template)
        for region_index, (_, word) in enumerate(self.content_regions):
            placed = False
            for start in range(len(self.template) - len(word) + 1):
                steps = range(start, start + len(word))
                if self.slot_index in steps:
                    continue
                if any(gates[s] is not None for s in steps):
                    continue
                if self.template[start:start + len(word)] == word:
                    for s in steps:
                        gates[s] = region_index
                    placed = True
                    break
            if not placed:
                raise ValueError(
                    f"content word {word} not found in the template "
                    "(outside the slot, non-overlapping)"
                )
        return gates


@dataclass(frozen=True)
class SyntheticSuite:
    """A tokenizer plus per-feature planted models, shared by one backend."""

    tokenizer: TokenizerInfo
    unk_token_id: int
    models: dict[str, SyntheticModelSpec] = field(default_factory=dict)

    def __post_init__(self):
        if not (0 <= self.unk_token_id < self.tokenizer.vocab_size):
            raise ValueError("unk token outside the vocabulary")
        for feature_id, model in self.models.items():
            for tok in (*model.template, model.foil_token):
                if not (0 <= tok < self.tokenizer.vocab_size):
                    raise ValueError(f"model {feature_id!r}: token {tok} outside vocabulary")
            if self.unk_token_id in model.template:
                raise ValueError(f"model {feature_id!r}: template may not contain the unk token")
            if self.tokenizer.eos_token_id in model.template:
                raise ValueError(f"model {feature_id!r}: template may not contain EOS")
            model.step_gates()  # raises if content words cannot be placed


def _clamp01(x: float) -> float:
    return 0.0 if x < 0.0 else (1.0 if x > 1.0 else x)


def _principal_probability(fraction: float, epsilon: float, rho: float) -> float:
    return (1.0 - rho) * (epsilon + (1.0 - 2.0 * epsilon) * _clamp01(fraction))


def synthetic_step_distribution(model: SyntheticModelSpec, features: Spectrogram,
                                masked: Spectrogram, step: int,
                                vocab_size: int, unk_token_id: int,
                                eos_token_id: int) -> np.ndarray:
    """Full vocabulary distribution at one step, from explicit matrices.

    ``features`` is the registered (unmasked) spectrogram that defines the
    per-region baseline energies; ``masked`` is the perturbed input.
    """
    if step < 0 or step > len(model.template):
        raise ValueError("step outside template length + 1")
    dist = np.zeros(vocab_size, dtype=np.float64)
    if step == len(model.template):
        dist[eos_token_id] = 1.0
        return dist

    def region_fraction(rect: CellRect) -> float:
        member = rect.member_matrix(model.n_frames, model.n_bins)
        total = float(features.data[member].sum(dtype=np.float64))
        if total <= 0.0:
            raise ValueError("region has no energy in the registered features")
        return float(masked.data[member].sum(dtype=np.float64)) / total

    gates = model.step_gates()
    other = model.rho / (vocab_size - 2)
    dist[:] = other
    if step == model.slot_index:
        p_target = _principal_probability(region_fraction(model.cue_region),
                                          model.epsilon, model.rho)
        dist[model.target_token] = p_target
        dist[model.foil_token] = (1.0 - model.rho) - p_target
    else:
        token = model.template[step]
        gate = gates[step]
        fraction = 1.0 if gate is None else region_fraction(model.content_regions[gate][0])
        p_token = _principal_probability(fraction, model.epsilon, model.rho)
        dist[token] = p_token
        dist[unk_token_id] = (1.0 - model.rho) - p_token
    return dist


class _RegionTable:
    """Per-feature prefix sums for fast retained-energy fractions.

    Region 0 is the cue; regions 1..K follow the model's content regions.
    """

    def __init__(self, model: SyntheticModelSpec, features: Spectrogram):
        if features.data.shape != (model.n_frames, model.n_bins):
            raise ValueError(
                f"features are {features.data.shape}, model expects "
                f"({model.n_frames}, {model.n_bins})"
            )
        self.model = model
        self.gates = model.step_gates()
        self.n_cells = features.n_cells
        rects = [model.cue_region] + [rect for rect, _ in model.content_regions]
        flat = features.data.astype(np.float64).ravel()
        self.prefix = []
        self.totals = []
        for rect in rects:
            member = rect.member_matrix(model.n_frames, model.n_bins).ravel()
            energy = np.where(member, flat, 0.0)
            total = float(energy.sum())
            if total <= 0.0:
                raise ValueError("planted region has no energy; synthetic law undefined")
            prefix = np.zeros(self.n_cells + 1, dtype=np.float64)
            np.cumsum(energy, out=prefix[1:])
            self.prefix.append(prefix)
            self.totals.append(total)
        self.n_regions = len(rects)

    def fractions(self, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
        """Retained-energy fraction per region for one masked-interval set."""
        out = np.empty(self.n_regions, dtype=np.float64)
        for i in range(self.n_regions):
            p = self.prefix[i]
            removed = float((p[ends] - p[starts]).sum()) if len(starts) else 0.0
            out[i] = 1.0 - removed / self.totals[i]
        return out

    def fractions_batch(self, starts_all: np.ndarray, ends_all: np.ndarray,
                        owner: np.ndarray, n_masks: int) -> np.ndarray:
        """Retained fractions for many masks at once; shape (n_masks, regions).

        ``owner`` assigns each interval to its mask index.
        """
        out = np.empty((n_masks, self.n_regions), dtype=np.float64)
        for i in range(self.n_regions):
            p = self.prefix[i]
            removed = np.bincount(owner, weights=p[ends_all] - p[starts_all],
                                  minlength=n_masks) if len(owner) else np.zeros(n_masks)
            out[:, i] = 1.0 - removed / self.totals[i]
        return out


def _resolve_mask_intervals(mask, n_cells: int) -> tuple[np.ndarray, np.ndarray]:
    """Accept RLE pairs or precomputed (starts, ends) interval arrays."""
    if isinstance(mask, tuple) and len(mask) == 2 and isinstance(mask[0], np.ndarray):
        return mask
    return masked_intervals(runs_to_cells(list(mask), n_cells))


class SyntheticBackend(Backend):
    """In-process planted-truth oracle implementing the backend interface."""

    def __init__(self, suite: SyntheticSuite):
        self._suite = suite
        self._features: dict[str, bytes] = {}
        self._tables: dict[str, _RegionTable] = {}
        boundary = suite.tokenizer.boundary_token_ids
        self._n_boundary = len(boundary)
        self._boundary = boundary

    # -- interface ---------------------------------------------------------

    def handshake(self) -> TokenizerInfo:
        return self._suite.tokenizer

    def load_features(self, feature_id: str, features: Spectrogram) -> None:
        model = self._suite.models.get(feature_id)
        if model is None:
            raise UnknownFeatureError(f"no synthetic model for feature id {feature_id!r}")
        blob = features.data.tobytes()
        if feature_id in self._features:
            if self._features[feature_id] != blob:
                raise DuplicateFeatureError(
                    f"feature id {feature_id!r} already registered with different content"
                )
            return
        self._tables[feature_id] = _RegionTable(model, features)
        self._features[feature_id] = blob

    def score_batch(self, requests: Sequence[ScoreRequest],
                    mask_table: Optional[Sequence] = None) -> list[ScoreResponse]:
        table_fractions: dict[int, np.ndarray] = {}
        responses = []
        for request in requests:
            model, table = self._lookup(request.feature_id)
            self._check_tokens(request.prefix_tokens)
            self._check_tokens(request.continuation_tokens)
            if request.mask_ref is not None:
                if mask_table is None or not (0 <= request.mask_ref < len(mask_table)):
                    raise BackendProtocolError(
                        f"mask_ref {request.mask_ref} outside the batch mask table"
                    )
                key = request.mask_ref
                if key not in table_fractions:
                    starts, ends = _resolve_mask_intervals(mask_table[key], table.n_cells)
                    table_fractions[key] = table.fractions(starts, ends)
                fractions = table_fractions[key]
            elif request.mask is not None:
                starts, ends = _resolve_mask_intervals(request.mask, table.n_cells)
                fractions = table.fractions(starts, ends)
            else:
                fractions = np.ones(table.n_regions, dtype=np.float64)
            responses.append(self._score_one(model, table.gates, fractions, request))
        return responses

    def generate(self, request: GenerateRequest) -> GenerateResponse:
        model, table = self._lookup(request.feature_id)
        if request.mask is not None:
            starts, ends = _resolve_mask_intervals(request.mask, table.n_cells)
            fractions = table.fractions(starts, ends)
        else:
            fractions = np.ones(table.n_regions, dtype=np.float64)
        gates = table.gates
        tokens = []
        for step, token in enumerate(model.template):
            if len(tokens) >= request.max_len:
                break
            if step == model.slot_index:
                p_target = _principal_probability(fractions[0], model.epsilon, model.rho)
                p_foil = (1.0 - model.rho) - p_target
                if p_target > p_foil or (p_target == p_foil
                                         and model.target_token < model.foil_token):
                    tokens.append(model.target_token)
                else:
                    tokens.append(model.foil_token)
            else:
                gate = gates[step]
                fraction = 1.0 if gate is None else fractions[1 + gate]
                p_token = _principal_probability(fraction, model.epsilon, model.rho)
                p_unk = (1.0 - model.rho) - p_token
                unk = self._suite.unk_token_id
                if p_token > p_unk or (p_token == p_unk and token < unk):
                    tokens.append(token)
                else:
                    tokens.append(unk)
        text = detokenize(tokens, self._suite.tokenizer)
        return GenerateResponse(tokens=tuple(tokens), text=text)

    def tokenize(self, text: str) -> list[int]:
        return tokenize_greedy(text, self._suite.tokenizer)

    def shutdown(self) -> None:
        pass

    # -- internals ---------------------------------------------------------

    def _lookup(self, feature_id: str) -> tuple[SyntheticModelSpec, _RegionTable]:
        if feature_id not in self._tables:
            raise UnknownFeatureError(f"feature id {feature_id!r} was never registered")
        return self._suite.models[feature_id], self._tables[feature_id]

    def _check_tokens(self, tokens: Sequence[int]) -> None:
        vocab = self._suite.tokenizer.vocab_size
        for tok in tokens:
            if not (0 <= tok < vocab):
                raise TokenOutOfVocabError(f"token id {tok} outside vocabulary of {vocab}")

    def _step_probability(self, model: SyntheticModelSpec, gates, fractions: np.ndarray,
                          step: int, token: int) -> float:
        suite = self._suite
        vocab = suite.tokenizer.vocab_size
        other = model.rho / (vocab - 2)
        if step >= len(model.template):
            return 1.0 if token == suite.tokenizer.eos_token_id else 0.0
        if step == model.slot_index:
            p_target = _principal_probability(fractions[0], model.epsilon, model.rho)
            if token == model.target_token:
                return p_target
            if token == model.foil_token:
                return (1.0 - model.rho) - p_target
            return other
        template_token = model.template[step]
        gate = gates[step]
        fraction = 1.0 if gate is None else fractions[1 + gate]
        p_token = _principal_probability(fraction, model.epsilon, model.rho)
        if token == template_token:
            return p_token
        if token == suite.unk_token_id:
            return (1.0 - model.rho) - p_token
        return other

    def _boundary_mass(self, model: SyntheticModelSpec, gates, fractions: np.ndarray,
                       step: int) -> float:
        suite = self._suite
        vocab = suite.tokenizer.vocab_size
        boundary = self._boundary
        if step >= len(model.template):
            return 1.0  # point mass on EOS, which is a boundary token
        if step == model.slot_index:
            principal, counterpart = model.target_token, model.foil_token
            p_principal = _principal_probability(fractions[0], model.epsilon, model.rho)
        else:
            principal, counterpart = model.template[step], suite.unk_token_id
            gate = gates[step]
            fraction = 1.0 if gate is None else fractions[1 + gate]
            p_principal = _principal_probability(fraction, model.epsilon, model.rho)
        p_counterpart = (1.0 - model.rho) - p_principal
        other = model.rho / (vocab - 2)
        n_other_boundary = self._n_boundary
        mass = 0.0
        if principal in boundary:
            mass += p_principal
            n_other_boundary -= 1
        if counterpart in boundary:
            mass += p_counterpart
            n_other_boundary -= 1
        return mass + other * n_other_boundary

    def _score_one(self, model: SyntheticModelSpec, gates, fractions: np.ndarray,
                   request: ScoreRequest) -> ScoreResponse:
        base = len(request.prefix_tokens)
        probs = tuple(
            self._step_probability(model, gates, fractions, base + i, token)
            for i, token in enumerate(request.continuation_tokens)
        )
        masses = {
            i: self._boundary_mass(model, gates, fractions, base + i)
            for i in request.want_bow_mass_at
        }
        return ScoreResponse(token_probs=probs, bow_masses=masses)


def tokenize_greedy(text: str, info: TokenizerInfo) -> list[int]:
    """Greedy longest-match tokenization over the vocabulary surfaces."""
    by_surface: dict[str, int] = {}
    for token_id, surface in info.token_surfaces.items():
        if surface and (surface not in by_surface or token_id < by_surface[surface]):
            by_surface[surface] = token_id
    max_len = max((len(s) for s in by_surface), default=0)
    marked = BOW_MARKER + BOW_MARKER.join(text.split())
    tokens = []
    pos = 0
    while pos < len(marked):
        match = None
        for length in range(min(max_len, len(marked) - pos), 0, -1):
            candidate = marked[pos:pos + length]
            if candidate in by_surface:
                match = candidate
                break
        if match is None:
            raise ValueError(f"cannot tokenize {text!r}: no vocabulary piece at {marked[pos:]!r}")
        tokens.append(by_surface[match])
        pos += len(match)
    return tokens


# -- suite (de)serialization ------------------------------------------------

def _rect_to_json(rect: CellRect) -> list[int]:
    return [int(rect.frame_start), int(rect.frame_end),
            int(rect.bin_start), int(rect.bin_end)]


def _rect_from_json(obj) -> CellRect:
    return CellRect(*(int(v) for v in obj))


def suite_to_json(suite: SyntheticSuite) -> dict:
    info = suite.tokenizer
    return {
        "tokenizer": {
            "vocab_size": info.vocab_size,
            "bow_token_ids": sorted(info.bow_token_ids),
            "punctuation_token_ids": sorted(info.punctuation_token_ids),
            "eos_token_id": info.eos_token_id,
            "token_surfaces": {str(k): v for k, v in sorted(info.token_surfaces.items())},
        },
        "unk_token_id": suite.unk_token_id,
        "models": {
            feature_id: {
                "n_frames": m.n_frames,
                "n_bins": m.n_bins,
                "cue_region": _rect_to_json(m.cue_region),
                "content_regions": [
                    [_rect_to_json(rect), list(word)] for rect, word in m.content_regions
                ],
                "template": list(m.template),
                "slot_index": m.slot_index,
                "foil_token": m.foil_token,
                "epsilon": m.epsilon,
                "rho": m.rho,
            }
            for feature_id, m in sorted(suite.models.items())
        },
    }


def suite_from_json(obj: dict) -> SyntheticSuite:
    tok = obj["tokenizer"]
    tokenizer = TokenizerInfo(
        vocab_size=int(tok["vocab_size"]),
        bow_token_ids=frozenset(int(t) for t in tok["bow_token_ids"]),
        punctuation_token_ids=frozenset(int(t) for t in tok["punctuation_token_ids"]),
        eos_token_id=int(tok["eos_token_id"]),
        token_surfaces={int(k): str(v) for k, v in tok["token_surfaces"].items()},
    )
    models = {}
    for feature_id, m in obj["models"].items():
        models[feature_id] = SyntheticModelSpec(
            n_frames=int(m["n_frames"]),
            n_bins=int(m["n_bins"]),
            cue_region=_rect_from_json(m["cue_region"]),
            content_regions=tuple(
                (_rect_from_json(rect), tuple(int(t) for t in word))
                for rect, word in m["content_regions"]
            ),
            template=tuple(int(t) for t in m["template"]),
            slot_index=int(m["slot_index"]),
            foil_token=int(m["foil_token"]),
            epsilon=float(m["epsilon"]),
            rho=float(m["rho"]),
        )
    return SyntheticSuite(tokenizer=tokenizer, unk_token_id=int(obj["unk_token_id"]),
                          models=models)


def save_suite(suite: SyntheticSuite, path) -> None:
    Path(path).write_text(
        json.dumps(suite_to_json(suite), ensure_ascii=False, sort_keys=True, indent=1),
        encoding="utf-8",
    )


def load_suite(path) -> SyntheticSuite:
    return suite_from_json(json.loads(Path(path).read_text(encoding="utf-8")))
