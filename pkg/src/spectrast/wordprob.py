"""Subword-to-word probability aggregation and target/foil span location.

Word probabilities are reconstructed from subword token probabilities by one
of three methods: chain rule (product of token probabilities), length
normalization (nth root of the product), or word boundary (product corrected
by the probability that a word boundary follows, normalized by the boundary
probability at the word start). All evaluation happens in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .backend.protocol import ScoreRequest
from .core import BOW_MARKER, TokenizerInfo, detokenize
from .errors import (
    DegenerateConditioningError,
    PrefixOnlyMatchError,
    WordNotFoundError,
)

AGG_CHAIN_RULE = "chain_rule"
AGG_LENGTH_NORM = "length_norm"
AGG_WORD_BOUNDARY = "word_boundary"
AGGREGATION_METHODS = (AGG_CHAIN_RULE, AGG_LENGTH_NORM, AGG_WORD_BOUNDARY)

_COHERENCE_TOL = 1e-9


@dataclass(frozen=True)
class WordSpan:
    """Location of a word inside a hypothesis token sequence."""

    start_step: int
    token_ids: tuple[int, ...]
    surface: str

    def __post_init__(self):
        object.__setattr__(self, "token_ids", tuple(int(t) for t in self.token_ids))
        if not self.token_ids:
            raise ValueError("a word span needs at least one token")

    def __len__(self) -> int:
        return len(self.token_ids)


def _iter_words(tokens: Sequence[int], info: TokenizerInfo):
    """Yield (start, end, surface) for each maximal word in the hypothesis.

    A word starts at a begin-of-word token (or at index 0) and runs until the
    next begin-of-word, punctuation, or end-of-sequence token. Punctuation
    tokens are boundaries, not words.
    """
    boundary = info.boundary_token_ids
    punct_or_eos = info.punctuation_token_ids | {info.eos_token_id}
    start = None
    for i, tok in enumerate(tokens):
        if start is not None and tok in boundary:
            yield start, i, detokenize(tokens[start:i], info)
            start = None
        if tok in punct_or_eos:
            continue
        if start is None:
            start = i
    if start is not None:
        yield start, len(tokens), detokenize(tokens[start:], info)


def locate_word_span(hypothesis_tokens: Sequence[int], word_surface: str,
                     info: TokenizerInfo) -> WordSpan:
    """Find the first occurrence of a surface form as a complete word.

    The span starts at a begin-of-word token and the token following the span
    (if any) must itself be a word boundary. A surface that only shows up as
    the token-aligned prefix of a longer word raises PrefixOnlyMatchError.
    """
    if not word_surface:
        raise ValueError("word_surface must be non-empty")
    tokens = [int(t) for t in hypothesis_tokens]
    prefix_hazard = False
    for start, end, surface in _iter_words(tokens, info):
        if tokens[start] not in info.bow_token_ids:
            continue
        if surface == word_surface:
            return WordSpan(start_step=start, token_ids=tuple(tokens[start:end]),
                            surface=surface)
        if surface.startswith(word_surface):
            partial = ""
            for j in range(start, end):
                partial = (partial + info.surface(tokens[j])).replace(BOW_MARKER, "")
                if partial == word_surface:
                    prefix_hazard = True
                    break
    if prefix_hazard:
        raise PrefixOnlyMatchError(
            f"{word_surface!r} occurs only as the prefix of a longer word"
        )
    raise WordNotFoundError(f"{word_surface!r} does not occur in the hypothesis")


def aggregate_word_logprob(token_probs: Sequence[float], bow_first: float,
                           bow_next: float, method: str) -> float:
    """Log of the aggregated word probability (never underflows for valid input)."""
    if method not in AGGREGATION_METHODS:
        raise ValueError(f"unknown aggregation method {method!r}")
    probs = [float(p) for p in token_probs]
    if not probs:
        raise ValueError("token_probs must be non-empty")
    for p in probs:
        if not (0.0 <= p <= 1.0):
            raise ValueError(f"token probability {p} outside [0, 1]")
    log_product = sum(math.log(p) if p > 0.0 else -math.inf for p in probs)
    if method == AGG_CHAIN_RULE:
        return log_product
    if method == AGG_LENGTH_NORM:
        return log_product / len(probs)
    # word boundary
    bow_first = float(bow_first)
    bow_next = float(bow_next)
    if not (0.0 <= bow_first <= 1.0) or not (0.0 <= bow_next <= 1.0):
        raise ValueError("boundary masses must lie in [0, 1]")
    if bow_first <= 0.0:
        raise DegenerateConditioningError(
            "word-boundary aggregation requires a positive boundary mass at the word start"
        )
    if bow_next == 0.0:
        return -math.inf
    result = log_product + math.log(bow_next) - math.log(bow_first)
    if result > _COHERENCE_TOL:
        raise ValueError(
            f"incoherent boundary masses: aggregated probability exp({result}) exceeds 1"
        )
    return min(result, 0.0)


def aggregate_word_probability(token_probs: Sequence[float], bow_first: float,
                               bow_next: float, method: str) -> float:
    """Aggregated word probability in [0, 1].

    Computed in log space; the linear-domain result can round to zero only
    below float64's subnormal range (about 1e-308), in which case
    aggregate_word_logprob still carries the full value.
    """
    return math.exp(aggregate_word_logprob(token_probs, bow_first, bow_next, method))


def word_probability_from_response(response, n_tokens: int, method: str) -> float:
    """Aggregate one backend score response into a word probability."""
    if method == AGG_WORD_BOUNDARY:
        bow_first = response.bow_masses.get(0)
        bow_next = response.bow_masses.get(n_tokens)
        if bow_first is None or bow_next is None:
            raise ValueError("backend response lacks the requested boundary masses")
    else:
        bow_first, bow_next = 1.0, 1.0
    return aggregate_word_probability(response.token_probs, bow_first, bow_next, method)


def word_pair_probabilities(backend, feature_id: str, mask,
                            prefix: Sequence[int], target_span: WordSpan,
                            foil_tokens: Sequence[int], method: str,
                            info: TokenizerInfo) -> tuple[float, float]:
    """Aggregated probabilities of the target and foil words under one mask.

    Both words are scored with the same prefix (the hypothesis tokens before
    the target span), so differing token counts between target and foil are
    handled by construction. ``mask`` is an RLE cell bitset or None.
    """
    del info  # boundary masses come straight from the backend
    requests = []
    for tokens in (target_span.token_ids, tuple(int(t) for t in foil_tokens)):
        want = (0, len(tokens)) if method == AGG_WORD_BOUNDARY else ()
        requests.append(ScoreRequest(
            feature_id=feature_id,
            prefix_tokens=tuple(prefix),
            continuation_tokens=tokens,
            want_bow_mass_at=want,
            mask=tuple(mask) if mask is not None else None,
        ))
    resp_target, resp_foil = backend.score_batch(requests)
    p_target = word_probability_from_response(resp_target, len(target_span.token_ids), method)
    p_foil = word_probability_from_response(resp_foil, len(tuple(foil_tokens)), method)
    return p_target, p_foil
