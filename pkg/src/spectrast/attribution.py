"""Contrastive scoring functions, per-segment aggregation, and the explain pipeline.

Three scorers quantify how a perturbation moved the model:

* base:        p(t) - p~(t)
* difference:  (p(t) - p~(t)) - (p(f) - p~(f))
* relative:    p(t)/(p(t)+p(f)) - p~(t)/(p~(t)+p~(f))

where p is the unperturbed and p~ the perturbed word probability of target t
and foil f. Per-segment relevance is the mean score over the masks occluding
that segment (compensated summation, so results are independent of mask
evaluation order); the final map averages the per-cell segment scores across
segmentation levels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator

from .backend.base import Backend
from .backend.protocol import GenerateRequest, ScoreRequest
from .core import (
    ContrastCase,
    SCORER_BASE,
    SCORER_DIFFERENCE,
    SCORER_KINDS,
    SCORER_RELATIVE,
    SaliencyMap,
    Spectrogram,
    TokenizerInfo,
)
from .errors import OutOfCoverageError, PrefixOnlyMatchError, WordNotFoundError
from .features import load_features
from .perturbation import PerturbationMask, PerturbationPlan, masked_intervals, sample_mask_matrix
from .segmentation import (
    DEFAULT_FRAME_THRESHOLD,
    DEFAULT_LEVEL_TARGETS,
    SegmentMap,
    SegmentationConfig,
    multi_level_segment,
)
from .wordprob import (
    AGG_WORD_BOUNDARY,
    AGGREGATION_METHODS,
    WordSpan,
    locate_word_span,
    word_pair_probabilities,
    word_probability_from_response,
)

DEFAULT_MAX_DECODE_LEN = 256
_SCORE_CHUNK = 512


@dataclass(frozen=True)
class ScorerKind:
    """Scoring function selector; epsilon guards the relative scorer's ratios."""

    kind: str = SCORER_RELATIVE
    epsilon: float = 1e-12

    def __post_init__(self):
        if self.kind not in SCORER_KINDS:
            raise ValueError(f"unknown scorer kind {self.kind!r}")
        if not (self.epsilon > 0):
            raise ValueError("epsilon must be > 0")


@dataclass(frozen=True)
class MaskScore:
    """Score of one perturbation pass, aligned with its mask by index."""

    mask_index: int
    score: float

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError(f"mask {self.mask_index}: score must be finite")


def _as_scorer(scorer: Union[str, ScorerKind]) -> ScorerKind:
    return scorer if isinstance(scorer, ScorerKind) else ScorerKind(kind=str(scorer))


def base_score(p_t, p_t_perturbed):
    """Drop in target probability caused by the perturbation."""
    result = np.asarray(p_t, dtype=np.float64) - np.asarray(p_t_perturbed, dtype=np.float64)
    return float(result) if result.ndim == 0 else result


def difference_score(p_t, p_t_perturbed, p_f, p_f_perturbed):
    """Target drop minus foil drop."""
    result = (np.asarray(p_t, dtype=np.float64) - np.asarray(p_t_perturbed, dtype=np.float64)) \
        - (np.asarray(p_f, dtype=np.float64) - np.asarray(p_f_perturbed, dtype=np.float64))
    return float(result) if result.ndim == 0 else result


def _pair_ratio(p_t, p_f, eps: float):
    numerator = np.asarray(p_t, dtype=np.float64)
    denominator = numerator + np.asarray(p_f, dtype=np.float64)
    degenerate = (numerator < eps) & (denominator < eps)
    safe = numerator / np.maximum(denominator, eps)
    return np.where(degenerate, 0.5, safe)


def relative_score(p_t, p_t_perturbed, p_f, p_f_perturbed, eps: float = 1e-12):
    """Shift of the target's share of the target+foil probability mass.

    Each ratio's denominator is floored at eps; a ratio with both numerator
    and denominator below eps is taken as 0.5 (maximal uncertainty).
    """
    result = _pair_ratio(p_t, p_f, eps) - _pair_ratio(p_t_perturbed, p_f_perturbed, eps)
    return float(result) if result.ndim == 0 else result


def compute_scores(scorer: Union[str, ScorerKind], p_t, p_t_perturbed, p_f, p_f_perturbed):
    scorer = _as_scorer(scorer)
    if scorer.kind == SCORER_BASE:
        return base_score(p_t, p_t_perturbed)
    if scorer.kind == SCORER_DIFFERENCE:
        return difference_score(p_t, p_t_perturbed, p_f, p_f_perturbed)
    return relative_score(p_t, p_t_perturbed, p_f, p_f_perturbed, eps=scorer.epsilon)


def _kahan_add(sums: np.ndarray, compensation: np.ndarray, counts: np.ndarray,
               idx: np.ndarray, value: float) -> None:
    y = value - compensation[idx]
    t = sums[idx] + y
    compensation[idx] = (t - sums[idx]) - y
    sums[idx] = t
    counts[idx] += 1


def _finish_means(sums: np.ndarray, counts: np.ndarray) -> np.ndarray:
    return np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)


def aggregate_segment_scores(masks: Sequence[PerturbationMask],
                             scores: Sequence[MaskScore],
                             seg: SegmentMap) -> np.ndarray:
    """Mean score per segment over the masks that occlude it; never-masked
    segments score 0."""
    if len(masks) != len(scores):
        raise ValueError(f"{len(masks)} masks vs {len(scores)} scores")
    sums = np.zeros(seg.n_segments, dtype=np.float64)
    compensation = np.zeros(seg.n_segments, dtype=np.float64)
    counts = np.zeros(seg.n_segments, dtype=np.int64)
    for mask, mask_score in zip(masks, scores):
        if not mask.masked_segments:
            continue
        idx = np.sort(np.fromiter(mask.masked_segments, dtype=np.int64))
        if idx[0] < 0 or idx[-1] >= seg.n_segments:
            raise ValueError("mask references segments outside this level")
        _kahan_add(sums, compensation, counts, idx, float(mask_score.score))
    return _finish_means(sums, counts)


def aggregate_segment_scores_matrix(members: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Matrix form: boolean membership (masks x segments) and a score per mask."""
    n_masks, n_segments = members.shape
    if len(scores) != n_masks:
        raise ValueError(f"{n_masks} masks vs {len(scores)} scores")
    sums = np.zeros(n_segments, dtype=np.float64)
    compensation = np.zeros(n_segments, dtype=np.float64)
    counts = np.zeros(n_segments, dtype=np.int64)
    for i in range(n_masks):
        idx = np.flatnonzero(members[i])
        if len(idx):
            _kahan_add(sums, compensation, counts, idx, float(scores[i]))
    return _finish_means(sums, counts)


def assemble_saliency(levels: Sequence[tuple[SegmentMap, np.ndarray]],
                      scorer_kind: str = SCORER_BASE, target_word: str = "",
                      foil_word: Optional[str] = None,
                      provenance: Optional[dict] = None) -> SaliencyMap:
    """Per-cell mean over levels of the score of the segment containing the cell."""
    if not levels:
        raise ValueError("need at least one level")
    shape = levels[0][0].labels.shape
    per_level = []
    for seg, seg_scores in levels:
        if seg.labels.shape != shape:
            raise ValueError("levels disagree on the spectrogram shape")
        seg_scores = np.asarray(seg_scores, dtype=np.float64)
        if len(seg_scores) != seg.n_segments:
            raise ValueError("segment scores length does not match the segment count")
        per_level.append(seg_scores[seg.labels])
    cell_scores = np.mean(np.stack(per_level, axis=0), axis=0)
    return SaliencyMap(scores=cell_scores, scorer_kind=scorer_kind,
                       target_word=target_word, foil_word=foil_word,
                       provenance=provenance or {})


@dataclass(frozen=True)
class CasePreparation:
    """Everything explain needs after the unmasked decode of one case."""

    features: Spectrogram
    info: TokenizerInfo
    hypothesis_tokens: tuple[int, ...]
    hypothesis_text: str
    span: WordSpan
    produced_word: str
    alternative_word: str
    foil_tokens: tuple[int, ...]
    prefix: tuple[int, ...]


def prepare_case(case: ContrastCase, backend: Backend,
                 features: Optional[Spectrogram] = None,
                 info: Optional[TokenizerInfo] = None,
                 max_decode_len: int = DEFAULT_MAX_DECODE_LEN) -> CasePreparation:
    """Register features, decode the hypothesis, and locate the contrast pair.

    If the hypothesis contains the case's target, the contrast is explained
    as annotated; if it contains only the foil, the roles swap (the produced
    word is always the one being explained). Neither present is an
    out-of-coverage error.
    """
    if features is None:
        features = load_features(case.features_path)
    backend.load_features(case.case_id, features)
    if info is None:
        info = backend.handshake()
    decoded = backend.generate(GenerateRequest(feature_id=case.case_id, mask=None,
                                               max_len=max_decode_len))
    span = None
    for produced, alternative in ((case.target_word, case.foil_word),
                                  (case.foil_word, case.target_word)):
        try:
            span = locate_word_span(decoded.tokens, produced, info)
            break
        except (WordNotFoundError, PrefixOnlyMatchError):
            continue
    if span is None:
        raise OutOfCoverageError(
            f"case {case.case_id!r}: hypothesis {decoded.text!r} contains neither "
            f"{case.target_word!r} nor {case.foil_word!r}"
        )
    foil_tokens = tuple(backend.tokenize(alternative))
    return CasePreparation(
        features=features,
        info=info,
        hypothesis_tokens=decoded.tokens,
        hypothesis_text=decoded.text,
        span=span,
        produced_word=produced,
        alternative_word=alternative,
        foil_tokens=foil_tokens,
        prefix=decoded.tokens[:span.start_step],
    )


def _score_masks_for_level(backend: Backend, feature_id: str, seg: SegmentMap,
                           members: np.ndarray, prep: CasePreparation,
                           method: str) -> tuple[np.ndarray, np.ndarray]:
    """Perturbed word probabilities (target, foil) for every mask of one level."""
    labels_flat = seg.labels.ravel()
    n_masks = members.shape[0]
    target_tokens = prep.span.token_ids
    foil_tokens = prep.foil_tokens
    want_target = (0, len(target_tokens)) if method == AGG_WORD_BOUNDARY else ()
    want_foil = (0, len(foil_tokens)) if method == AGG_WORD_BOUNDARY else ()
    p_target = np.empty(n_masks, dtype=np.float64)
    p_foil = np.empty(n_masks, dtype=np.float64)
    for chunk_start in range(0, n_masks, _SCORE_CHUNK):
        chunk = range(chunk_start, min(chunk_start + _SCORE_CHUNK, n_masks))
        mask_table = [masked_intervals(members[i][labels_flat]) for i in chunk]
        requests = []
        for ref in range(len(mask_table)):
            requests.append(ScoreRequest(
                feature_id=feature_id, prefix_tokens=prep.prefix,
                continuation_tokens=target_tokens, want_bow_mass_at=want_target,
                mask_ref=ref,
            ))
        for ref in range(len(mask_table)):
            requests.append(ScoreRequest(
                feature_id=feature_id, prefix_tokens=prep.prefix,
                continuation_tokens=foil_tokens, want_bow_mass_at=want_foil,
                mask_ref=ref,
            ))
        responses = backend.score_batch(requests, mask_table=mask_table)
        half = len(mask_table)
        for offset, i in enumerate(chunk):
            p_target[i] = word_probability_from_response(
                responses[offset], len(target_tokens), method)
            p_foil[i] = word_probability_from_response(
                responses[half + offset], len(foil_tokens), method)
    return p_target, p_foil


def explain_many(case: ContrastCase, backend: Backend,
                 scorers: Sequence[Union[str, ScorerKind]],
                 aggregation: str = AGG_WORD_BOUNDARY,
                 segmentation: Optional[SegmentationConfig] = None,
                 plan: Optional[PerturbationPlan] = None,
                 features: Optional[Spectrogram] = None,
                 info: Optional[TokenizerInfo] = None) -> dict[str, SaliencyMap]:
    """Explain one case under several scorers, sharing masks and model calls.

    The perturbed probabilities depend only on (case, seed, plan), so every
    scorer sees identical inputs; explain() for a single scorer is bitwise
    identical to its entry here.
    """
    if aggregation not in AGGREGATION_METHODS:
        raise ValueError(f"unknown aggregation method {aggregation!r}")
    scorer_kinds = [_as_scorer(s) for s in scorers]
    if len({s.kind for s in scorer_kinds}) != len(scorer_kinds):
        raise ValueError("duplicate scorer kinds")
    segmentation = segmentation or SegmentationConfig()
    plan = plan or PerturbationPlan()

    prep = prepare_case(case, backend, features=features, info=info)
    p_t, p_f = word_pair_probabilities(
        backend, case.case_id, None, prep.prefix, prep.span, prep.foil_tokens,
        aggregation, prep.info)

    levels = multi_level_segment(prep.features, segmentation)
    matrices = sample_mask_matrix(levels, plan)

    per_scorer_levels: dict[str, list[tuple[SegmentMap, np.ndarray]]] = {
        s.kind: [] for s in scorer_kinds
    }
    for seg, members in zip(levels, matrices):
        pt_pert, pf_pert = _score_masks_for_level(
            backend, case.case_id, seg, members, prep, aggregation)
        for scorer in scorer_kinds:
            scores = compute_scores(scorer, p_t, pt_pert, p_f, pf_pert)
            seg_scores = aggregate_segment_scores_matrix(members, scores)
            per_scorer_levels[scorer.kind].append((seg, seg_scores))

    maps = {}
    for scorer in scorer_kinds:
        provenance = {
            "case_id": case.case_id,
            "scorer": scorer.kind,
            "aggregation": aggregation,
            "seed": plan.seed,
            "n_masks_total": plan.n_masks_total,
            "mask_probability": plan.mask_probability,
            "level_targets": list(segmentation.level_targets),
            "produced_word": prep.produced_word,
            "alternative_word": prep.alternative_word,
            "hypothesis_text": prep.hypothesis_text,
            "p_target_unmasked": p_t,
            "p_foil_unmasked": p_f,
        }
        if scorer.kind == SCORER_RELATIVE:
            provenance["relative_epsilon"] = scorer.epsilon
        maps[scorer.kind] = assemble_saliency(
            per_scorer_levels[scorer.kind],
            scorer_kind=scorer.kind,
            target_word=prep.produced_word,
            foil_word=None if scorer.kind == SCORER_BASE else prep.alternative_word,
            provenance=provenance,
        )
    return maps


def explain(case: ContrastCase, backend: Backend,
            scorer: Union[str, ScorerKind] = SCORER_RELATIVE,
            aggregation: str = AGG_WORD_BOUNDARY,
            segmentation: Optional[SegmentationConfig] = None,
            plan: Optional[PerturbationPlan] = None,
            features: Optional[Spectrogram] = None,
            info: Optional[TokenizerInfo] = None) -> SaliencyMap:
    """End-to-end contrastive explanation of one benchmark case."""
    scorer = _as_scorer(scorer)
    maps = explain_many(case, backend, [scorer], aggregation=aggregation,
                        segmentation=segmentation, plan=plan, features=features,
                        info=info)
    return maps[scorer.kind]


class ContrastiveExplainer(BaseEstimator):
    """Estimator-style wrapper over the explain pipeline.

    fit() performs the backend handshake and caches the tokenizer info;
    transform() maps benchmark cases to saliency maps.
    """

    def __init__(self, scorer=SCORER_RELATIVE, aggregation=AGG_WORD_BOUNDARY,
                 relative_epsilon=1e-12, n_masks=20000, mask_probability=0.5,
                 seed=0, masks_per_level=None, level_targets=DEFAULT_LEVEL_TARGETS,
                 frame_threshold=DEFAULT_FRAME_THRESHOLD, compactness=0.1,
                 max_iterations=10, smoothing_sigma=0.0):
        self.scorer = scorer
        self.aggregation = aggregation
        self.relative_epsilon = relative_epsilon
        self.n_masks = n_masks
        self.mask_probability = mask_probability
        self.seed = seed
        self.masks_per_level = masks_per_level
        self.level_targets = level_targets
        self.frame_threshold = frame_threshold
        self.compactness = compactness
        self.max_iterations = max_iterations
        self.smoothing_sigma = smoothing_sigma

    def scorer_kind(self) -> ScorerKind:
        return ScorerKind(kind=self.scorer, epsilon=self.relative_epsilon)

    def segmentation_config(self) -> SegmentationConfig:
        return SegmentationConfig(
            level_targets=tuple(self.level_targets),
            frame_threshold=self.frame_threshold,
            compactness=self.compactness,
            max_iterations=self.max_iterations,
            smoothing_sigma=self.smoothing_sigma,
        )

    def perturbation_plan(self) -> PerturbationPlan:
        masks_per_level = self.masks_per_level
        if masks_per_level is not None:
            masks_per_level = tuple(masks_per_level)
        return PerturbationPlan(
            n_masks_total=self.n_masks,
            mask_probability=self.mask_probability,
            seed=self.seed,
            masks_per_level=masks_per_level,
        )

    def fit(self, backend: Backend, y=None):
        self.backend_ = backend
        self.tokenizer_info_ = backend.handshake()
        return self

    def _check_fitted(self):
        if not hasattr(self, "backend_"):
            raise RuntimeError("this explainer is not fitted; call fit(backend) first")

    def explain(self, case: ContrastCase,
                features: Optional[Spectrogram] = None) -> SaliencyMap:
        self._check_fitted()
        return explain(case, self.backend_, scorer=self.scorer_kind(),
                       aggregation=self.aggregation,
                       segmentation=self.segmentation_config(),
                       plan=self.perturbation_plan(), features=features,
                       info=self.tokenizer_info_)

    def transform(self, cases: Sequence[ContrastCase]) -> list[SaliencyMap]:
        return [self.explain(case) for case in cases]
