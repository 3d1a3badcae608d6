"""Faithfulness harness: deletion curves, outcome detection, and statistics.

Cells are deleted in descending saliency order while the model re-decodes;
coverage tracks how often either contrast word survives in the output, and
flip rate tracks how often initially-target cases switch to the foil.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import betainc
from sklearn.base import BaseEstimator

from .backend.base import Backend
from .backend.protocol import GenerateRequest
from .core import ContrastCase, SaliencyMap, Spectrogram
from .errors import DegenerateStatisticsError, SpectrastError, UndefinedCorrelationError
from .features import load_features
from .perturbation import intervals_to_runs, masked_intervals

OUTCOME_TARGET = "target"
OUTCOME_FOIL = "foil"
OUTCOME_NEITHER = "neither"

_WORD_RE = re.compile(r"[^\W_]+", re.UNICODE)


@dataclass(frozen=True)
class DeletionConfig:
    """Deletion sweep: fraction step size, range cap, and the fill value.

    The default range stops at 20% of cells; set max_fraction to 1.0 for the
    full sweep (beyond ~20% the input is usually too degraded to be
    informative, but the full range stays available behind this flag).
    """

    step_fraction: float = 0.01
    max_fraction: float = 0.20
    fill_value: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.step_fraction <= self.max_fraction <= 1.0):
            raise ValueError("need 0 < step_fraction <= max_fraction <= 1")

    def fractions(self) -> tuple[float, ...]:
        """Evaluated fractions: 0 (anchor) plus every step up to the cap."""
        out = [0.0]
        i = 1
        while i * self.step_fraction <= self.max_fraction + 1e-9:
            out.append(i * self.step_fraction)
            i += 1
        return tuple(out)


@dataclass(frozen=True)
class EvalCurves:
    """Coverage and flip-rate series plus per-case outcome trajectories.

    ``flip_rate`` entries are None where no initially-target case remains
    covered (undefined, not zero).
    """

    fractions: tuple[float, ...]
    coverage: tuple[float, ...]
    flip_rate: tuple[Optional[float], ...]
    n_covered: tuple[int, ...]
    n_flipped: tuple[int, ...]
    case_ids: tuple[str, ...]
    per_case_outcomes: tuple[tuple[str, ...], ...]
    excluded_case_ids: tuple[str, ...] = ()
    failed_cases: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        n = len(self.fractions)
        for name in ("coverage", "flip_rate", "n_covered", "n_flipped"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length does not match the fraction steps")
        for row in self.per_case_outcomes:
            if len(row) != n:
                raise ValueError("per-case outcome rows must cover every step")


def deletion_order(saliency: SaliencyMap) -> np.ndarray:
    """Flat cell indices sorted by score descending; ties break row-major."""
    scores = saliency.scores.ravel()
    return np.argsort(-scores, kind="stable")


def delete_fraction(spec: Spectrogram, order: np.ndarray, fraction: float,
                    fill: float = 0.0) -> Spectrogram:
    """Set the first ceil(fraction * cells) cells of the order to the fill value."""
    if not (0.0 <= fraction <= 1.0):
        raise ValueError("fraction must lie in [0, 1]")
    order = np.asarray(order)
    if order.shape != (spec.n_cells,):
        raise ValueError("order must be a permutation of all cell indices")
    k = math.ceil(fraction * spec.n_cells)
    out = spec.data.copy()
    out.ravel()[order[:k]] = fill
    return Spectrogram(out)


def deleted_cell_mask(spec_cells: int, order: np.ndarray, fraction: float) -> np.ndarray:
    """Flat boolean vector of the cells removed at the given fraction."""
    k = math.ceil(fraction * spec_cells)
    mask = np.zeros(spec_cells, dtype=bool)
    mask[np.asarray(order)[:k]] = True
    return mask


def detect_outcome(hypothesis_text: str, target: str, foil: str) -> str:
    """Word-boundary, case-sensitive match; the earliest occurrence wins.

    Whitespace, punctuation, hyphens, and underscores all delimit words.
    """
    for word in _WORD_RE.findall(hypothesis_text):
        if word == target:
            return OUTCOME_TARGET
        if word == foil:
            return OUTCOME_FOIL
    return OUTCOME_NEITHER


def _generate_outcome(backend: Backend, case: ContrastCase, order: np.ndarray,
                      n_cells: int, fraction: float) -> str:
    if fraction <= 0.0:
        mask_pairs = None
    else:
        cells = deleted_cell_mask(n_cells, order, fraction)
        starts, ends = masked_intervals(cells)
        mask_pairs = tuple(intervals_to_runs(starts, ends, n_cells))
    response = backend.generate(GenerateRequest(feature_id=case.case_id, mask=mask_pairs))
    return detect_outcome(response.text, case.target_word, case.foil_word)


def run_deletion_eval(cases: Sequence[tuple[ContrastCase, SaliencyMap]],
                      backend: Backend, cfg: Optional[DeletionConfig] = None) -> EvalCurves:
    """Deletion curves over a case suite.

    Cases out of coverage at fraction 0 are excluded up front; backend
    failures drop the affected case and are reported on the curves. The flip
    denominator at each step is the covered subset of the cases that produced
    the target at fraction 0.
    """
    cfg = cfg or DeletionConfig()
    fractions = cfg.fractions()
    if cfg.fill_value != 0.0:
        raise SpectrastError(
            "backend masks zero cells; non-zero fill values are limited to "
            "local delete_fraction use"
        )

    kept_ids: list[str] = []
    trajectories: list[tuple[str, ...]] = []
    excluded: list[str] = []
    failed: list[tuple[str, str]] = []
    for case, saliency in cases:
        try:
            features = load_features(case.features_path)
            if saliency.scores.shape != features.data.shape:
                raise SpectrastError(
                    f"case {case.case_id!r}: saliency shape {saliency.scores.shape} "
                    f"does not match features {features.data.shape}"
                )
            backend.load_features(case.case_id, features)
            order = deletion_order(saliency)
            outcomes = [_generate_outcome(backend, case, order, features.n_cells, 0.0)]
            if outcomes[0] == OUTCOME_NEITHER:
                excluded.append(case.case_id)
                continue
            for fraction in fractions[1:]:
                outcomes.append(
                    _generate_outcome(backend, case, order, features.n_cells, fraction))
        except (SpectrastError, OSError) as exc:
            failed.append((case.case_id, str(exc)))
            continue
        kept_ids.append(case.case_id)
        trajectories.append(tuple(outcomes))

    n_cases = len(kept_ids)
    coverage: list[float] = []
    flip_rate: list[Optional[float]] = []
    n_covered: list[int] = []
    n_flipped: list[int] = []
    initially_target = [row[0] == OUTCOME_TARGET for row in trajectories]
    for step in range(len(fractions)):
        step_outcomes = [row[step] for row in trajectories]
        covered = sum(1 for o in step_outcomes if o != OUTCOME_NEITHER)
        n_covered.append(covered)
        coverage.append(covered / n_cases if n_cases else 0.0)
        flip_pool = [o for o, init in zip(step_outcomes, initially_target) if init]
        pool_covered = sum(1 for o in flip_pool if o != OUTCOME_NEITHER)
        flipped = sum(1 for o in flip_pool if o == OUTCOME_FOIL)
        n_flipped.append(flipped)
        flip_rate.append(flipped / pool_covered if pool_covered else None)

    return EvalCurves(
        fractions=fractions,
        coverage=tuple(coverage),
        flip_rate=tuple(flip_rate),
        n_covered=tuple(n_covered),
        n_flipped=tuple(n_flipped),
        case_ids=tuple(kept_ids),
        per_case_outcomes=tuple(trajectories),
        excluded_case_ids=tuple(excluded),
        failed_cases=tuple(failed),
    )


def pearson(a: Sequence[float], b: Sequence[float]) -> float:
    """Product-moment correlation of two equal-length series."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape or len(a) < 2:
        raise ValueError("pearson needs two equal-length series of length >= 2")
    da = a - a.mean()
    db = b - b.mean()
    denom = math.sqrt(float(da.dot(da)) * float(db.dot(db)))
    if denom == 0.0:
        raise UndefinedCorrelationError("correlation undefined for zero-variance input")
    return float(da.dot(db)) / denom


def map_correlation(map_a: SaliencyMap, map_b: SaliencyMap) -> float:
    if map_a.scores.shape != map_b.scores.shape:
        raise ValueError("saliency maps have different shapes")
    return pearson(map_a.scores.ravel(), map_b.scores.ravel())


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Two-sided paired t-test; p comes from the regularized incomplete beta.

    Identical series yield (0, 1); constant non-zero differences are
    degenerate (zero variance with non-zero mean has no finite t).
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape or len(a) < 2:
        raise ValueError("paired test needs two equal-length series of length >= 2")
    d = a - b
    n = len(d)
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        raise DegenerateStatisticsError(
            "paired differences are constant and non-zero; t is undefined"
        )
    t = mean / (sd / math.sqrt(n))
    df = n - 1
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return t, p


class DeletionEvaluator(BaseEstimator):
    """Estimator-style wrapper over the deletion harness."""

    def __init__(self, step_fraction=0.01, max_fraction=0.20, fill_value=0.0):
        self.step_fraction = step_fraction
        self.max_fraction = max_fraction
        self.fill_value = fill_value

    def config(self) -> DeletionConfig:
        return DeletionConfig(step_fraction=self.step_fraction,
                              max_fraction=self.max_fraction,
                              fill_value=self.fill_value)

    def fit(self, X=None, y=None):
        return self

    def evaluate(self, cases: Sequence[tuple[ContrastCase, SaliencyMap]],
                 backend: Backend) -> EvalCurves:
        return run_deletion_eval(cases, backend, self.config())
