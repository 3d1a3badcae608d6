"""Construction of planted-truth demo suites.

Each synthetic case utters a fixed sentence whose gendered word is split into
stem subwords plus one inflection suffix. Every stem subword is gated by its
own content rectangle (destroy the rectangle and the subword degrades to the
unknown token), while the suffix choice (target vs foil inflection) is driven
by the cue rectangle. Rectangles are placed in disjoint frame bands with
seeded jitter, so the planted answer differs per case.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .backend.synthetic import CellRect, SyntheticModelSpec, SyntheticSuite, save_suite
from .core import BOW_MARKER, ContrastCase, Spectrogram, TokenizerInfo
from .features import save_features
from .manifest import MANIFEST_COLUMNS

_B = BOW_MARKER

# stem pieces concatenate to the word minus its final vowel; suffix a=F, o=M
_WORD_PAIRS = (
    ("curiosissima", "curiosissimo", (f"{_B}cur", "ios", "iss", "im")),
    ("contentissima", "contentissimo", (f"{_B}cont", "ent", "iss", "im")),
    ("felicissima", "felicissimo", (f"{_B}fel", "ic", "iss", "im")),
    ("stanchissima", "stanchissimo", (f"{_B}stanch", "iss", "im")),
)

_COMMON_SURFACES = (
    f"{_B}sono", f"{_B}molto", f"{_B}oggi", f"{_B}qui", f"{_B}davvero",
    f"{_B}mare", f"{_B}sole", f"{_B}tempo", f"{_B}<unk>", "a", "o",
    ",", ".", "?", "</s>",
)


@dataclass(frozen=True)
class SuiteLayout:
    """Knobs for the generated suite geometry and size.

    Content rectangles are half the cue's area: sharper per-region bumps in
    the base-scorer map, so the holistic (content + cue) structure dominates
    its variance the way whole-utterance evidence dominates a real model.
    """

    n_cases: int = 20
    n_frames: int = 250
    n_bins: int = 80
    cue_frames: int = 30
    cue_bins: int = 20
    content_frames: int = 15
    content_bins: int = 20
    n_out_of_coverage: int = 0
    seed: int = 0


def build_tokenizer() -> tuple[TokenizerInfo, int]:
    """Deterministic vocabulary covering every suite word; returns (info, unk id)."""
    surfaces: list[str] = []
    for target, foil, stems in _WORD_PAIRS:
        del target, foil
        for piece in stems:
            if piece not in surfaces:
                surfaces.append(piece)
    for piece in _COMMON_SURFACES:
        if piece not in surfaces:
            surfaces.append(piece)
    eos_id = surfaces.index("</s>")
    unk_id = surfaces.index(f"{_B}<unk>")
    bow = frozenset(i for i, s in enumerate(surfaces) if s.startswith(_B))
    punct = frozenset(i for i, s in enumerate(surfaces) if s in (",", ".", "?"))
    info = TokenizerInfo(
        vocab_size=len(surfaces),
        bow_token_ids=bow,
        punctuation_token_ids=punct,
        eos_token_id=eos_id,
        token_surfaces={i: s for i, s in enumerate(surfaces)},
    )
    return info, unk_id


def _token_id(info: TokenizerInfo, surface: str) -> int:
    for token_id, s in info.token_surfaces.items():
        if s == surface:
            return token_id
    raise KeyError(surface)


def _place_regions(layout: SuiteLayout, rng: np.random.Generator,
                   n_regions: int) -> list[CellRect]:
    """One rectangle per disjoint frame band, with seeded jitter inside it."""
    band = layout.n_frames // n_regions
    if band < layout.cue_frames or band < layout.content_frames:
        raise ValueError("not enough frames to place the planted regions disjointly")
    order = rng.permutation(n_regions)
    rects = []
    for slot in order:
        height = layout.cue_frames if len(rects) == 0 else layout.content_frames
        width = layout.cue_bins if len(rects) == 0 else layout.content_bins
        f0 = int(slot) * band + int(rng.integers(0, band - height + 1))
        b0 = int(rng.integers(0, layout.n_bins - width + 1))
        rects.append(CellRect(f0, f0 + height, b0, b0 + width))
    return rects


def _make_features(layout: SuiteLayout, rng: np.random.Generator,
                   rects: list[CellRect]) -> Spectrogram:
    raw = rng.random((layout.n_frames, layout.n_bins))
    smooth = gaussian_filter(raw, sigma=2.0)
    lo, hi = smooth.min(), smooth.max()
    data = 0.1 + 0.6 * ((smooth - lo) / (hi - lo) if hi > lo else smooth * 0)
    for rect in rects:
        data[rect.frame_start:rect.frame_end, rect.bin_start:rect.bin_end] += 0.4
    return Spectrogram(data.astype(np.float32))


def build_synthetic_suite(layout: SuiteLayout = SuiteLayout()) -> tuple[
        SyntheticSuite, dict[str, Spectrogram], list[ContrastCase]]:
    """Suite spec, per-case features, and manifest cases for one seeded layout.

    The last ``n_out_of_coverage`` cases get manifest words from a different
    pair than the one their model utters, so the hypothesis contains neither
    annotated form.
    """
    info, unk_id = build_tokenizer()
    rng = np.random.default_rng(layout.seed)
    models: dict[str, SyntheticModelSpec] = {}
    features: dict[str, Spectrogram] = {}
    cases: list[ContrastCase] = []

    total = layout.n_cases + layout.n_out_of_coverage
    for index in range(total):
        case_id = f"case{index:03d}"
        pair_index = index % len(_WORD_PAIRS)
        feminine, masculine, stems = _WORD_PAIRS[pair_index]
        target_is_feminine = (index % 3) != 2  # mix of gold genders
        gender = "F" if target_is_feminine else "M"
        target_word, foil_word = ((feminine, masculine) if target_is_feminine
                                  else (masculine, feminine))
        target_suffix = "a" if target_is_feminine else "o"
        foil_suffix = "o" if target_is_feminine else "a"

        stem_ids = tuple(_token_id(info, s) for s in stems)
        template = (
            _token_id(info, f"{_B}sono"),
            _token_id(info, f"{_B}molto"),
            *stem_ids,
            _token_id(info, target_suffix),
            _token_id(info, f"{_B}oggi"),
            _token_id(info, "."),
        )
        slot_index = 2 + len(stem_ids)

        rects = _place_regions(layout, rng, n_regions=1 + len(stem_ids))
        cue = rects[0]
        content = tuple((rect, (tok,)) for rect, tok in zip(rects[1:], stem_ids))
        models[case_id] = SyntheticModelSpec(
            n_frames=layout.n_frames,
            n_bins=layout.n_bins,
            cue_region=cue,
            content_regions=content,
            template=template,
            slot_index=slot_index,
            foil_token=_token_id(info, foil_suffix),
        )
        features[case_id] = _make_features(layout, rng, rects)

        if index >= layout.n_cases:
            # annotate with a different word pair than the model utters
            other = _WORD_PAIRS[(pair_index + 1) % len(_WORD_PAIRS)]
            target_word, foil_word = ((other[0], other[1]) if target_is_feminine
                                      else (other[1], other[0]))
        reference = f"sono molto {target_word} oggi."
        cases.append(ContrastCase(
            case_id=case_id,
            features_path=f"{case_id}.fbnk",
            reference_text=reference,
            target_word=target_word,
            foil_word=foil_word,
            gender_of_target=gender,
            category=f"1{gender}",
        ))

    suite = SyntheticSuite(tokenizer=info, unk_token_id=unk_id, models=models)
    return suite, features, cases


def write_suite_files(suite: SyntheticSuite, features: dict[str, Spectrogram],
                      cases: list[ContrastCase], out_dir) -> dict[str, Path]:
    """Write the model spec, feature files, and manifest; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    suite_path = out_dir / "synthetic_suite.json"
    save_suite(suite, suite_path)
    for case in cases:
        save_features(features[case.case_id], out_dir / case.features_path)
    manifest_path = out_dir / "manifest.tsv"
    with manifest_path.open("w", encoding="utf-8") as stream:
        stream.write("\t".join(MANIFEST_COLUMNS) + "\n")
        for case in cases:
            stream.write("\t".join([
                case.case_id, case.features_path, case.reference_text,
                case.target_word, case.foil_word, case.gender_of_target,
                case.category,
            ]) + "\n")
    return {"suite": suite_path, "manifest": manifest_path, "dir": out_dir}
