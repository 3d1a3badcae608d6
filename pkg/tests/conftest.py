"""Shared fixtures: tiny planted-truth suites used across test modules."""

import numpy as np
import pytest

from spectrast.backend.synthetic import (
    CellRect,
    SyntheticBackend,
    SyntheticModelSpec,
    SyntheticSuite,
)
from spectrast.core import BOW_MARKER, ContrastCase, Spectrogram, TokenizerInfo

B = BOW_MARKER

SIMPLE_SURFACES = [
    f"{B}sono", f"{B}bella", f"{B}bello", f"{B}oggi", f"{B}tavolo",
    f"{B}<unk>", "a", "o", ".", "</s>", f"{B}mare", f"{B}sole",
]


def simple_tokenizer() -> tuple[TokenizerInfo, int]:
    surfaces = SIMPLE_SURFACES
    info = TokenizerInfo(
        vocab_size=len(surfaces),
        bow_token_ids=frozenset(i for i, s in enumerate(surfaces) if s.startswith(B)),
        punctuation_token_ids=frozenset(i for i, s in enumerate(surfaces) if s == "."),
        eos_token_id=surfaces.index("</s>"),
        token_surfaces={i: s for i, s in enumerate(surfaces)},
    )
    return info, surfaces.index(f"{B}<unk>")


def tid(surface: str) -> int:
    return SIMPLE_SURFACES.index(surface)


@pytest.fixture(scope="session")
def simple_info():
    return simple_tokenizer()[0]


def single_token_suite() -> tuple[SyntheticSuite, Spectrogram]:
    """One utterance: 'sono bella oggi' with the slot choosing bella/bello.

    The cue rectangle drives the slot; a content rectangle gates 'oggi'.
    Features are all ones on a 20x10 grid.
    """
    info, unk = simple_tokenizer()
    model = SyntheticModelSpec(
        n_frames=20, n_bins=10,
        cue_region=CellRect(2, 8, 2, 8),
        content_regions=((CellRect(12, 18, 2, 8), (tid(f"{B}oggi"),)),),
        template=(tid(f"{B}sono"), tid(f"{B}bella"), tid(f"{B}oggi")),
        slot_index=1,
        foil_token=tid(f"{B}bello"),
    )
    suite = SyntheticSuite(tokenizer=info, unk_token_id=unk, models={"utt0": model})
    features = Spectrogram(np.ones((20, 10), dtype=np.float32))
    return suite, features


@pytest.fixture()
def single_token_backend():
    suite, features = single_token_suite()
    backend = SyntheticBackend(suite)
    backend.load_features("utt0", features)
    return backend, suite, features


@pytest.fixture()
def single_token_case():
    return ContrastCase(
        case_id="utt0", features_path="utt0.fbnk", reference_text="sono bella oggi",
        target_word="bella", foil_word="bello", gender_of_target="F", category="1F",
    )


PREFIX_SURFACES = [
    f"{B}la", f"{B}studente", "ssa", f"{B}oggi", f"{B}<unk>", "o", ".", "</s>",
    f"{B}mare",
]


def prefix_hazard_suite() -> tuple[SyntheticSuite, Spectrogram]:
    """Utterance 'la studentessa oggi': the produced word's first subword is
    itself a word elsewhere, the classic prefix hazard for word scoring."""
    surfaces = PREFIX_SURFACES
    info = TokenizerInfo(
        vocab_size=len(surfaces),
        bow_token_ids=frozenset(i for i, s in enumerate(surfaces) if s.startswith(B)),
        punctuation_token_ids=frozenset({surfaces.index(".")}),
        eos_token_id=surfaces.index("</s>"),
        token_surfaces={i: s for i, s in enumerate(surfaces)},
    )
    model = SyntheticModelSpec(
        n_frames=20, n_bins=10,
        cue_region=CellRect(2, 8, 2, 8),
        content_regions=(),
        template=(surfaces.index(f"{B}la"), surfaces.index(f"{B}studente"),
                  surfaces.index("ssa"), surfaces.index(f"{B}oggi")),
        slot_index=2,
        foil_token=surfaces.index("o"),
    )
    suite = SyntheticSuite(tokenizer=info, unk_token_id=surfaces.index(f"{B}<unk>"),
                           models={"utt1": model})
    return suite, Spectrogram(np.ones((20, 10), dtype=np.float32))


@pytest.fixture()
def prefix_hazard_backend():
    suite, features = prefix_hazard_suite()
    backend = SyntheticBackend(suite)
    backend.load_features("utt1", features)
    return backend, suite, features


def full_mask_rle(n_cells: int):
    return ((1, n_cells),)
