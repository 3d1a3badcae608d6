"""Drive the TypeScript reference bridge through the Python client.

Skipped unless the bridge has been built (`cd bridge && npm install && npm
run build`). Exercises every message kind over the real pipes; no semantic
expectations are placed on the bridge's miniature model beyond the protocol
contracts (probabilities in range, determinism, id echo).
"""

import shutil
from pathlib import Path

import numpy as np
import pytest

from spectrast.backend.client import SubprocessBackend
from spectrast.backend.protocol import GenerateRequest, ScoreRequest
from spectrast.core import Spectrogram
from spectrast.errors import DuplicateFeatureError, UnknownFeatureError

BRIDGE_DIR = Path(__file__).parent.parent / "bridge"
SERVER = BRIDGE_DIR / "dist" / "server.js"
CHECKPOINT = BRIDGE_DIR / "checkpoints" / "demo.json"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not SERVER.exists() or not CHECKPOINT.exists(),
    reason="bridge not built (cd bridge && npm install && npm run build)",
)


@pytest.fixture()
def bridge_backend():
    backend = SubprocessBackend(["node", str(SERVER), "--checkpoint", str(CHECKPOINT)])
    yield backend
    backend.shutdown()


def bridge_features(seed=0) -> Spectrogram:
    rng = np.random.default_rng(seed)
    return Spectrogram((rng.random((10, 20)) + 0.25).astype(np.float32))


def test_full_session_against_bridge(bridge_backend):
    backend = bridge_backend
    info = backend.handshake()
    assert info.vocab_size == 24
    assert info.bow_token_ids and info.punctuation_token_ids
    assert info == backend.handshake()

    features = bridge_features()
    backend.load_features("u0", features)
    backend.load_features("u0", features)  # idempotent
    with pytest.raises(DuplicateFeatureError):
        backend.load_features("u0", Spectrogram(features.data * np.float32(2.0)))

    request = ScoreRequest(feature_id="u0", prefix_tokens=(0,),
                           continuation_tokens=(2, 3), want_bow_mass_at=(0, 2))
    first, = backend.score_batch([request])
    again, = backend.score_batch([request])
    assert first == again  # deterministic across identical requests
    assert all(0.0 <= p <= 1.0 for p in first.token_probs)
    assert set(first.bow_masses) == {0, 2}

    masked, = backend.score_batch(
        [ScoreRequest(feature_id="u0", prefix_tokens=(0,),
                      continuation_tokens=(2, 3), mask_ref=0)],
        mask_table=[((1, 100), (0, 100))])
    assert masked.token_probs != first.token_probs

    decoded = backend.generate(GenerateRequest(feature_id="u0", max_len=12))
    assert isinstance(decoded.text, str)
    assert all(0 <= t < info.vocab_size for t in decoded.tokens)

    tokens = backend.tokenize("sono bella oggi")
    assert tokens
    with pytest.raises(UnknownFeatureError):
        backend.generate(GenerateRequest(feature_id="ghost"))
