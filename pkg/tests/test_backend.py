"""Synthetic oracle law, protocol round-trips, and the subprocess client."""

import json
import sys

import numpy as np
import pytest

from spectrast.backend.client import SubprocessBackend
from spectrast.backend.protocol import (
    GenerateRequest,
    GenerateResponse,
    PROTOCOL_VERSION,
    ScoreRequest,
    ScoreResponse,
    decode_line,
    encode_line,
    tokenizer_info_from_payload,
    tokenizer_info_to_payload,
)
from spectrast.backend.server import serve
from spectrast.backend.synthetic import (
    SyntheticBackend,
    load_suite,
    save_suite,
    suite_from_json,
    suite_to_json,
    synthetic_step_distribution,
    tokenize_greedy,
)
from spectrast.core import Spectrogram
from spectrast.errors import (
    BackendProtocolError,
    DuplicateFeatureError,
    TokenOutOfVocabError,
    UnknownFeatureError,
)
from spectrast.perturbation import apply_mask, cells_to_runs

from conftest import B, full_mask_rle, simple_tokenizer, single_token_suite, tid

EPS, RHO = 0.05, 0.02


class TestSyntheticLaw:
    def test_unmasked_slot_probability(self, single_token_backend):
        backend, suite, _ = single_token_backend
        req = ScoreRequest(feature_id="utt0", prefix_tokens=(tid(f"{B}sono"),),
                           continuation_tokens=(tid(f"{B}bella"),))
        resp, = backend.score_batch([req])
        assert resp.token_probs[0] == pytest.approx((1 - RHO) * (1 - EPS), abs=1e-12)

    def test_full_mask_slot_probability(self, single_token_backend):
        backend, suite, features = single_token_backend
        req = ScoreRequest(feature_id="utt0", prefix_tokens=(tid(f"{B}sono"),),
                           continuation_tokens=(tid(f"{B}bella"),),
                           mask=full_mask_rle(features.n_cells))
        resp, = backend.score_batch([req])
        assert resp.token_probs[0] == pytest.approx((1 - RHO) * EPS, abs=1e-12)

    def test_bow_mass_after_template_end(self, single_token_backend):
        backend, suite, _ = single_token_backend
        model = suite.models["utt0"]
        req = ScoreRequest(feature_id="utt0", prefix_tokens=model.template[:-1],
                           continuation_tokens=(model.template[-1],),
                           want_bow_mass_at=(1,))
        resp, = backend.score_batch([req])
        assert resp.bow_masses[1] == 1.0

    def test_distribution_sums_to_one_and_symmetry(self, single_token_backend):
        _, suite, features = single_token_backend
        model = suite.models["utt0"]
        info = suite.tokenizer
        # r = 0.5: mask exactly half the cue region's energy (uniform features)
        half = np.ones((20, 10), dtype=np.float32)
        half[2:5, 2:8] = 0.0  # 18 of 36 cue cells
        masked = Spectrogram(half)
        dist = synthetic_step_distribution(model, features, masked, model.slot_index,
                                           info.vocab_size, suite.unk_token_id,
                                           info.eos_token_id)
        assert dist.sum() == pytest.approx(1.0, abs=1e-12)
        assert dist[model.target_token] == pytest.approx(0.49, abs=1e-12)
        assert dist[model.foil_token] == pytest.approx(0.49, abs=1e-12)

    def test_distribution_r1_values(self, single_token_backend):
        _, suite, features = single_token_backend
        model = suite.models["utt0"]
        info = suite.tokenizer
        dist = synthetic_step_distribution(model, features, features, model.slot_index,
                                           info.vocab_size, suite.unk_token_id,
                                           info.eos_token_id)
        assert dist[model.target_token] == pytest.approx(0.9310, abs=1e-4)
        assert dist[model.foil_token] == pytest.approx(0.0490, abs=1e-4)
        assert dist.sum() == pytest.approx(1.0, abs=1e-12)

    def test_target_probability_monotone_in_cue_energy(self, single_token_backend):
        backend, suite, features = single_token_backend
        model = suite.models["utt0"]
        data = features.data.copy()
        previous = -1.0
        # progressively restore cue rows: retained energy grows, p(target) must not drop
        for kept_rows in range(0, 7):
            masked = data.copy()
            masked[2:8, 2:8] = 0.0
            masked[2:2 + kept_rows, 2:8] = 1.0
            dist = synthetic_step_distribution(
                model, features, Spectrogram(masked), model.slot_index,
                suite.tokenizer.vocab_size, suite.unk_token_id,
                suite.tokenizer.eos_token_id)
            assert dist[model.target_token] >= previous
            previous = dist[model.target_token]

    def test_repeated_requests_identical(self, single_token_backend):
        backend, _, features = single_token_backend
        req = ScoreRequest(feature_id="utt0", prefix_tokens=(),
                           continuation_tokens=(tid(f"{B}sono"),),
                           mask=((0, 100), (1, 50), (0, 50)))
        a, = backend.score_batch([req])
        b, = backend.score_batch([req])
        assert a == b


class TestRegistration:
    def test_score_before_register_fails(self):
        suite, _ = single_token_suite()
        backend = SyntheticBackend(suite)
        req = ScoreRequest(feature_id="utt0", prefix_tokens=(),
                           continuation_tokens=(0,))
        with pytest.raises(UnknownFeatureError):
            backend.score_batch([req])

    def test_reregister_identical_is_idempotent(self, single_token_backend):
        backend, _, features = single_token_backend
        backend.load_features("utt0", features)  # no raise

    def test_reregister_different_content_fails(self, single_token_backend):
        backend, _, features = single_token_backend
        other = Spectrogram(features.data * np.float32(2.0))
        with pytest.raises(DuplicateFeatureError):
            backend.load_features("utt0", other)

    def test_unknown_model_id_rejected(self, single_token_backend):
        backend, _, features = single_token_backend
        with pytest.raises(UnknownFeatureError):
            backend.load_features("nope", features)

    def test_token_out_of_vocab(self, single_token_backend):
        backend, suite, _ = single_token_backend
        req = ScoreRequest(feature_id="utt0", prefix_tokens=(),
                           continuation_tokens=(suite.tokenizer.vocab_size,))
        with pytest.raises(TokenOutOfVocabError):
            backend.score_batch([req])


class TestGenerate:
    def test_unmasked_emits_target(self, single_token_backend):
        backend, _, _ = single_token_backend
        resp = backend.generate(GenerateRequest(feature_id="utt0"))
        assert resp.text == "sono bella oggi"

    def test_cue_zeroed_emits_foil(self, single_token_backend):
        backend, suite, features = single_token_backend
        model = suite.models["utt0"]
        seg = np.zeros(features.data.shape, dtype=bool)
        seg[2:8, 2:8] = True
        runs = tuple(cells_to_runs(seg.ravel()))
        resp = backend.generate(GenerateRequest(feature_id="utt0", mask=runs))
        assert resp.text == "sono bello oggi"

    def test_content_zeroed_emits_unknown(self, single_token_backend):
        backend, _, features = single_token_backend
        seg = np.zeros(features.data.shape, dtype=bool)
        seg[12:18, 2:8] = True  # the content region gating 'oggi'
        runs = tuple(cells_to_runs(seg.ravel()))
        resp = backend.generate(GenerateRequest(feature_id="utt0", mask=runs))
        assert resp.text == "sono bella <unk>"

    def test_max_len_truncates(self, single_token_backend):
        backend, _, _ = single_token_backend
        resp = backend.generate(GenerateRequest(feature_id="utt0", max_len=2))
        assert len(resp.tokens) == 2


class TestTokenize:
    def test_greedy_longest_match(self, simple_info):
        assert tokenize_greedy("bella", simple_info) == [tid(f"{B}bella")]
        assert tokenize_greedy("sono bella", simple_info) == [
            tid(f"{B}sono"), tid(f"{B}bella")]

    def test_unknown_text_raises(self, simple_info):
        with pytest.raises(ValueError):
            tokenize_greedy("zzz", simple_info)


class TestProtocolRoundTrip:
    def test_score_request(self):
        req = ScoreRequest(feature_id="u", prefix_tokens=(1, 2),
                           continuation_tokens=(3,), want_bow_mass_at=(0, 1),
                           mask=((0, 3), (1, 5)))
        assert ScoreRequest.from_payload(req.to_payload()) == req

    def test_score_request_with_ref(self):
        req = ScoreRequest(feature_id="u", prefix_tokens=(), continuation_tokens=(3,),
                           mask_ref=2)
        assert ScoreRequest.from_payload(req.to_payload()) == req

    def test_score_response(self):
        resp = ScoreResponse(token_probs=(0.5, 0.25), bow_masses={0: 0.9, 2: 1.0})
        assert ScoreResponse.from_payload(resp.to_payload()) == resp

    def test_generate_messages(self):
        req = GenerateRequest(feature_id="u", mask=((1, 4),), beam_size=3,
                              no_repeat_ngram=2, max_len=7)
        assert GenerateRequest.from_payload(req.to_payload()) == req
        resp = GenerateResponse(tokens=(1, 2, 3), text="ciao")
        assert GenerateResponse.from_payload(resp.to_payload()) == resp

    def test_tokenizer_info(self, simple_info):
        assert tokenizer_info_from_payload(tokenizer_info_to_payload(simple_info)) \
            == simple_info

    def test_validation_errors(self):
        with pytest.raises(ValueError):
            ScoreRequest(feature_id="u", prefix_tokens=(), continuation_tokens=())
        with pytest.raises(ValueError):
            ScoreRequest(feature_id="u", prefix_tokens=(), continuation_tokens=(1,),
                         want_bow_mass_at=(2,))
        with pytest.raises(ValueError):
            ScoreResponse(token_probs=(1.5,))
        with pytest.raises(BackendProtocolError):
            ScoreRequest.from_payload({"feature_id": "u", "prefix_tokens": [],
                                       "continuation_tokens": [1], "mask": [[3, 1]]})

    def test_suite_json_round_trip(self, tmp_path):
        suite, _ = single_token_suite()
        assert suite_from_json(suite_to_json(suite)) == suite
        path = tmp_path / "suite.json"
        save_suite(suite, path)
        assert load_suite(path) == suite


class _Pipe:
    """Minimal in-memory stand-in for stdio streams."""

    def __init__(self, lines):
        self._lines = list(lines)
        self.written = []

    def __iter__(self):
        return iter(self._lines)

    def write(self, data):
        self.written.append(data)

    def flush(self):
        pass


class TestServerLoop:
    def _roundtrip(self, messages):
        suite, features = single_token_suite()
        backend = SyntheticBackend(suite)
        backend.load_features("utt0", features)
        stdin = _Pipe([encode_line(m) for m in messages])
        stdout = _Pipe([])
        code = serve(backend, stdin=stdin, stdout=stdout)
        return code, [decode_line(line) for line in stdout.written]

    def test_handshake_and_shutdown(self):
        code, replies = self._roundtrip([
            {"id": 1, "kind": "handshake", "protocol_version": PROTOCOL_VERSION},
            {"id": 2, "kind": "shutdown"},
        ])
        assert code == 0
        assert replies[0]["ok"] is True
        assert replies[0]["tokenizer"]["vocab_size"] == 12
        assert replies[1]["ok"] is True

    def test_version_mismatch_answered(self):
        _, replies = self._roundtrip([
            {"id": 5, "kind": "handshake", "protocol_version": 99},
        ])
        assert replies[0]["ok"] is False
        assert "version" in replies[0]["error"]["message"]

    def test_malformed_line_answered(self):
        suite, _ = single_token_suite()
        backend = SyntheticBackend(suite)
        stdout = _Pipe([])
        serve(backend, stdin=_Pipe(["{not json}\n"]), stdout=stdout)
        reply = decode_line(stdout.written[0])
        assert reply["ok"] is False and reply["id"] == -1

    def test_unknown_kind_answered(self):
        _, replies = self._roundtrip([{"id": 3, "kind": "frobnicate"}])
        assert replies[0]["ok"] is False
        assert replies[0]["id"] == 3


def _write_suite(tmp_path):
    suite, features = single_token_suite()
    path = tmp_path / "suite.json"
    save_suite(suite, path)
    return suite, features, path


class TestSubprocessClient:
    def test_end_to_end(self, tmp_path):
        suite, features, path = _write_suite(tmp_path)
        backend = SubprocessBackend([sys.executable, "-m", "spectrast.cli",
                                     "synth-backend", "--model-spec", str(path)])
        try:
            info = backend.handshake()
            assert info == suite.tokenizer
            assert backend.handshake() == info  # idempotent
            backend.load_features("utt0", features)
            backend.load_features("utt0", features)  # idempotent re-register
            resp, = backend.score_batch([ScoreRequest(
                feature_id="utt0", prefix_tokens=(tid(f"{B}sono"),),
                continuation_tokens=(tid(f"{B}bella"),), want_bow_mass_at=(0, 1))])
            assert resp.token_probs[0] == pytest.approx(0.931, abs=1e-12)
            gen = backend.generate(GenerateRequest(feature_id="utt0"))
            assert gen.text == "sono bella oggi"
            assert backend.tokenize("bello") == [tid(f"{B}bello")]
            with pytest.raises(UnknownFeatureError):
                backend.score_batch([ScoreRequest(
                    feature_id="ghost", prefix_tokens=(), continuation_tokens=(0,))])
            with pytest.raises(DuplicateFeatureError):
                backend.load_features(
                    "utt0", Spectrogram(features.data * np.float32(3.0)))
        finally:
            backend.shutdown()

    def test_mask_ref_batches(self, tmp_path):
        _, features, path = _write_suite(tmp_path)
        backend = SubprocessBackend([sys.executable, "-m", "spectrast.cli",
                                     "synth-backend", "--model-spec", str(path)])
        try:
            backend.handshake()
            backend.load_features("utt0", features)
            n = features.n_cells
            table = [((0, n),), ((1, n),)]
            reqs = [
                ScoreRequest(feature_id="utt0", prefix_tokens=(tid(f"{B}sono"),),
                             continuation_tokens=(tid(f"{B}bella"),), mask_ref=ref)
                for ref in (0, 1)
            ]
            unmasked, masked = backend.score_batch(reqs, mask_table=table)
            assert unmasked.token_probs[0] == pytest.approx(0.931, abs=1e-12)
            assert masked.token_probs[0] == pytest.approx(0.049, abs=1e-12)
        finally:
            backend.shutdown()

    def test_launch_failure(self):
        with pytest.raises(Exception):
            SubprocessBackend(["/nonexistent-backend-binary"])

    def test_out_of_order_replies_matched(self):
        # scripted backend answers the two pipelined requests in reverse order
        script = (
            "import sys, json\n"
            "lines = [sys.stdin.readline() for _ in range(2)]\n"
            "msgs = [json.loads(l) for l in lines]\n"
            "for m in reversed(msgs):\n"
            "    print(json.dumps({'id': m['id'], 'kind': m['kind'], 'ok': True,\n"
            "                      'tokens': [m['id']]}))\n"
            "sys.stdout.flush()\n"
            "sys.stdin.read()\n"
        )
        backend = SubprocessBackend([sys.executable, "-c", script])
        try:
            first = backend._send("tokenize", {"text": "a"})
            second = backend._send("tokenize", {"text": "b"})
            reply_first = backend._receive(first)
            reply_second = backend._receive(second)
            assert reply_first["tokens"] == [first]
            assert reply_second["tokens"] == [second]
        finally:
            backend._proc.kill()
            backend._proc.wait()

    def test_bow_ids_outside_vocab_rejected(self):
        # scripted backend reports a bow id outside its declared vocabulary
        script = (
            "import sys, json\n"
            "m = json.loads(sys.stdin.readline())\n"
            "print(json.dumps({'id': m['id'], 'kind': 'handshake', 'ok': True,\n"
            "  'protocol_version': 1, 'tokenizer': {'vocab_size': 4,\n"
            "  'bow_token_ids': [9], 'punctuation_token_ids': [],\n"
            "  'eos_token_id': 0, 'token_surfaces': {}}}))\n"
            "sys.stdout.flush()\n"
            "sys.stdin.read()\n"
        )
        backend = SubprocessBackend([sys.executable, "-c", script])
        try:
            with pytest.raises(BackendProtocolError):
                backend.handshake()
        finally:
            backend._proc.kill()
            backend._proc.wait()
