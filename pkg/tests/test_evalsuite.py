import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import median_pairwise, mmd2_double_loop
from timbreswap import dsp, evalsuite as ev, pipeline
from timbreswap import synthcorpus as sc
from timbreswap.tone import EditResult, SwapDecision

T = np.arange(sc.CLIP_SAMPLES) / sc.SAMPLE_RATE


def test_chroma_distance_identical_is_zero():
    clip = sc.make_clip(1, 2, 0, 1)
    assert ev.chroma_distance(clip, clip) == 0.0


def test_chroma_distance_orthogonal_is_one():
    spec = dsp.Spectrogram(np.zeros((63, 257)))
    a, b = spec.magnitudes.copy(), spec.magnitudes.copy()
    a[:, dsp.BIN_PITCH_CLASS == 0] = 1.0
    b[:, dsp.BIN_PITCH_CLASS == 6] = 1.0
    assert ev.chroma_distance(dsp.Spectrogram(a), dsp.Spectrogram(b)) == pytest.approx(1.0)


def test_chroma_distance_silent_frames():
    silent = dsp.Spectrogram(np.zeros((63, 257)))
    tone = dsp.stft(np.cos(2 * np.pi * 440 * T))
    assert ev.chroma_distance(silent, silent) == 0.0
    assert ev.chroma_distance(silent, tone) == 1.0


def test_chroma_distance_tritone():
    sine = sc.InstrumentSpec(0, "sine", (1.0,), (1.0,), sc.Envelope(0.01, 0.0, 1.97, 0.01, 1.0))
    a = sc.render_clip(sine, [sc.NoteEvent(60, 0.0, 2.0)], seed=0)
    b = sc.render_clip(sine, [sc.NoteEvent(66, 0.0, 2.0)], seed=0)
    assert ev.chroma_distance(a, b) > 0.5


def test_chroma_distance_length_mismatch():
    with pytest.raises(ValueError):
        ev.chroma_distance(np.zeros(16000), np.zeros(8000))


def test_chroma_distance_on_mel_patches_in_range():
    stats = dsp.MelStats(-2.0, 5.0)
    rng = np.random.default_rng(0)
    a = dsp.MelPatch(rng.standard_normal((32, 32)), stats)
    b = dsp.MelPatch(rng.standard_normal((32, 32)), stats)
    d = ev.chroma_distance(a, b)
    assert 0.0 <= d <= 1.0 and ev.chroma_distance(a, a) == 0.0


def test_chroma_self_distance_every_corpus_clip(default_config):
    manifest = sc.CorpusManifest.load(default_config.corpus_path)
    for e in manifest.entries:
        spec = dsp.stft(manifest.load_audio(e))
        assert ev.chroma_distance(spec, spec) == 0.0


def test_kad_hand_case():
    x, y = np.array([[0.0], [0.0]]), np.array([[1.0], [1.0]])
    assert ev.kad(x, y, bandwidth=1.0) == pytest.approx(78.694, abs=1e-3)
    assert ev.mmd2_unbiased(x, y, 1.0) == pytest.approx(2 - 2 * np.exp(-0.5), abs=1e-12)


def test_kad_matches_double_loop_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        m, n, d = rng.integers(2, 12), rng.integers(2, 12), rng.integers(1, 5)
        x = rng.standard_normal((m, d))
        y = rng.standard_normal((n, d)) + rng.uniform(0, 2)
        bw = median_pairwise(x, y)
        assert ev.median_bandwidth(x, y) == pytest.approx(bw, rel=1e-12)
        ref = 100 * mmd2_double_loop(x, y, bw)
        assert ev.kad(x, y) == pytest.approx(ref, rel=1e-9, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 20), st.integers(2, 20), st.integers(0, 10_000))
def test_kad_symmetric(m, n, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((m, 3)), rng.standard_normal((n, 3)) + 0.5
    assert ev.kad(x, y) == ev.kad(y, x)


def test_kad_iid_small_and_shift_monotone():
    rng = np.random.default_rng(0)
    assert abs(ev.kad(rng.standard_normal((100, 2)), rng.standard_normal((100, 2)))) < 1.0
    vals = []
    for shift in (0.5, 1.0, 2.0):
        r = np.random.default_rng(1)
        x = r.standard_normal((200, 2))
        y = r.standard_normal((200, 2)) + [shift, 0.0]
        vals.append(ev.kad(x, y))
    assert vals[0] < vals[1] < vals[2]


def test_kad_errors():
    with pytest.raises(ValueError):
        ev.kad(np.zeros((1, 2)), np.ones((3, 2)))
    with pytest.raises(ValueError):  # identical copies: zero median distance
        ev.kad(np.ones((4, 2)), np.ones((4, 2)))
    with pytest.raises(ValueError):
        ev.kad(np.array([[np.nan], [0.0]]), np.ones((3, 1)))
    with pytest.raises(ValueError):
        ev.EmbeddingSet(np.zeros((1, 128)))


def _result(latent):
    return EditResult(latent, latent, SwapDecision(25, [], "selected", "midpoint"))


def test_instrument_accuracy(bundle, features):
    feats, _, latents = features
    va = np.flatnonzero(feats.mask("val"))[:12]
    edits = [_result(latents[i]) for i in va]
    truth = feats.labels[va]
    pred = np.argmax(bundle.teacher.logits(ev.decoded_patches(latents[va], bundle.latent_stats)), axis=1)
    assert ev.instrument_accuracy(edits, bundle.teacher, pred, bundle.latent_stats) == 1.0
    assert ev.instrument_accuracy(edits[:1], bundle.teacher, [(pred[0] + 1) % 6], bundle.latent_stats) == 0.0
    acc = ev.instrument_accuracy(edits, bundle.teacher, truth, bundle.latent_stats)
    assert 0.0 <= acc <= 1.0
    with pytest.raises(ValueError):
        ev.instrument_accuracy([], bundle.teacher, [], bundle.latent_stats)


def test_small_matrix_paired_and_reproducible(default_config, bundle):
    models = ev.EvalModels(bundle.tone, bundle.teacher, bundle.latent_stats, bundle.mel_stats,
                           pipeline.reference_features(bundle))
    cfg = ev.MatrixConfig(seeds_per_pair=1, seed_base=500)
    rep = ev.run_matrix(models, cfg, config_hash="x")
    assert len(rep.edits) == 30 * 3
    for strategy in cfg.strategies:
        r = rep.row(strategy)
        assert 0 <= r["chroma"] <= 1 and 0 <= r["inst_acc"] <= 1 and r["n"] == 30
    # the midpoint rows share the source pass with every other strategy: same source output
    rep2 = ev.run_matrix(models, cfg, config_hash="x")
    assert rep.to_csv() == rep2.to_csv() and rep.to_json() == rep2.to_json()
    header = rep.to_csv().splitlines()[1]
    assert header.startswith("strategy,chroma,kad,inst_acc")


def test_matrix_workers_match_serial(bundle):
    models = ev.EvalModels(bundle.tone, bundle.teacher, bundle.latent_stats, bundle.mel_stats,
                           pipeline.reference_features(bundle))
    cfg = ev.MatrixConfig(seeds_per_pair=1, seed_base=900, strategies=("diff_tone", "midpoint"))
    assert ev.run_matrix(models, cfg, workers=2).to_csv() == ev.run_matrix(models, cfg).to_csv()
