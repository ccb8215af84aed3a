import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import last_change_scan, online_stream
from timbreswap import classifiers as clf
from timbreswap import diffusion as dif
from timbreswap import tone

A, B = 0, 1


def preds(labels):
    return [clf.Prediction(int(l), 1.0, np.eye(6)[int(l)]) for l in labels]


def test_last_change_examples():
    assert tone.select_timestep_last_change([A, A, B, B, B, B]) == 3
    assert tone.select_timestep_last_change([A, B, A, B, A, A]) == 1
    assert tone.select_timestep_last_change([A] * 6) is None
    with pytest.raises(ValueError):
        tone.select_timestep_last_change([A])


def test_last_change_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(2, 51))
        labels = rng.integers(0, int(rng.integers(1, 4)), n).tolist()
        assert tone.select_timestep_last_change(labels) == last_change_scan(labels)


def test_last_change_accepts_predictions_and_confidence_filter():
    trace = preds([A, A, B, B])
    assert tone.select_timestep_last_change(trace) == 1
    low = [clf.Prediction(l, c, np.eye(6)[l]) for l, c in [(A, 0.9), (B, 0.2), (A, 0.9), (A, 0.9)]]
    assert tone.select_timestep_last_change(low) == 1
    assert tone.select_timestep_last_change(low, min_confidence=0.5) is None


def test_online_examples():
    stream = [A, A, B, B, B, B, B, B]
    assert tone.select_timestep_online(stream, window=3) == 5  # A->B at t = 5, confirmed by t = 2
    assert tone.select_timestep_online([A, A, A, A, B, B], window=5) == 1  # confirmed by stream end
    assert tone.select_timestep_online([A] * 8, window=2) is None
    with pytest.raises(ValueError):
        tone.select_timestep_online(stream, window=0)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(0, 2), min_size=2, max_size=50), st.integers(1, 8))
def test_online_matches_stream_simulation(labels, window):
    assert tone.select_timestep_online(labels, window) == online_stream(labels, window)


def test_random_and_midpoint():
    assert tone.select_timestep_midpoint() == 25
    a = [tone.select_timestep_random(np.random.default_rng(4)) for _ in range(3)]
    assert len(set(a)) == 1
    rng = np.random.default_rng(0)
    draws = np.array([tone.select_timestep_random(rng) for _ in range(10_000)])
    assert draws.min() == 1 and draws.max() == 48
    counts = np.bincount(draws, minlength=49)[1:]
    expected = 10_000 / 48
    sigma = np.sqrt(10_000 * (1 / 48) * (47 / 48))
    assert np.all(np.abs(counts - expected) <= 3 * sigma)


def test_edit_request_validation():
    with pytest.raises(ValueError):
        tone.EditRequest(0, 2, 2)
    with pytest.raises(ValueError):
        tone.EditRequest(0, 1, 2, strategy="nope")
    with pytest.raises(ValueError):
        tone.EditRequest(0, 1, 2, fallback="nope")


def test_decide_fallbacks():
    trace = preds([A] * 50)
    d = tone.decide(tone.EditRequest(0, 1, 2), trace)
    assert d.status == "no_change_fallback" and d.t_star == 25
    with pytest.raises(tone.NoChangeError) as exc:
        tone.decide(tone.EditRequest(0, 1, 2, fallback="error"), trace)
    assert exc.value.trace is trace
    d = tone.decide(tone.EditRequest(0, 1, 2), preds([A] * 30 + [B] * 20))
    assert d.status == "selected" and d.t_star == 19


# -- on the default trained models ------------------------------------------------------

def test_probe_trace(bundle):
    traj, trace = tone.probe_trajectory(bundle.net, bundle.schedule, bundle.head, 3, 1, 3.0)
    assert len(trace) == 50 and [s.t for s in traj.steps] == list(range(49, -1, -1))
    assert trace[-1].label == clf.classify_latent(bundle.head, traj.x0).label
    traj2, trace2 = tone.probe_trajectory(bundle.net, bundle.schedule, bundle.head, 3, 1, 3.0)
    assert traj.x0.tobytes() == traj2.x0.tobytes()
    assert [p.label for p in trace] == [p.label for p in trace2]


def test_edit_identities(bundle):
    models = bundle.tone
    src_run = tone.probe_trajectory(models.net, models.schedule, models.probe, 11, 0, 3.0)
    # swap at the first step: a pure target generation
    constant = preds([A] * 50)
    forced = (src_run[0], constant)
    pure = dif.sample(models.net, models.schedule, dif.constant_plan(4), 3.0, seed=11)
    res = tone.edit(tone.EditRequest(11, 0, 4, strategy="diff_tone_online"), models,
                    (src_run[0], preds([A] + [B] * 49)))
    assert res.decision.t_star == 48
    first = dif.sample(models.net, models.schedule, dif.swap_plan(0, 4, 49), 3.0, seed=11)
    assert first.x0.tobytes() == pure.x0.tobytes()
    # constant trace + midpoint fallback is the midpoint strategy, bit for bit
    a = tone.edit(tone.EditRequest(11, 0, 4), models, forced)
    b = tone.edit(tone.EditRequest(11, 0, 4, strategy="midpoint"), models, src_run)
    assert a.decision.status == "no_change_fallback" and b.decision.status == "selected"
    assert a.edited.tobytes() == b.edited.tobytes()
    with pytest.raises(tone.NoChangeError):
        tone.edit(tone.EditRequest(11, 0, 4, fallback="error"), models, forced)


def test_edit_prefix_identity_and_determinism(bundle):
    models = bundle.tone
    for strategy in ("diff_tone", "midpoint", "random"):
        req = tone.EditRequest(21, 2, 5, strategy=strategy)
        r1, r2 = tone.edit(req, models), tone.edit(req, models)
        assert r1.edited.tobytes() == r2.edited.tobytes()
        src = dif.sample(models.net, models.schedule, dif.constant_plan(2), 3.0, seed=21)
        t_star = r1.decision.t_star
        for t in range(49, t_star, -1):
            assert r1.trajectory.state_at(t).tobytes() == src.state_at(t).tobytes()
        assert r1.source.tobytes() == src.x0.tobytes()


def test_editing_degree_monotone(bundle):
    models = bundle.tone
    swaps = [49, 44, 39, 34, 29, 24, 19, 14, 9, 4]
    dist = np.zeros(len(swaps))
    for seed in (101, 102, 103):
        src = dif.sample(models.net, models.schedule, dif.constant_plan(3), 3.0, seed=seed).x0
        for i, t in enumerate(swaps):
            out = dif.sample(models.net, models.schedule, dif.swap_plan(3, 0, t), 3.0, seed=seed).x0
            dist[i] += np.linalg.norm(out - src) / 3
    violations = int(np.sum(np.diff(dist) > 0))  # swaps ordered from t = 49 down
    assert violations <= 2
