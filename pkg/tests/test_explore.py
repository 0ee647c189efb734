import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from an2n.explore import (
    GateDecision,
    NoiseTier,
    PctAddSchedule,
    RunningMean,
    SimilarityConfig,
    ThresholdController,
    adapt_threshold,
    cosine_similarity,
    gate,
    key_state_count,
    manhattan_similarity,
    noise_for,
    pct_add_at,
    score_returns,
    select_worst,
    similarities,
    update_running_mean,
)
from an2n.replay import EvalTrajectory, KeyStateEntry, KeyStateQueue


def traj(rewards, sdim=2):
    n = len(rewards)
    return EvalTrajectory(np.arange(n * sdim, dtype=float).reshape(n, sdim), rewards, np.zeros(sdim))


def brute_force(rewards, tv, gamma):
    T = len(rewards)
    return [sum(gamma ** (k - t) * rewards[k] for k in range(t, T)) + gamma ** (T - t) * tv for t in range(T)]


# scoring


def test_score_gamma_zero_is_reward():
    r = [0.5, -2.0, 3.0]
    assert score_returns(traj(r), 99.0, 0.0).tolist() == r


def test_score_worked_example():
    assert score_returns(traj([1, 1, 1]), 4.0, 0.5)[0] == pytest.approx(2.25, abs=1e-15)


def test_score_rejects_bad_gamma():
    with pytest.raises(ValueError):
        score_returns(traj([1.0]), 0.0, 1.5)


def test_score_matches_brute_force_on_random_trajectories():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        T = int(rng.integers(1, 60))
        r = rng.normal(size=T) * 5
        tv, g = float(rng.normal() * 20), float(rng.uniform(0, 1))
        want = np.array(brute_force(list(r), tv, g))
        got = score_returns(traj(r), tv, g)
        scale = np.maximum(np.abs(want), np.abs(r).sum() + abs(tv))
        worst = max(worst, float(np.max(np.abs(got - want) / scale)))
    assert worst < 1e-12


@settings(max_examples=100, deadline=None)
@given(
    r=st.lists(st.floats(-100, 100), min_size=1, max_size=40),
    tv=st.floats(-100, 100),
    g=st.floats(0, 1),
)
def test_score_satisfies_one_step_recurrence(r, tv, g):
    out = score_returns(traj(r), tv, g)
    nxt = np.append(out[1:], tv)
    np.testing.assert_allclose(out, np.array(r) + g * nxt, rtol=0, atol=1e-12 * (1 + np.abs(out).max()))


# selection


def test_select_worst_examples():
    states = np.array([[0.0], [1.0], [2.0]])
    assert [e.state[0] for e in select_worst(states, [3, 1, 2], 1)] == [1.0]
    assert select_worst(states, [3, 1, 2], 0) == []
    assert [e.score for e in select_worst(states, [3, 1, 2], 10)] == [1, 2, 3]


def test_select_worst_ties_prefer_earlier_index():
    states = np.arange(4.0)[:, None]
    assert [e.state[0] for e in select_worst(states, [1, 0, 0, 0], 2)] == [1.0, 2.0]


def test_select_worst_length_mismatch():
    with pytest.raises(ValueError):
        select_worst(np.zeros((2, 1)), [1.0], 1)


@pytest.mark.parametrize(
    "avg,tr,want",
    [(100, 200, 5), (100, 100, 20), (100, 50, 20), (-150, -200, 11), (0.0, 5.0, 5), (10, 0.0, 20), (-10, 10, 20)],
)
def test_key_state_count(avg, tr, want):
    assert key_state_count(avg, tr, 5, 20) == want


@pytest.mark.parametrize("raw,want", [(12.4, 12), (12.6, 13), (5.2, 5), (19.7, 20)])
def test_key_state_count_rounds_to_nearest(raw, want):
    assert key_state_count(math.sqrt(raw / 20), 1.0, 5, 20) == want


def test_key_state_count_matches_direct_formula():
    rng = np.random.default_rng(4)
    for _ in range(2000):
        avg, tr = rng.normal(size=2) * 100
        if avg * tr < 0:
            continue
        want = int(np.floor(np.clip(20 * (avg / tr) ** 2, 5, 20) + 0.5))
        assert key_state_count(avg, tr, 5, 20) == want


# similarity


def test_manhattan_examples():
    assert manhattan_similarity([3.0, -1.0], [3.0, -1.0]) == 1.0
    assert manhattan_similarity([0, 0], [1, 1]) == pytest.approx(1 / 3)
    assert manhattan_similarity([0.5], [0]) == pytest.approx(2 / 3)


def test_cosine_examples():
    assert cosine_similarity([1, 0], [0, 1], np.zeros(2)) == 0.0
    assert cosine_similarity([1, 1], [2, 2], np.zeros(2)) == pytest.approx(1.0)
    assert cosine_similarity([1, 0], [-1, 0], np.zeros(2)) == pytest.approx(-1.0)


def test_cosine_centering_and_guard():
    assert cosine_similarity([2, 1], [1, 2], [1, 1]) == pytest.approx(0.0, abs=1e-15)
    assert cosine_similarity([1, 1], [3, 0], [1, 1]) == 0.0


def test_length_mismatch_rejected():
    with pytest.raises(ValueError):
        manhattan_similarity([1, 2], [1])
    with pytest.raises(ValueError):
        cosine_similarity([1, 2], [1])


vec = st.lists(st.floats(-10, 10), min_size=3, max_size=3).map(np.array)


@settings(max_examples=200, deadline=None)
@given(a=vec, b=vec, m=vec)
def test_similarities_symmetric_and_bounded(a, b, m):
    c = cosine_similarity(a, b, m)
    assert c == cosine_similarity(b, a, m)
    assert -1 - 1e-12 <= c <= 1 + 1e-12
    d = manhattan_similarity(a, b)
    assert d == manhattan_similarity(b, a) and 0 < d <= 1
    if np.linalg.norm(a - m) >= 1e-12:
        assert cosine_similarity(a, a, m) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(a=vec, b=vec, k=st.integers(0, 2), bump=st.floats(1e-3, 5))
def test_manhattan_strictly_decreasing(a, b, k, bump):
    far = b.copy()
    far[k] = a[k] + math.copysign(abs(b[k] - a[k]) + bump, b[k] - a[k] or 1.0)
    assert manhattan_similarity(a, far) < manhattan_similarity(a, b)


@settings(max_examples=200, deadline=None)
@given(a=vec, b=vec, m=vec, c=st.floats(0.1, 10))
def test_scale_invariance_distinguishes_metrics(a, b, m, c):
    assume(np.linalg.norm(a - m) > 1e-3 and np.linalg.norm(b - m) > 1e-3)
    scaled_a, scaled_b = m + c * (a - m), m + c * (b - m)
    assert cosine_similarity(scaled_a, scaled_b, m) == pytest.approx(cosine_similarity(a, b, m), abs=1e-9)
    if abs(c - 1) > 1e-3 and np.abs(a - b).sum() > 1e-3:
        assert manhattan_similarity(scaled_a, scaled_b) != pytest.approx(manhattan_similarity(a, b), rel=1e-9)


def test_vectorised_similarities_match_scalar():
    rng = np.random.default_rng(2)
    mat = rng.normal(size=(30, 4))
    mat[3] = 0.0
    s, m = rng.normal(size=4), np.zeros(4)
    np.testing.assert_allclose(similarities(s, mat, "cosine", m), [cosine_similarity(s, r, m) for r in mat], atol=1e-14)
    np.testing.assert_allclose(similarities(s, mat, "manhattan"), [manhattan_similarity(s, r) for r in mat], atol=1e-15)


# gate


def queue_of(states):
    q = KeyStateQueue(1, max(len(states), 1))
    q.admit([KeyStateEntry(np.asarray(s, float), 0.0) for s in states])
    return q


def test_gate_empty_queue():
    d = gate([1.0, 2.0], queue_of([]), SimilarityConfig(mean=np.zeros(2)))
    assert d.best == -math.inf and not d.is_key


def test_gate_finds_itself():
    s = np.array([0.3, -0.7])
    d = gate(s, queue_of([[1, 1], s]), SimilarityConfig(threshold=0.9, mean=np.zeros(2)))
    assert d.is_key and d.best == pytest.approx(1.0)


@pytest.mark.parametrize("metric", ["cosine", "manhattan"])
def test_gate_matches_linear_scan(metric):
    rng = np.random.default_rng(5)
    for _ in range(300):
        n, dim = int(rng.integers(1, 21)), int(rng.integers(1, 5))
        states = rng.normal(size=(n, dim))
        s, m = rng.normal(size=dim), rng.normal(size=dim) * 0.1
        cfg = SimilarityConfig(metric=metric, mean=m, threshold=float(rng.uniform(0.5, 0.999)))
        best = -math.inf
        for row in states:
            v = cosine_similarity(s, row, m) if metric == "cosine" else manhattan_similarity(s, row)
            best = max(best, v)
        d = gate(s, queue_of(states), cfg)
        assert d.best == pytest.approx(best, abs=1e-12)
        assert d.is_key == (best >= cfg.threshold)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10_000), lo=st.floats(0.5, 0.999), hi=st.floats(0.5, 0.999))
def test_gate_monotone_in_threshold(seed, lo, hi):
    lo, hi = sorted((lo, hi))
    rng = np.random.default_rng(seed)
    q, s = queue_of(rng.normal(size=(8, 3))), rng.normal(size=3)
    key_hi = gate(s, q, SimilarityConfig(mean=np.zeros(3), threshold=hi)).is_key
    key_lo = gate(s, q, SimilarityConfig(mean=np.zeros(3), threshold=lo)).is_key
    assert not key_hi or key_lo


# controller


def test_adapt_threshold_examples():
    cfg = SimilarityConfig(threshold=0.8)
    assert adapt_threshold(cfg, 0.3, 0.3).threshold == 0.8
    assert adapt_threshold(cfg, 0.6, 0.4).threshold == pytest.approx(0.81, abs=1e-15)
    assert adapt_threshold(cfg, 0.0, 1.0).threshold == pytest.approx(0.76)


def test_adapt_threshold_clamps():
    cfg = SimilarityConfig(threshold=0.998)
    assert adapt_threshold(cfg, 1.0, 0.0).threshold == 0.999
    cfg = SimilarityConfig(threshold=0.51)
    assert adapt_threshold(cfg, 0.0, 1.0).threshold == 0.5


@pytest.mark.parametrize("target", [0.2, 0.3, 0.4])
def test_controller_converges_on_uniform_scores(target):
    rng = np.random.default_rng(int(target * 10))
    ctl = ThresholdController(SimilarityConfig(), window=1000)
    hits = []
    for call in range(5000):
        best = float(rng.uniform())
        hits.append(best >= ctl.cfg.threshold)
        ctl.update(GateDecision(best, ctl.cfg.threshold, hits[-1], "cosine"), target)
    assert abs(ctl.observed_fraction() - target) <= 0.05
    assert abs(np.mean(hits[-1000:]) - target) <= 0.05
    # fixed point of uniform scores: threshold = 1 - target
    assert ctl.cfg.threshold == pytest.approx(1 - target, abs=0.05)


def test_controller_fraction_uses_current_threshold():
    ctl = ThresholdController(SimilarityConfig(threshold=0.5, eta=0.0), window=4)
    for b in (0.1, 0.6, 0.7, 0.9):
        ctl.update(GateDecision(b, 0.5, b >= 0.5, "cosine"), 0.5)
    assert ctl.observed_fraction() == 0.75
    ctl.cfg.threshold = 0.8
    assert ctl.observed_fraction() == 0.25
    assert ctl.realized_fraction() == 0.75


# schedule, noise, running mean


def test_pct_add_schedule():
    sch = PctAddSchedule(0.4, 0.2, 50_000)
    assert pct_add_at(0, sch) == 0.4
    assert pct_add_at(50_000, sch) == pytest.approx(0.2)
    assert pct_add_at(25_000, sch) == pytest.approx(0.3)
    assert pct_add_at(10**7, sch) == 0.2
    with pytest.raises(ValueError):
        PctAddSchedule(0.2, 0.4)


def test_noise_for_tiers():
    tier = NoiseTier()
    key, plain = GateDecision(1.0, 0.9, True, "cosine"), GateDecision(0.1, 0.9, False, "cosine")
    assert noise_for(plain, tier) == 0.05
    assert noise_for(key, tier) == pytest.approx(0.4)
    assert noise_for(None, tier) == 0.05
    assert noise_for(key, tier, "sac") == 1.5
    assert noise_for(plain, tier, "sac") == 0.5
    assert noise_for(None, tier, "sac") == 1.0
    with pytest.raises(ValueError):
        NoiseTier(small=0.1, add=0.0)


def test_running_mean_examples():
    assert update_running_mean(None, [3.0, 4.0], 1).tolist() == [3.0, 4.0]
    rm = RunningMean()
    rm.update([0.0])
    assert rm.update([2.0]).tolist() == [1.0]


def test_running_mean_matches_batch_mean():
    rng = np.random.default_rng(9)
    xs = rng.normal(loc=3.0, scale=10.0, size=(10_000, 4))
    rm = RunningMean()
    for x in xs:
        rm.update(x)
    np.testing.assert_allclose(rm.mean, xs.mean(axis=0), rtol=0, atol=1e-9)
