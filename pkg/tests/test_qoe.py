import itertools

import pytest

from vrsim.qoe import (
    EpisodeMetrics,
    QoEParams,
    TransitionEvent,
    frame_qoe,
    jain_index,
    session_metrics,
    transition_penalty,
)

P = QoEParams()  # w_level=1, theta_down=1.0, theta_up=0.3, kappa=2, threshold=2, w_fail=10


# ----------------------------------------------------------------- penalties


def test_no_transition_no_penalty():
    for level in range(7):
        assert transition_penalty(level, level, P) == 0.0


def test_default_formula_values():
    assert transition_penalty(3, 2, P) == pytest.approx(1.0)  # down 1
    assert transition_penalty(6, 2, P) == pytest.approx(8.0)  # down 4, large-jump doubled
    assert transition_penalty(2, 3, P) == pytest.approx(0.3)  # up 1
    assert transition_penalty(0, 4, P) == pytest.approx(0.3 * 4 * 2)  # up 4
    assert transition_penalty(4, 2, P) == pytest.approx(2.0)  # down 2, at threshold: no multiplier


def test_downgrade_penalty_exceeds_upgrade_all_pairs():
    # exhaustive over the 7-level ladder: every ordered pair, both directions
    for lo, hi in itertools.combinations(range(7), 2):
        assert transition_penalty(hi, lo, P) > transition_penalty(lo, hi, P)


def test_magnitude_monotonicity():
    for k in range(1, 6):
        assert transition_penalty(6, 6 - (k + 1), P) > transition_penalty(6, 6 - k, P)
        assert transition_penalty(0, k + 1, P) > transition_penalty(0, k, P)


def test_threshold_multiplier_discontinuity():
    th = P.jump_threshold
    ratio_down = transition_penalty(6, 6 - (th + 1), P) / transition_penalty(6, 6 - th, P)
    assert ratio_down >= P.kappa_large * (th + 1) / th


def test_param_validation():
    with pytest.raises(ValueError):
        QoEParams(theta_down=0.2, theta_up=0.3)
    with pytest.raises(ValueError):
        QoEParams(kappa_large=0.5)
    with pytest.raises(ValueError):
        QoEParams(w_fail=0.0)
    QoEParams(theta_up=0.0)  # degradation-only reward variant is legal


# ---------------------------------------------------------------- frame QoE


def test_frame_qoe_values():
    assert frame_qoe(TransitionEvent(6, 6, True), P) == pytest.approx(6.0)
    assert frame_qoe(TransitionEvent(0, 0, False), P) == pytest.approx(-10.0)
    assert frame_qoe(TransitionEvent(6, 2, True), P) == pytest.approx(2.0 - 8.0)


# ------------------------------------------------------------------- session


def test_session_steady_state():
    events = [TransitionEvent(4, 4, True) for _ in range(10)]
    m = session_metrics(events)
    assert m.switching_rate == 0.0
    assert m.success_rate == 1.0
    assert m.avg_level == 4.0


def test_session_level_change_counting():
    # first event counts as non-switch: prev of the first frame is its own level
    levels = [3, 3, 5, 5]
    events = []
    prev = levels[0]
    for lv in levels:
        events.append(TransitionEvent(prev, lv, True))
        prev = lv
    m = session_metrics(events)
    assert m.avg_level == pytest.approx(4.0)
    assert m.switching_rate == pytest.approx(0.25)
    assert m.success_rate == 1.0


def test_session_failed_frames_excluded_from_avg():
    events = [
        TransitionEvent(2, 2, True),
        TransitionEvent(2, 6, False),
        TransitionEvent(6, 2, True),
    ]
    m = session_metrics(events)
    assert m.avg_level == pytest.approx(2.0)
    assert m.success_rate == pytest.approx(2 / 3)
    assert m.switching_rate == pytest.approx(2 / 3)


def test_session_recompute_from_level_sequence_is_exact():
    # aggregation depends on the sequence only through adjacent transitions
    import numpy as np

    rng = np.random.Generator(np.random.PCG64(13))
    levels = rng.integers(0, 7, size=500).tolist()
    delivered = rng.uniform(size=500) > 0.1
    events = [
        TransitionEvent(levels[max(i - 1, 0)], levels[i], bool(delivered[i]))
        for i in range(500)
    ]
    m = session_metrics(events)
    switches = sum(1 for a, b in zip(levels, levels[1:]) if a != b)
    assert m.switching_rate == pytest.approx(switches / 500)
    want = [lv for lv, d in zip(levels, delivered) if d]
    assert m.avg_level == pytest.approx(sum(want) / len(want))


def test_session_empty_rejected():
    with pytest.raises(ValueError):
        session_metrics([])


def test_jain_index():
    assert jain_index([3.0, 3.0, 3.0]) == pytest.approx(1.0)
    assert jain_index([1.0, 0.0]) == pytest.approx(0.5)
    assert jain_index([]) == 1.0
    assert jain_index([0.0, 0.0]) == 1.0


def test_metrics_dataclass_fields():
    m = EpisodeMetrics(avg_level=1.0, switching_rate=0.0, success_rate=1.0, n_events=4)
    assert m.per_user == []
