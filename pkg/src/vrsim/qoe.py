"""Asymmetric, magnitude-dependent QoE scoring for resolution transitions.

Downgrades are penalized harder than upgrades, and jumps beyond a threshold
carry an extra multiplier; failed frames incur a penalty that dominates any
resolution gain.  Session aggregation reduces a transition-event sequence to
the three headline metrics (mean delivered level, switching rate, success
rate).
"""
from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class QoEParams:
    w_level: float = 1.0  # reward per resolution level
    theta_down: float = 1.0  # per-level downgrade penalty
    theta_up: float = 0.3  # per-level upgrade penalty
    kappa_large: float = 2.0  # multiplier for jumps beyond jump_threshold
    jump_threshold: int = 2  # levels
    w_fail: float = 10.0  # failure penalty

    def __post_init__(self) -> None:
        if not self.theta_down > self.theta_up >= 0:
            raise ValueError("need theta_down > theta_up >= 0")
        if self.kappa_large < 1:
            raise ValueError("kappa_large must be >= 1")
        if self.w_fail <= 0:
            raise ValueError("w_fail must be > 0")
        if self.jump_threshold < 1:
            raise ValueError("jump_threshold must be >= 1")


@dataclass(frozen=True)
class TransitionEvent:
    prev_level: int
    new_level: int
    delivered: bool


@dataclass
class EpisodeMetrics:
    avg_level: float
    switching_rate: float
    success_rate: float
    n_events: int
    per_user: list[dict] = field(default_factory=list)
    jain_fairness_level: float | None = None


def transition_penalty(prev: int, new: int, p: QoEParams) -> float:
    """Penalty for switching from ``prev`` to ``new``; zero when staying put."""
    delta = new - prev
    if delta == 0:
        return 0.0
    mult = p.kappa_large if abs(delta) > p.jump_threshold else 1.0
    theta = p.theta_down if delta < 0 else p.theta_up
    return theta * abs(delta) * mult


def frame_qoe(event: TransitionEvent, p: QoEParams) -> float:
    """Per-frame score: level reward minus failure and transition penalties."""
    score = p.w_level * event.new_level
    if not event.delivered:
        score -= p.w_fail
    return score - transition_penalty(event.prev_level, event.new_level, p)


def jain_index(values) -> float:
    """Jain fairness index; 1.0 for an empty or all-zero population."""
    total = float(sum(values))
    sq = float(sum(v * v for v in values))
    n = len(values)
    if n == 0 or sq == 0.0:
        return 1.0
    return total * total / (n * sq)


def session_metrics(events) -> EpisodeMetrics:
    """Aggregate a transition-event sequence.

    avg_level averages delivered frames only; the first event of a session is
    a non-switch by construction (its prev equals its level).
    """
    events = list(events)
    if not events:
        raise ValueError("session_metrics needs a non-empty event sequence")
    delivered_levels = [e.new_level for e in events if e.delivered]
    switches = sum(1 for e in events if e.prev_level != e.new_level)
    n = len(events)
    avg = sum(delivered_levels) / len(delivered_levels) if delivered_levels else 0.0
    return EpisodeMetrics(
        avg_level=avg,
        switching_rate=switches / n,
        success_rate=len(delivered_levels) / n,
        n_events=n,
    )
