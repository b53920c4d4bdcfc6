"""Non-learning reference controllers.

Allocation side: equal split, per-slot single-winner proportional fair, and a
deadline-urgency heuristic.  Resolution side: fixed level, a capacity-threshold
policy with a switch-cost parameter, and a simplified SCReAM-style delay-AIMD
rate controller that maps its target rate onto the ladder.  Policy classes
adapt these to the environment's slot/frame views so allocation and resolution
strategies compose freely.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .media import ResolutionLadder

AVG_THROUGHPUT_FLOOR = 1.0  # bits/s, keeps the PF metric finite


def equal_allocation(n_users: int) -> np.ndarray:
    """Uniform shares; the last element absorbs rounding so the sum is exactly 1.

    The correction iterates because numpy's pairwise summation is not plain
    left-to-right accumulation; one or two nudges reach a fixed point.
    """
    if n_users < 1:
        raise ValueError("n_users must be >= 1")
    shares = np.full(n_users, 1.0 / n_users)
    for _ in range(4):
        err = 1.0 - float(shares.sum())
        if err == 0.0:
            break
        shares[-1] += err
    return shares


@dataclass
class PfState:
    avg_throughput: np.ndarray  # bits/s per user, EWMA
    ewma_horizon: int = 100  # slots

    @classmethod
    def fresh(cls, n_users: int, ewma_horizon: int = 100) -> "PfState":
        return cls(np.ones(n_users), ewma_horizon)


def pf_allocation(instant_rates: np.ndarray, state: PfState) -> tuple[np.ndarray, PfState]:
    """Give the slot to the user maximizing rate/average (ties -> lowest index)."""
    rates = np.asarray(instant_rates, dtype=float)
    if np.any(rates < 0):
        raise ValueError("instant rates must be >= 0")
    n = len(rates)
    beta = 1.0 / state.ewma_horizon
    if np.all(rates == 0.0):
        shares = equal_allocation(n)
        served = np.zeros(n)  # nobody can move bits this slot
    else:
        metric = rates / state.avg_throughput
        winner = int(np.argmax(metric))
        shares = np.zeros(n)
        shares[winner] = 1.0
        served = np.zeros(n)
        served[winner] = rates[winner]
    avg = (1.0 - beta) * state.avg_throughput + beta * served
    avg = np.maximum(avg, AVG_THROUGHPUT_FLOOR)
    return shares, PfState(avg, state.ewma_horizon)


def urgency_allocation(
    remaining_bits: np.ndarray,
    deadline_slots: np.ndarray,
    now: int,
    slot_len: float,
) -> np.ndarray:
    """Shares proportional to each pending frame's required rate.

    ``remaining_bits[u] <= 0`` marks a user with no pending frame; with nothing
    pending everywhere the slot idles (all-zero shares).
    """
    remaining = np.asarray(remaining_bits, dtype=float)
    deadlines = np.asarray(deadline_slots, dtype=float)
    pending = remaining > 0
    if not pending.any():
        return np.zeros(len(remaining))
    slots_left = np.maximum(deadlines - now, 1.0)
    required = np.where(pending, remaining / (slots_left * slot_len), 0.0)
    return required / required.sum()


@dataclass
class CcState:
    target_rate: float  # bits/s
    queue_delay_estimate: float = 0.0  # s
    min_rate: float = 1e6
    max_rate: float = 1e9

    def __post_init__(self) -> None:
        if not self.min_rate <= self.target_rate <= self.max_rate:
            raise ValueError("target_rate outside [min_rate, max_rate]")


@dataclass(frozen=True)
class CcParams:
    delay_target: float = 0.010  # s
    beta: float = 0.8  # multiplicative decrease
    increase_step: float = 100e3  # bits/s additive increase per feedback


def cc_step(
    state: CcState,
    delivered_bits: float,
    queue_delay: float,
    ladder: ResolutionLadder,
    fps: float,
    params: CcParams = CcParams(),
) -> tuple[CcState, int]:
    """Delay-driven AIMD: raise the rate below the delay target, cut above it.

    Returns the updated state and the highest ladder level whose mean rate fits
    under the new target.  The one-frame feedback lag lives in the policy
    wrapper, not here.
    """
    if queue_delay < 0:
        raise ValueError("queue_delay must be >= 0")
    estimate = queue_delay
    if estimate < params.delay_target:
        rate = state.target_rate + params.increase_step
    else:
        rate = state.target_rate * params.beta
    rate = min(max(rate, state.min_rate), state.max_rate)
    new_state = CcState(rate, estimate, state.min_rate, state.max_rate)
    level = 0
    for lv in ladder.levels:
        if lv.mean_frame_bits * fps <= rate:
            level = lv.index
    return new_state, level


# --------------------------------------------------------------------------
# Policy adapters used by the scenario runner (see env.SlotView / env.FrameView)
# --------------------------------------------------------------------------


class EqualAllocationPolicy:
    name = "equal"

    def __init__(self):
        self._shares: np.ndarray | None = None

    def allocate(self, view) -> np.ndarray:
        if self._shares is None or len(self._shares) != view.n_users:
            self._shares = equal_allocation(view.n_users)
        return self._shares


class PfAllocationPolicy:
    name = "pf"

    def __init__(self, ewma_horizon: int = 100):
        self.ewma_horizon = ewma_horizon
        self.state: PfState | None = None

    def allocate(self, view) -> np.ndarray:
        if self.state is None:
            self.state = PfState.fresh(view.n_users, self.ewma_horizon)
        shares, self.state = pf_allocation(view.instant_rates, self.state)
        return shares


class UrgencyAllocationPolicy:
    name = "urgency"

    def allocate(self, view) -> np.ndarray:
        return urgency_allocation(view.queued_bits, view.head_deadline_slot, view.now, view.slot_len)


class FixedLevelPolicy:
    """Always request the same ladder level."""

    def __init__(self, level: int):
        self.level = level
        self.name = f"fixed:{level}"

    def choose(self, view) -> int:
        return self.level


class ThresholdLevelPolicy:
    """Pick the highest sustainable level, switching only past a cost threshold.

    The sustainable level is derived from the mean busy-time capacity per frame
    over a short window (scaled by ``safety``); a switch is taken only when the
    level gap's reward at unit weight exceeds ``theta``, so larger ``theta``
    means rarer switching.
    """

    def __init__(self, theta: float, ladder: ResolutionLadder, safety: float = 0.9, window: int = 8):
        self.theta = theta
        self.ladder = ladder
        self.safety = safety
        self.window = window
        self.name = f"threshold:{theta:g}"

    def choose(self, view) -> int:
        history = view.capacity_per_frame_history[-self.window :]
        if not history:
            return view.current_level
        budget = self.safety * sum(history) / len(history)
        target = 0
        for lv in self.ladder.levels:
            if lv.mean_frame_bits <= budget:
                target = lv.index
        if abs(target - view.current_level) * 1.0 > self.theta:
            return target
        return view.current_level


class CcLevelPolicy:
    """SCReAM-style controller fed with one-frame-delayed delivery feedback."""

    name = "cc"

    def __init__(self, ladder: ResolutionLadder, fps: float, params: CcParams = CcParams(), initial_rate: float = 20e6):
        self.ladder = ladder
        self.fps = fps
        self.params = params
        self.state = CcState(target_rate=initial_rate)
        self._lagged: tuple[float, float] | None = None

    def choose(self, view) -> int:
        feedback, self._lagged = self._lagged, (view.delivered_bits_last, view.queue_delay_last)
        if feedback is None:
            return view.current_level
        delivered, delay = feedback
        self.state, level = cc_step(self.state, delivered, delay, self.ladder, self.fps, self.params)
        return level


ALLOCATION_POLICIES = {
    "equal": lambda cfg: EqualAllocationPolicy(),
    "pf": lambda cfg: PfAllocationPolicy(),
    "urgency": lambda cfg: UrgencyAllocationPolicy(),
}


def make_resolution_policy(spec: str, ladder: ResolutionLadder, fps: float):
    """Build a resolution policy from its CLI spec string."""
    if spec.startswith("fixed:"):
        level = int(spec.split(":", 1)[1])
        if not 0 <= level < len(ladder):
            raise ValueError(f"fixed level {level} outside ladder")
        return FixedLevelPolicy(level)
    if spec.startswith("threshold:"):
        return ThresholdLevelPolicy(float(spec.split(":", 1)[1]), ladder)
    if spec == "cc":
        return CcLevelPolicy(ladder, fps)
    raise ValueError(f"unknown resolution policy {spec!r} (expected fixed:K, threshold:T, or cc)")
