"""Dual-timescale simulation core.

A slot loop (bandwidth allocation -> transmission -> deadline expiry) nests
inside a frame loop (resolution choice -> QoE reward).  The channel process is
exogenous, so one kernel call at reset materializes the whole episode's
per-slot rates; the slot loop then only moves bits and bookkeeping.  The
nesting contract is enforced: exactly ``slots_per_frame`` slot steps between
consecutive frame steps, violations raise instead of silently drifting.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import media
from .channel import ChannelParams, ChannelTrace, MobilityParams, generate_trace
from .media import Frame, FrameSource, ResolutionLadder, default_ladder, expire, transmit
from .qoe import EpisodeMetrics, QoEParams, TransitionEvent, frame_qoe, jain_index, session_metrics, transition_penalty

SNR_DB_SCALE = 40.0  # observation normalizer for SNR values in dB


class ConfigError(Exception):
    """Invalid simulator configuration."""


class SequencingError(Exception):
    """Dual-timescale nesting contract violated."""


class EpisodeAborted(Exception):
    """A policy produced an invalid action; the episode cannot continue."""


@dataclass
class EnvConfig:
    n_users: int = 3
    slot_len: float = 1e-3  # s
    slots_per_frame: int = 20
    episode_frames: int = 3000
    seed: int = 1
    channel: ChannelParams = field(default_factory=ChannelParams)
    mobility: MobilityParams = field(default_factory=MobilityParams)
    bits_per_pixel: float = 0.2
    size_cv: float = 0.2
    mean_frame_bits: tuple[float, ...] | None = None  # explicit ladder override
    trace_path: str | None = None
    packet_bits: int = media.PACKET_BITS_DEFAULT
    deadline_frac: float = 1.0  # fraction of the frame interval, (0, 1]
    initial_level: int = 0
    qoe: QoEParams = field(default_factory=QoEParams)
    w_success: float = 1.0
    w_waste: float = 0.5
    w_rate: float = 0.5
    h_slot: int = 8
    h_frame: int = 8
    fast_fading: bool = False
    channel_segments: int = 0  # >0: piecewise-constant shadow, one draw per segment
    level_delay_frames: int = 0  # resolution signaling delay, frames
    kernel: str = "auto"  # auto | numba | numpy

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.n_users < 1:
            raise ConfigError("n_users must be >= 1")
        if self.slots_per_frame < 1:
            raise ConfigError("slots_per_frame must be >= 1")
        if self.episode_frames < 1:
            raise ConfigError("episode_frames must be >= 1")
        if self.slot_len <= 0:
            raise ConfigError("slot_len must be > 0")
        if not 0.0 < self.deadline_frac <= 1.0:
            raise ConfigError("deadline_frac must be in (0, 1] so frames resolve within their own period")
        if self.h_slot < 1 or self.h_frame < 1:
            raise ConfigError("history lengths must be >= 1")
        if self.level_delay_frames < 0:
            raise ConfigError("level_delay_frames must be >= 0")
        if self.kernel not in ("auto", "numba", "numpy"):
            raise ConfigError("kernel must be auto, numba, or numpy")
        ladder = self.ladder()
        if not 0 <= self.initial_level < len(ladder):
            raise ConfigError(f"initial_level {self.initial_level} outside ladder of {len(ladder)} levels")

    def ladder(self) -> ResolutionLadder:
        if self.mean_frame_bits is not None:
            levels = tuple(
                media.LadderLevel(i, f"L{i}", float(bits), self.size_cv)
                for i, bits in enumerate(self.mean_frame_bits)
            )
            return ResolutionLadder(levels)
        return default_ladder(self.bits_per_pixel, self.size_cv)

    @property
    def fps(self) -> float:
        return 1.0 / (self.slot_len * self.slots_per_frame)

    @property
    def deadline_slots(self) -> int:
        return max(1, round(self.deadline_frac * self.slots_per_frame))

    @property
    def n_slots(self) -> int:
        return self.episode_frames * self.slots_per_frame


@dataclass
class RewardBreakdownSU:
    success_term: float
    efficiency_term: float
    required_rate_term: float
    total: float


@dataclass
class RewardBreakdownRS:
    level_term: float
    fail_term: float
    transition_term: float
    total: float


@dataclass
class SlotView:
    """What allocation policies see each slot."""

    now: int
    n_users: int
    slot_len: float
    instant_rates: np.ndarray  # bits/s at full bandwidth per user
    queued_bits: np.ndarray
    head_deadline_slot: np.ndarray  # 0 where no frame is pending


@dataclass
class FrameView:
    """What resolution policies see for one user at a frame boundary."""

    user: int
    current_level: int
    delivered_last: bool
    delivered_bits_last: float
    queue_delay_last: float  # s
    capacity_per_frame_history: list  # busy-time capacity estimates, bits/frame
    frame_interval_s: float


@dataclass
class _ClosedFrame:
    frame: Frame
    delivered: bool
    delay_slots: int  # slots from arrival to delivery; deadline span when failed


class Env:
    def __init__(self, config: EnvConfig):
        config.validate()
        self.cfg = config
        self.ladder = config.ladder()
        self.frame_trace = media.load_trace(config.trace_path, len(self.ladder)) if config.trace_path else None
        self._ready = False

    # ------------------------------------------------------------------ setup

    def reset(self, seed: int | None = None) -> tuple[list[float], list[float]]:
        cfg = self.cfg
        self.seed = cfg.seed if seed is None else seed
        root = np.random.SeedSequence(self.seed)
        channel_ss, media_ss = root.spawn(2)
        self.trace: ChannelTrace = generate_trace(
            cfg.n_slots,
            cfg.n_users,
            cfg.channel,
            cfg.mobility,
            cfg.slot_len,
            channel_ss,
            fast_fading=cfg.fast_fading,
            kernel=cfg.kernel,
            segments=cfg.channel_segments,
        )
        media_rng = np.random.Generator(np.random.PCG64(media_ss))
        self.sources = [
            FrameSource(
                u,
                self.ladder,
                cfg.slots_per_frame,
                cfg.deadline_slots,
                rng=None if self.frame_trace else media_rng,
                trace=self.frame_trace,
            )
            for u in range(cfg.n_users)
        ]

        u = cfg.n_users
        self.t = 0
        self.frames_done = 0
        self.slot_in_frame = 0
        self.done = False
        self.queues: list[list[Frame]] = [[] for _ in range(u)]
        self.tx_last = np.zeros(u)
        self.prev_shares = np.zeros(u)
        self.last_closed_level: list[int | None] = [None] * u
        self._enqueued_level = [cfg.initial_level] * u  # most recent stream level
        self._closed: list[_ClosedFrame | None] = [None] * u
        self._snr_acc = np.zeros(u)
        self._granted_acc = np.zeros(u)
        self._frame_csi = np.zeros((cfg.h_frame, u))
        self._level_hist = np.zeros((cfg.h_frame, u))
        self._hist_count = 0
        self._outcomes: list[list[bool]] = [[] for _ in range(u)]  # rolling h_frame window
        self._delay_last = np.zeros(u)  # slots
        self._delivered_bits_last = np.zeros(u)
        self._active_slots = np.zeros(u)  # slots this period with a pending frame
        self._granted_active = np.zeros(u)  # bits granted during those slots
        self._capacity_per_frame: list[list[float]] = [[] for _ in range(u)]
        self._level_delay_queue: list[list[int]] = [
            [cfg.initial_level] * u for _ in range(cfg.level_delay_frames)
        ]

        # rolling h_slot-window max of the best full-band rate, for reward scaling
        best = self.trace.rate_per_hz.max(axis=1)
        rolling = best.copy()
        for k in range(1, cfg.h_slot):
            rolling[k:] = np.maximum(rolling[k:], best[:-k])
        self._required_rate_norm = cfg.channel.total_bandwidth * np.maximum(rolling, 1e-9)

        self.events: list[TransitionEvent] = []
        self.events_by_user: list[list[TransitionEvent]] = [[] for _ in range(u)]
        self.frame_records: list[dict] = []
        n = cfg.n_slots
        self.slot_shares = np.zeros((n, u))
        self.slot_granted = np.zeros((n, u))
        self.slot_sent = np.zeros((n, u))
        self.slot_queue_bits = np.zeros((n, u))
        self.slot_reward = np.zeros((n, 4))  # success, efficiency, required, total
        self.slot_renorm = np.zeros(n, dtype=bool)

        for user in range(u):
            self._enqueue(user, cfg.initial_level)
        self._ready = True
        return self.observe_su(), self.observe_rs()

    def _enqueue(self, user: int, level: int) -> None:
        self.queues[user].append(self.sources[user].next_frame(level, self.t))
        self._enqueued_level[user] = level

    # ------------------------------------------------------------------ slots

    def _advance_slot(self, shares) -> tuple[RewardBreakdownSU, dict]:
        if not self._ready:
            raise SequencingError("reset the environment before stepping")
        if self.done:
            raise SequencingError("episode is done")
        cfg = self.cfg
        if self.slot_in_frame >= cfg.slots_per_frame:
            raise SequencingError("frame step due: slots_per_frame slot steps already taken")

        shares = np.asarray(shares, dtype=float)
        if shares.shape != (cfg.n_users,):
            raise ValueError(f"shares must have shape ({cfg.n_users},), got {shares.shape}")
        total = 0.0
        for s in shares.tolist():  # scalar loop beats ufunc reductions at these sizes
            if not math.isfinite(s):
                raise ValueError("non-finite shares")
            if s < 0:
                raise ValueError("negative shares")
            total += s
        renormalized = total > 1.0
        if renormalized:
            shares = shares / total

        t = self.t
        bw_slot = cfg.channel.total_bandwidth * cfg.slot_len
        granted = shares * (self.trace.rate_per_hz[t] * bw_slot)

        delivered_events = []
        failed_events = []
        sent = np.zeros(cfg.n_users)
        for u in range(cfg.n_users):
            q = self.queues[u]
            if q:
                self._active_slots[u] += 1
                self._granted_active[u] += granted[u]
                head = q[0]
                sent[u] = transmit(head, granted[u], cfg.packet_bits)
                if head.outcome == "delivered":
                    q.pop(0)
                    delay = t + 1 - head.arrival_slot
                    self._closed[u] = _ClosedFrame(head, True, delay)
                    self._delivered_bits_last[u] = head.size_bits
                    delivered_events.append((u, head.frame_id))
            if q and expire(q[0], t + 1):
                head = q.pop(0)
                self._closed[u] = _ClosedFrame(head, False, head.deadline_slot - head.arrival_slot)
                self._delivered_bits_last[u] = head.size_bits - head.remaining_bits
                failed_events.append((u, head.frame_id))

        success_term = cfg.w_success * len(delivered_events)
        total_granted = float(granted.sum())
        total_sent = float(sent.sum())
        if total_granted > 0:
            efficiency_term = -cfg.w_waste * (total_granted - total_sent) / total_granted
        else:
            efficiency_term = 0.0
        required_rate_term = -cfg.w_rate * self._mean_required_rate(t)
        breakdown = RewardBreakdownSU(
            success_term,
            efficiency_term,
            required_rate_term,
            success_term + efficiency_term + required_rate_term,
        )

        self.slot_shares[t] = shares
        self.slot_granted[t] = granted
        self.slot_sent[t] = sent
        self.slot_queue_bits[t] = [sum(f.remaining_bits for f in q) for q in self.queues]
        self.slot_reward[t] = (success_term, efficiency_term, required_rate_term, breakdown.total)
        self.slot_renorm[t] = renormalized

        self.tx_last = sent
        self.prev_shares = shares
        self._snr_acc += self.trace.snr_db[t]
        self._granted_acc += granted
        self.t += 1
        self.slot_in_frame += 1
        events = {"delivered": delivered_events, "failed": failed_events, "renormalized": renormalized}
        return breakdown, events

    def _mean_required_rate(self, t: int) -> float:
        """Mean pending required rate, normalized by the best recent full-band rate."""
        cfg = self.cfg
        norm = self._required_rate_norm[t]
        acc = 0.0
        pending = 0
        for q in self.queues:
            if q:
                head = q[0]
                slots_left = max(1, head.deadline_slot - (t + 1))
                acc += head.remaining_bits / (slots_left * cfg.slot_len) / norm
                pending += 1
        return acc / pending if pending else 0.0

    def step_slot(self, shares) -> tuple[list[float], RewardBreakdownSU, dict]:
        breakdown, events = self._advance_slot(shares)
        return self.observe_su(), breakdown, events

    # ------------------------------------------------------------------ frames

    def step_frame(self, levels) -> tuple[list[float], list[RewardBreakdownRS]]:
        if not self._ready:
            raise SequencingError("reset the environment before stepping")
        if self.done:
            raise SequencingError("episode is done")
        cfg = self.cfg
        if self.slot_in_frame != cfg.slots_per_frame:
            raise SequencingError(
                f"step_frame called mid-frame ({self.slot_in_frame}/{cfg.slots_per_frame} slot steps taken)"
            )
        levels = list(levels)
        if len(levels) != cfg.n_users:
            raise ValueError(f"levels must have length {cfg.n_users}")
        for lv in levels:
            if not isinstance(lv, (int, np.integer)) or not 0 <= int(lv) < len(self.ladder):
                raise ValueError(f"invalid resolution level {lv!r}")
        levels = [int(lv) for lv in levels]

        rewards: list[RewardBreakdownRS] = []
        qp = cfg.qoe
        frame_idx = self.frames_done
        for u in range(cfg.n_users):
            closed = self._closed[u]
            assert closed is not None, "frame must resolve within its own period"
            prev = self.last_closed_level[u]
            prev_level = closed.frame.level if prev is None else prev
            event = TransitionEvent(prev_level, closed.frame.level, closed.delivered)
            level_term = qp.w_level * event.new_level
            fail_term = 0.0 if event.delivered else -qp.w_fail
            transition_term = -transition_penalty(event.prev_level, event.new_level, qp)
            total = level_term + fail_term + transition_term
            rewards.append(RewardBreakdownRS(level_term, fail_term, transition_term, total))

            self.events.append(event)
            self.events_by_user[u].append(event)
            consumed = closed.frame.size_bits - closed.frame.remaining_bits
            self.frame_records.append(
                {
                    "frame": frame_idx,
                    "user": u,
                    "level": closed.frame.level,
                    "prev_level": event.prev_level,
                    "size_bits": closed.frame.size_bits,
                    "delivered": int(closed.delivered),
                    "delay_slots": closed.delay_slots if closed.delivered else -1,
                    "mean_snr_db": float(self._snr_acc[u]) / cfg.slots_per_frame,
                    "granted_bits": float(self._granted_acc[u]),
                    "consumed_bits": consumed,
                    "level_term": level_term,
                    "fail_term": fail_term,
                    "transition_term": transition_term,
                    "qoe_total": total,
                }
            )

            self.last_closed_level[u] = closed.frame.level
            outcomes = self._outcomes[u]
            outcomes.append(closed.delivered)
            if len(outcomes) > cfg.h_frame:
                outcomes.pop(0)
            self._delay_last[u] = closed.delay_slots
            # busy-time capacity estimate: granted bits per active slot, scaled
            # to the whole period (what the user could move if backlogged)
            history = self._capacity_per_frame[u]
            if self._active_slots[u] > 0:
                estimate = float(self._granted_active[u] / self._active_slots[u]) * cfg.slots_per_frame
            else:
                estimate = history[-1] if history else 0.0
            history.append(estimate)

        roll = self._hist_count % cfg.h_frame
        self._frame_csi[roll] = self._snr_acc / cfg.slots_per_frame
        self._level_hist[roll] = [self._closed[u].frame.level for u in range(cfg.n_users)]
        self._hist_count += 1

        self.frames_done += 1
        self._snr_acc[:] = 0.0
        self._granted_acc[:] = 0.0
        self._active_slots[:] = 0.0
        self._granted_active[:] = 0.0
        self._closed = [None] * cfg.n_users
        self.slot_in_frame = 0

        if self.frames_done < cfg.episode_frames:
            if cfg.level_delay_frames:
                self._level_delay_queue.append(levels)
                applied = self._level_delay_queue.pop(0)
            else:
                applied = levels
            for u in range(cfg.n_users):
                self._enqueue(u, applied[u])
        else:
            self.done = True
        return self.observe_rs(), rewards

    # ------------------------------------------------------------- observations

    def observe_su(self) -> list[float]:
        cfg = self.cfg
        t = self.t
        h = cfg.h_slot
        csi = np.zeros((h, cfg.n_users))
        avail = min(t, h)
        if avail:
            csi[h - avail :] = self.trace.snr_db[t - avail : t]
        buffer_bits = np.array([sum(f.remaining_bits for f in q) for q in self.queues], dtype=float)
        remaining = np.zeros(cfg.n_users)
        for u, q in enumerate(self.queues):
            if q:
                remaining[u] = max(q[0].deadline_slot - t, 0)
        bw_slot = cfg.channel.total_bandwidth * cfg.slot_len
        vec = np.concatenate(
            [
                (csi / SNR_DB_SCALE).T.ravel(),
                buffer_bits / self.ladder.top_bits,
                self.tx_last / bw_slot,
                self.prev_shares,
                remaining / cfg.slots_per_frame,
            ]
        )
        return [float(x) for x in vec]

    def observe_rs(self) -> list[float]:
        cfg = self.cfg
        h = cfg.h_frame
        csi = np.zeros((h, cfg.n_users))
        levels = np.zeros((h, cfg.n_users))
        avail = min(self._hist_count, h)
        if avail:
            # unroll the ring so rows run oldest -> newest
            idx = [(self._hist_count - avail + k) % h for k in range(avail)]
            csi[h - avail :] = self._frame_csi[idx]
            levels[h - avail :] = self._level_hist[idx]
        buffer_bits = np.array([sum(f.remaining_bits for f in q) for q in self.queues], dtype=float)
        success = np.array(
            [sum(o) / len(o) if o else 0.0 for o in self._outcomes], dtype=float
        )
        loss = np.array(
            [(len(o) - sum(o)) / len(o) if o else 0.0 for o in self._outcomes], dtype=float
        )
        vec = np.concatenate(
            [
                (csi / SNR_DB_SCALE).T.ravel(),
                buffer_bits / self.ladder.top_bits,
                success,
                (levels / max(len(self.ladder) - 1, 1)).T.ravel(),
                self._delay_last / cfg.slots_per_frame,
                loss,
            ]
        )
        return [float(x) for x in vec]

    def layout_su(self) -> dict:
        u, h = self.cfg.n_users, self.cfg.h_slot
        return _layout(
            "su",
            [
                ("csi_snr_db_history", u * h, f"per-user last {h} slot SNRs, dB / {SNR_DB_SCALE:g}"),
                ("buffer_bits", u, "queued bits / top-level mean frame bits"),
                ("tx_bits_last_slot", u, "bits sent last slot / (bandwidth * slot_len)"),
                ("prev_shares", u, "previous applied allocation shares"),
                ("remaining_frame_slots", u, "head-frame slots to deadline / slots_per_frame"),
            ],
        )

    def layout_rs(self) -> dict:
        u, h = self.cfg.n_users, self.cfg.h_frame
        return _layout(
            "rs",
            [
                ("csi_snr_db_frame_history", u * h, f"per-user mean SNR of last {h} frames, dB / {SNR_DB_SCALE:g}"),
                ("buffer_bits", u, "queued bits / top-level mean frame bits"),
                ("success_rate_window", u, "delivered/total over closed-frame window"),
                ("level_history", u * h, "last closed levels / (num_levels - 1)"),
                ("frame_delay", u, "last closed frame delay slots / slots_per_frame"),
                ("packet_loss_rate", u, "failed/total frames over window"),
            ],
        )

    # ------------------------------------------------------------------ views

    def slot_view(self) -> SlotView:
        cfg = self.cfg
        queued = np.array([q[0].remaining_bits if q else 0 for q in self.queues], dtype=float)
        deadlines = np.array([q[0].deadline_slot if q else 0 for q in self.queues], dtype=float)
        return SlotView(
            now=self.t,
            n_users=cfg.n_users,
            slot_len=cfg.slot_len,
            instant_rates=self.trace.rate_per_hz[self.t] * cfg.channel.total_bandwidth,
            queued_bits=queued,
            head_deadline_slot=deadlines,
        )

    def frame_view(self, user: int) -> FrameView:
        cfg = self.cfg
        outcomes = self._outcomes[user]
        return FrameView(
            user=user,
            current_level=self._enqueued_level[user],
            delivered_last=outcomes[-1] if outcomes else True,
            delivered_bits_last=float(self._delivered_bits_last[user]),
            queue_delay_last=float(self._delay_last[user]) * cfg.slot_len,
            capacity_per_frame_history=self._capacity_per_frame[user],
            frame_interval_s=cfg.slots_per_frame * cfg.slot_len,
        )

    # ----------------------------------------------------------------- metrics

    def episode_metrics(self) -> EpisodeMetrics:
        if not self.events:
            raise ValueError("no closed frames yet")
        overall = session_metrics(self.events)
        per_user = []
        for u in range(self.cfg.n_users):
            m = session_metrics(self.events_by_user[u]) if self.events_by_user[u] else None
            per_user.append(
                {
                    "user": u,
                    "avg_level": m.avg_level if m else 0.0,
                    "switching_rate": m.switching_rate if m else 0.0,
                    "success_rate": m.success_rate if m else 0.0,
                }
            )
        overall.per_user = per_user
        overall.jain_fairness_level = jain_index([p["avg_level"] for p in per_user])
        return overall

    def metrics_dict(self) -> dict:
        m = self.episode_metrics()
        qp = self.cfg.qoe
        mean_qoe = (
            sum(frame_qoe(e, qp) for e in self.events) / len(self.events) if self.events else 0.0
        )
        delivered = sum(1 for e in self.events if e.delivered)
        return {
            "avg_level": m.avg_level,
            "switching_rate": m.switching_rate,
            "success_rate": m.success_rate,
            "n_frames": m.n_events,
            "frames_delivered": delivered,
            "frames_failed": m.n_events - delivered,
            "mean_frame_qoe": mean_qoe,
            "jain_fairness_level": m.jain_fairness_level,
            "per_user": m.per_user,
            "seed": self.seed,
        }


def _layout(agent: str, segments: list[tuple[str, int, str]]) -> dict:
    out = []
    offset = 0
    for name, length, desc in segments:
        out.append({"name": name, "offset": offset, "length": length, "description": desc})
        offset += length
    return {"agent": agent, "length": offset, "segments": out}


def run_scenario(config: EnvConfig, allocation, resolution_factory, seed: int | None = None) -> Env:
    """Execute a full episode under baseline policies; returns the finished env.

    ``allocation`` is a policy with ``allocate(SlotView) -> shares``;
    ``resolution_factory()`` builds one per-user policy with
    ``choose(FrameView) -> level``.
    """
    env = Env(config)
    env.reset(seed)
    res_policies = [resolution_factory() for _ in range(config.n_users)]
    try:
        while not env.done:
            for _ in range(config.slots_per_frame):
                env._advance_slot(allocation.allocate(env.slot_view()))
            levels = [res_policies[u].choose(env.frame_view(u)) for u in range(config.n_users)]
            env.step_frame(levels)
    except (ValueError, SequencingError) as exc:
        raise EpisodeAborted(
            f"policy produced an invalid action at slot {env.t}, frame {env.frames_done}: {exc}"
        ) from exc
    return env
