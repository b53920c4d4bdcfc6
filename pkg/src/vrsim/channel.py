"""Radio channel and mobility model.

Users walk randomly inside a square cell centred on the base station.  Large
scale loss is a log-distance path-loss law plus spatially correlated
(Gudmundson) log-normal shadow fading; the per-slot achievable spectral
efficiency is log2(1 + SNR).  Scalar single-step operations are provided for
testing and composition; episode-length traces are produced by
:func:`generate_trace`, which runs the batched kernel in ``_kernels``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

SPEED_OF_LIGHT = 299_792_458.0
D_MIN = 1.0  # m, path-loss clamp floor (avoids singular near-field values)


@dataclass
class ChannelParams:
    carrier_freq: float = 3.5e9  # Hz
    noise_psd: float = -174.0  # dBm/Hz
    tx_power: float = 30.0  # dBm
    total_bandwidth: float = 100e6  # Hz
    bs_antenna_height: float = 4.0  # m
    ue_antenna_height: float = 1.5  # m
    shadow_std: float = 8.0  # dB
    shadow_corr_dist: float = 50.0  # m
    pathloss_exponent: float = 3.5
    cell_side: float = 100.0  # m

    def __post_init__(self) -> None:
        if self.total_bandwidth <= 0:
            raise ValueError("total_bandwidth must be > 0")
        if self.shadow_std < 0:
            raise ValueError("shadow_std must be >= 0")
        if self.shadow_corr_dist <= 0:
            raise ValueError("shadow_corr_dist must be > 0")
        if self.cell_side <= 0:
            raise ValueError("cell_side must be > 0")

    @property
    def noise_power_db(self) -> float:
        """Noise power over the full band, dBm."""
        return self.noise_psd + 10.0 * math.log10(self.total_bandwidth)

    @property
    def height_diff(self) -> float:
        return self.bs_antenna_height - self.ue_antenna_height


@dataclass
class MobilityParams:
    speed: float = 1.0  # m/s
    heading_noise_std: float = 0.1  # rad per step


@dataclass
class UserMobilityState:
    position: tuple[float, float]
    speed: float
    heading: float

    def validate(self, cell_side: float) -> None:
        half = cell_side / 2.0
        if abs(self.position[0]) > half or abs(self.position[1]) > half:
            raise ValueError(f"position {self.position} outside cell of side {cell_side}")


@dataclass
class ChannelSample:
    pathloss: float  # dB
    shadow: float  # dB
    snr: float  # linear
    rate_per_hz: float  # bits/s/Hz

    @property
    def snr_db(self) -> float:
        return 10.0 * math.log10(self.snr)


def _wrap_angle(h: float) -> float:
    return (h + math.pi) % (2.0 * math.pi) - math.pi


def step_mobility(
    state: UserMobilityState,
    dt: float,
    cell_side: float,
    rng: np.random.Generator,
    heading_noise_std: float = 0.1,
) -> UserMobilityState:
    """Advance a random-walk step: move, perturb heading, reflect at the walls."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    half = cell_side / 2.0
    x = state.position[0] + state.speed * dt * math.cos(state.heading)
    y = state.position[1] + state.speed * dt * math.sin(state.heading)
    h = state.heading + heading_noise_std * rng.normal()
    while x > half or x < -half:
        x = 2.0 * half - x if x > half else -2.0 * half - x
        h = math.pi - h
    while y > half or y < -half:
        y = 2.0 * half - y if y > half else -2.0 * half - y
        h = -h
    return UserMobilityState(position=(x, y), speed=state.speed, heading=_wrap_angle(h))


def free_space_pl_1m(carrier_freq: float) -> float:
    """Free-space path loss at 1 m reference distance, dB."""
    return 20.0 * math.log10(4.0 * math.pi * carrier_freq / SPEED_OF_LIGHT)


def path_loss(distance_3d: float, params: ChannelParams) -> float:
    """Log-distance path loss, dB, clamped below ``D_MIN``."""
    d = max(distance_3d, D_MIN)
    return free_space_pl_1m(params.carrier_freq) + 10.0 * params.pathloss_exponent * math.log10(d)


def shadow_step(
    prev_shadow: float,
    dist_moved: float,
    params: ChannelParams,
    rng: np.random.Generator,
) -> float:
    """Gudmundson AR(1) shadow update; stationary std equals ``shadow_std``."""
    if dist_moved < 0:
        raise ValueError("dist_moved must be >= 0")
    rho = math.exp(-dist_moved / params.shadow_corr_dist)
    innov_std = params.shadow_std * math.sqrt(1.0 - rho * rho)
    return rho * prev_shadow + rng.normal(0.0, innov_std)


def sample_channel(
    user: UserMobilityState,
    prev: ChannelSample | None,
    dist_moved: float,
    params: ChannelParams,
    rng: np.random.Generator,
) -> ChannelSample:
    """Compose path loss and shadow evolution into an SNR sample.

    With ``prev=None`` the shadow process starts from its stationary
    distribution (one N(0, shadow_std) draw).
    """
    x, y = user.position
    d = math.sqrt(x * x + y * y + params.height_diff**2)
    pl = path_loss(d, params)
    if prev is None:
        shadow = rng.normal(0.0, params.shadow_std)
    else:
        shadow = shadow_step(prev.shadow, dist_moved, params, rng)
    snr_db = params.tx_power - pl - shadow - params.noise_power_db
    snr = 10.0 ** (snr_db / 10.0)
    return ChannelSample(pathloss=pl, shadow=shadow, snr=snr, rate_per_hz=math.log2(1.0 + snr))


def capacity_bits(
    sample: ChannelSample,
    bandwidth_share: float,
    slot_len: float,
    params: ChannelParams,
) -> float:
    """Deliverable bits in one slot for a fractional bandwidth share."""
    if not 0.0 <= bandwidth_share <= 1.0:
        raise ValueError("bandwidth_share must be in [0, 1]")
    return bandwidth_share * params.total_bandwidth * slot_len * sample.rate_per_hz


@dataclass
class ChannelTrace:
    """Per-slot, per-user channel realization for a whole episode.

    Arrays are shaped (n_slots, n_users).  Slot t holds the state after t+1
    mobility/shadow steps from the initial draw.
    """

    pathloss_db: np.ndarray
    shadow_db: np.ndarray
    snr_db: np.ndarray
    rate_per_hz: np.ndarray
    final_positions: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]

    @property
    def n_slots(self) -> int:
        return self.pathloss_db.shape[0]

    @property
    def n_users(self) -> int:
        return self.pathloss_db.shape[1]


def generate_trace(
    n_slots: int,
    n_users: int,
    params: ChannelParams,
    mobility: MobilityParams,
    slot_len: float,
    seed_seq: np.random.SeedSequence,
    fast_fading: bool = False,
    kernel: str = "auto",
    segments: int = 0,
) -> ChannelTrace:
    """Generate an episode channel trace.

    Draw layout (fixed; the scalar-op composition consumes it identically):
    stream 0 seeds initial positions (uniform over the cell), headings and
    stationary shadow; stream 1 provides one (heading, shadow) standard-normal
    pair per user per slot, then per-slot Rayleigh power factors when fast
    fading is enabled.

    ``segments > 0`` replaces the correlated shadow walk with a piecewise
    constant large-scale term: one stationary draw per segment per user, held
    flat within the segment.  Combined with zero speed and fast fading this
    yields a channel whose mean is piecewise constant while individual slots
    fluctuate heavily (a stress scenario for resolution stability studies).
    """
    init_ss, noise_ss, seg_ss = seed_seq.spawn(3)
    init_rng = np.random.Generator(np.random.PCG64(init_ss))
    noise_rng = np.random.Generator(np.random.PCG64(noise_ss))

    half = params.cell_side / 2.0
    pos = init_rng.uniform(-half, half, size=(n_users, 2))
    heading = init_rng.uniform(-math.pi, math.pi, size=n_users)
    shadow = init_rng.normal(0.0, params.shadow_std, size=n_users)

    noise = noise_rng.normal(size=(n_slots, n_users, 2))
    if fast_fading:
        fading = noise_rng.exponential(1.0, size=(n_slots, n_users))
    else:
        fading = np.empty((0, 0))

    step = mobility.speed * slot_len
    step_len = np.full(n_users, step)
    rho = np.full(n_users, math.exp(-step / params.shadow_corr_dist))
    innov_std = params.shadow_std * np.sqrt(1.0 - rho * rho)

    out = tuple(np.empty((n_slots, n_users)) for _ in range(4))
    impl = _kernels.trace_loop_impl(kernel)
    impl(
        noise,
        fading,
        pos,
        heading,
        shadow,
        step_len,
        half,
        mobility.heading_noise_std,
        rho,
        innov_std,
        free_space_pl_1m(params.carrier_freq),
        10.0 * params.pathloss_exponent,
        params.height_diff**2,
        D_MIN,
        params.tx_power - params.noise_power_db,
        *out,
    )
    trace = ChannelTrace(*out, final_positions=pos)
    if segments > 0:
        _apply_segment_shadow(trace, params, segments, fading if fast_fading else None, seg_ss)
    return trace


def _apply_segment_shadow(
    trace: ChannelTrace,
    params: ChannelParams,
    segments: int,
    fading: np.ndarray | None,
    seg_ss: np.random.SeedSequence,
) -> None:
    """Overwrite the shadow term with per-segment constants and rebuild SNR."""
    n_slots, n_users = trace.shadow_db.shape
    rng = np.random.Generator(np.random.PCG64(seg_ss))
    draws = rng.normal(0.0, params.shadow_std, size=(segments, n_users))
    seg_len = -(-n_slots // segments)  # ceil
    trace.shadow_db[:] = np.repeat(draws, seg_len, axis=0)[:n_slots]
    snr_db = params.tx_power - params.noise_power_db - trace.pathloss_db - trace.shadow_db
    snr = 10.0 ** (snr_db / 10.0)
    if fading is not None:
        snr = snr * fading
        snr_db = 10.0 * np.log10(snr)
    trace.snr_db[:] = snr_db
    trace.rate_per_hz[:] = np.log2(1.0 + snr)



def export_trace_csv(trace: ChannelTrace, path) -> None:
    """Write the trace as CSV: slot, user_id, pathloss_db, shadow_db, snr_db."""
    with open(path, "w", newline="") as fh:
        fh.write("slot,user_id,pathloss_db,shadow_db,snr_db\n")
        for t in range(trace.n_slots):
            for u in range(trace.n_users):
                fh.write(
                    f"{t},{u},{float(trace.pathloss_db[t, u])!r},"
                    f"{float(trace.shadow_db[t, u])!r},{float(trace.snr_db[t, u])!r}\n"
                )
