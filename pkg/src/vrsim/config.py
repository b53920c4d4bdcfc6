"""TOML config file <-> EnvConfig mapping.

Every key mirrors an ``EnvConfig`` field; unknown keys are rejected so typos
fail loudly.  ``default_config_toml`` emits a fully commented file with every
default spelled out.
"""
from __future__ import annotations

import sys

from .channel import ChannelParams, MobilityParams
from .env import ConfigError, EnvConfig
from .qoe import QoEParams

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_RUN_KEYS = {
    "n_users",
    "slot_len",
    "slots_per_frame",
    "episode_frames",
    "seed",
    "packet_bits",
    "deadline_frac",
    "initial_level",
    "h_slot",
    "h_frame",
    "fast_fading",
    "channel_segments",
    "level_delay_frames",
    "kernel",
    "w_success",
    "w_waste",
    "w_rate",
}
_MEDIA_KEYS = {"bits_per_pixel", "size_cv", "mean_frame_bits", "trace_path"}


def _section(data: dict, name: str, allowed: set[str]) -> dict:
    section = data.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"[{name}] must be a table")
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {', '.join(sorted(unknown))}")
    return section


def config_from_dict(data: dict) -> EnvConfig:
    unknown = set(data) - {"run", "media", "channel", "mobility", "qoe"}
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(sorted(unknown))}")
    run = _section(data, "run", _RUN_KEYS)
    media = _section(data, "media", _MEDIA_KEYS)
    chan = _section(data, "channel", {f for f in ChannelParams.__dataclass_fields__})
    mob = _section(data, "mobility", {f for f in MobilityParams.__dataclass_fields__})
    qoe = _section(data, "qoe", {f for f in QoEParams.__dataclass_fields__})
    mean_bits = media.get("mean_frame_bits")
    try:
        return EnvConfig(
            channel=ChannelParams(**chan),
            mobility=MobilityParams(**mob),
            qoe=QoEParams(**qoe),
            bits_per_pixel=media.get("bits_per_pixel", 0.2),
            size_cv=media.get("size_cv", 0.2),
            mean_frame_bits=tuple(mean_bits) if mean_bits else None,
            trace_path=media.get("trace_path"),
            **run,
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> EnvConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data)


def default_config_toml(cfg: EnvConfig | None = None) -> str:
    cfg = cfg or EnvConfig()
    ch, mo, qp = cfg.channel, cfg.mobility, cfg.qoe
    trace_line = f'trace_path = "{cfg.trace_path}"' if cfg.trace_path else '# trace_path = "frames.csv"  # CSV header l0..l6, bits per frame'
    return f"""\
# vrsim simulator configuration (all values shown are the defaults)

[run]
n_users = {cfg.n_users}
slot_len = {cfg.slot_len}            # s
slots_per_frame = {cfg.slots_per_frame}        # 20 x 1 ms slots -> 50 FPS
episode_frames = {cfg.episode_frames}
seed = {cfg.seed}
packet_bits = {cfg.packet_bits}
deadline_frac = {cfg.deadline_frac}          # fraction of the frame interval, (0, 1]
initial_level = {cfg.initial_level}
h_slot = {cfg.h_slot}                   # SU observation history, slots
h_frame = {cfg.h_frame}                  # RS observation history, frames
fast_fading = {str(cfg.fast_fading).lower()}
channel_segments = {cfg.channel_segments}   # >0: piecewise-constant shadow (test scenario)
level_delay_frames = {cfg.level_delay_frames}
kernel = "{cfg.kernel}"             # auto | numba | numpy
w_success = {cfg.w_success}              # SU reward weights
w_waste = {cfg.w_waste}
w_rate = {cfg.w_rate}

[media]
bits_per_pixel = {cfg.bits_per_pixel}       # frame bits scale with pixel count
size_cv = {cfg.size_cv}              # synthetic size coefficient of variation
{trace_line}

[channel]
carrier_freq = {ch.carrier_freq:.1e}
noise_psd = {ch.noise_psd}           # dBm/Hz
tx_power = {ch.tx_power}             # dBm
total_bandwidth = {ch.total_bandwidth:.1e}
bs_antenna_height = {ch.bs_antenna_height}
ue_antenna_height = {ch.ue_antenna_height}
shadow_std = {ch.shadow_std}             # dB
shadow_corr_dist = {ch.shadow_corr_dist}      # m
pathloss_exponent = {ch.pathloss_exponent}
cell_side = {ch.cell_side}            # m

[mobility]
speed = {mo.speed}                  # m/s
heading_noise_std = {mo.heading_noise_std}      # rad per slot

[qoe]
w_level = {qp.w_level}
theta_down = {qp.theta_down}             # per-level downgrade penalty
theta_up = {qp.theta_up}               # per-level upgrade penalty
kappa_large = {qp.kappa_large}            # multiplier beyond jump_threshold
jump_threshold = {qp.jump_threshold}
w_fail = {qp.w_fail}
"""
