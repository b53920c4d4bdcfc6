"""Dual-timescale wireless VR streaming simulator."""

from .channel import ChannelParams, ChannelSample, MobilityParams, UserMobilityState
from .env import Env, EnvConfig, run_scenario
from .media import Frame, FrameTrace, ResolutionLadder, default_ladder
from .qoe import EpisodeMetrics, QoEParams, TransitionEvent, frame_qoe, session_metrics, transition_penalty

__version__ = "0.1.0"

__all__ = [
    "ChannelParams",
    "ChannelSample",
    "MobilityParams",
    "UserMobilityState",
    "Env",
    "EnvConfig",
    "run_scenario",
    "Frame",
    "FrameTrace",
    "ResolutionLadder",
    "default_ladder",
    "EpisodeMetrics",
    "QoEParams",
    "TransitionEvent",
    "frame_qoe",
    "session_metrics",
    "transition_penalty",
    "__version__",
]
