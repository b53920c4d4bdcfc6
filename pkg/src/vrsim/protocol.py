"""Line-delimited JSON wire protocol exposing the environment to external agents.

One JSON object per LF-terminated UTF-8 line.  Serialization is canonical
(sorted keys, minimal separators, shortest round-trip floats, no NaN/Inf) so
transcripts are byte-comparable across implementations.  A session walks
awaiting_hello -> ready -> in_episode (-> ready at episode end); any
out-of-order or malformed input produces an error message and closes the
session.  Acts must alternate per the dual-timescale contract:
``slots_per_frame`` SU acts, then one RS act, repeating.
"""
from __future__ import annotations

import hashlib
import json
import socketserver
import sys
from dataclasses import asdict, replace

from .env import Env, EnvConfig, SequencingError

PROTO_VERSION = 1
DEFAULT_PORT = 4780
MESSAGE_TYPES = frozenset({"hello", "spec", "reset", "obs", "act", "reward", "done", "error"})


class ProtocolError(Exception):
    """Malformed or out-of-order protocol input."""


def _reject_constant(name: str):
    raise ProtocolError(f"non-finite number {name} not allowed")


def encode_message(msg: dict) -> bytes:
    """Canonical wire form: sorted keys, tight separators, LF terminator."""
    return (json.dumps(msg, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n").encode("utf-8")


def decode_line(line: bytes | str) -> dict:
    if isinstance(line, bytes):
        line = line.decode("utf-8")
    try:
        msg = json.loads(line, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed JSON: {exc.msg}") from exc
    if not isinstance(msg, dict):
        raise ProtocolError("message must be a JSON object")
    mtype = msg.get("type")
    if mtype not in MESSAGE_TYPES:
        raise ProtocolError(f"unknown message type {mtype!r}")
    seq = msg.get("seq")
    if not isinstance(seq, int) or isinstance(seq, bool) or seq < 0:
        raise ProtocolError("seq must be a non-negative integer")
    return msg


def config_hash(config: EnvConfig) -> str:
    blob = json.dumps(asdict(config), sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def _breakdown_su(b) -> dict:
    return {
        "success_term": b.success_term,
        "efficiency_term": b.efficiency_term,
        "required_rate_term": b.required_rate_term,
        "total": b.total,
    }


def _breakdown_rs(b) -> dict:
    return {
        "level_term": b.level_term,
        "fail_term": b.fail_term,
        "transition_term": b.transition_term,
        "total": b.total,
    }


class Session:
    """Protocol state machine for one connection; transport-agnostic."""

    def __init__(self, config: EnvConfig):
        self.config = config
        self.phase = "awaiting_hello"
        self.env: Env | None = None
        self._out_seq = 0
        self._last_in_seq = -1
        self._expected_agent = "su"
        self._su_count = 0

    # each reply is returned already encoded so seq numbering stays in one place
    def _msg(self, mtype: str, **fields) -> bytes:
        payload = {"type": mtype, "seq": self._out_seq, **fields}
        self._out_seq += 1
        return encode_message(payload)

    def _fail(self, message: str, offset: int | None = None) -> tuple[list[bytes], bool]:
        self.phase = "closed"
        fields = {"message": message}
        if offset is not None:
            fields["offset"] = offset
        return [self._msg("error", **fields)], True

    def handle_line(self, raw: bytes, offset: int | None = None) -> tuple[list[bytes], bool]:
        """Process one wire line; returns (encoded replies, close_session)."""
        if self.phase == "closed":
            return [], True
        try:
            msg = decode_line(raw)
        except ProtocolError as exc:
            return self._fail(str(exc), offset=offset)
        if msg["seq"] <= self._last_in_seq:
            return self._fail(f"seq must strictly increase (got {msg['seq']} after {self._last_in_seq})")
        self._last_in_seq = msg["seq"]

        mtype = msg["type"]
        if self.phase == "awaiting_hello":
            if mtype != "hello":
                return self._fail(f"expected hello, got {mtype}")
            if msg.get("proto") != PROTO_VERSION:
                return self._fail(f"unsupported proto {msg.get('proto')!r}, want {PROTO_VERSION}")
            self.phase = "ready"
            return [self._spec_message()], False
        if self.phase == "ready":
            if mtype != "reset":
                return self._fail(f"expected reset, got {mtype}")
            return self._handle_reset(msg)
        if self.phase == "in_episode":
            if mtype != "act":
                return self._fail(f"expected act, got {mtype}")
            return self._handle_act(msg)
        return self._fail("session closed")  # pragma: no cover - closed handled above

    def _spec_message(self) -> bytes:
        probe = Env(self.config)  # layouts and ladder only; no episode state
        ladder = [
            {"index": lv.index, "label": lv.label, "mean_frame_bits": lv.mean_frame_bits}
            for lv in probe.ladder.levels
        ]
        return self._msg(
            "spec",
            proto=PROTO_VERSION,
            n_users=self.config.n_users,
            action_dim_su=self.config.n_users,
            action_dim_rs=len(probe.ladder),
            slots_per_frame=self.config.slots_per_frame,
            episode_frames=self.config.episode_frames,
            layout_su=probe.layout_su(),
            layout_rs=probe.layout_rs(),
            ladder=ladder,
            config_hash=config_hash(self.config),
        )

    def _handle_reset(self, msg: dict) -> tuple[list[bytes], bool]:
        seed = msg.get("seed", self.config.seed)
        if not isinstance(seed, int) or isinstance(seed, bool):
            return self._fail("reset seed must be an integer")
        self.env = Env(self.config)
        obs_su, obs_rs = self.env.reset(seed)
        self.phase = "in_episode"
        self._expected_agent = "su"
        self._su_count = 0
        return [self._msg("obs", obs_su=obs_su, obs_rs=obs_rs, slot=0, frame=0)], False

    def _handle_act(self, msg: dict) -> tuple[list[bytes], bool]:
        agent = msg.get("agent")
        if agent not in ("su", "rs"):
            return self._fail(f"act agent must be su or rs, got {agent!r}")
        if agent != self._expected_agent:
            return self._fail(
                f"sequencing: expected {self._expected_agent} act "
                f"({self._su_count}/{self.config.slots_per_frame} slot acts taken)"
            )
        action = msg.get("action")
        if not isinstance(action, list) or len(action) != self.config.n_users:
            return self._fail(f"action must be a list of length {self.config.n_users}")
        env = self.env
        assert env is not None
        if agent == "su":
            if not all(isinstance(a, (int, float)) and not isinstance(a, bool) for a in action):
                return self._fail("su action entries must be numbers")
            try:
                obs, breakdown, events = env.step_slot([float(a) for a in action])
            except (ValueError, SequencingError) as exc:
                return self._fail(f"invalid su action: {exc}")
            self._su_count += 1
            if self._su_count == self.config.slots_per_frame:
                self._expected_agent = "rs"
            replies = [
                self._msg(
                    "reward",
                    agent="su",
                    reward=breakdown.total,
                    breakdown=_breakdown_su(breakdown),
                    info={
                        "renormalized": events["renormalized"],
                        "delivered": events["delivered"],
                        "failed": events["failed"],
                    },
                ),
                self._msg("obs", agent="su", obs=obs, slot=env.t, frame=env.frames_done),
            ]
            return replies, False

        if not all(isinstance(a, int) and not isinstance(a, bool) for a in action):
            return self._fail("rs action entries must be integers")
        try:
            obs, rewards = env.step_frame(action)
        except (ValueError, SequencingError) as exc:
            return self._fail(f"invalid rs action: {exc}")
        self._expected_agent = "su"
        self._su_count = 0
        replies = [
            self._msg(
                "reward",
                agent="rs",
                reward=[b.total for b in rewards],
                breakdown=[_breakdown_rs(b) for b in rewards],
            ),
            self._msg("obs", agent="rs", obs=obs, slot=env.t, frame=env.frames_done),
        ]
        if env.done:
            replies.append(self._msg("done", metrics=env.metrics_dict()))
            self.phase = "ready"
        return replies, False


def serve_stream(config: EnvConfig, rfile, wfile) -> None:
    """Drive one session over byte streams until close or EOF."""
    session = Session(config)
    offset = 0
    for raw in iter(rfile.readline, b""):
        replies, close = session.handle_line(raw, offset=offset)
        offset += len(raw)
        for reply in replies:
            wfile.write(reply)
        wfile.flush()
        if close:
            break


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        serve_stream(self.server.env_config, self.rfile, self.wfile)  # type: ignore[attr-defined]


def make_tcp_server(config: EnvConfig, host: str = "127.0.0.1", port: int = DEFAULT_PORT, multi_session: bool = False):
    """Build (without starting) the TCP server; one env instance per connection."""
    cls = socketserver.ThreadingTCPServer if multi_session else socketserver.TCPServer
    server = cls((host, port), _Handler, bind_and_activate=False)
    server.allow_reuse_address = True
    server.env_config = config  # type: ignore[attr-defined]
    server.server_bind()
    server.server_activate()
    return server


def serve_tcp(config: EnvConfig, host: str = "127.0.0.1", port: int = DEFAULT_PORT, multi_session: bool = False) -> None:
    with make_tcp_server(config, host, port, multi_session) as server:
        server.serve_forever()


def serve_stdio(config: EnvConfig) -> None:
    serve_stream(config, sys.stdin.buffer, sys.stdout.buffer)


def golden_transcript(config: EnvConfig, script: list[dict]) -> bytes:
    """Play scripted client messages through a fresh session; record both sides.

    Lines are prefixed ``C ``/``S `` by direction.  The channel kernel is
    forced to the pure-numpy reference path so the transcript is reproducible
    across kernel backends.
    """
    session = Session(replace(config, kernel="numpy"))
    out = bytearray()
    for seq, msg in enumerate(script):
        line = encode_message({**msg, "seq": seq})
        out += b"C " + line
        replies, close = session.handle_line(line)
        for reply in replies:
            out += b"S " + reply
        if close:
            break
    return bytes(out)
