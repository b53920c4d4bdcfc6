import io
import json
import socket
import threading
from pathlib import Path

import numpy as np
import pytest

from vrsim.env import EnvConfig
from vrsim.protocol import (
    PROTO_VERSION,
    ProtocolError,
    Session,
    decode_line,
    encode_message,
    golden_transcript,
    make_tcp_server,
    serve_stream,
)

DATA = Path(__file__).parent / "data"


def tiny_config(**kw):
    defaults = dict(n_users=2, slots_per_frame=3, episode_frames=2, h_slot=2, h_frame=2, seed=7)
    defaults.update(kw)
    return EnvConfig(**defaults)


GOLDEN_SCRIPT = [
    {"type": "hello", "proto": 1},
    {"type": "reset", "seed": 7},
    {"type": "act", "agent": "su", "action": [0.6, 0.4]},
    {"type": "act", "agent": "su", "action": [1.5, 0.9]},
    {"type": "act", "agent": "su", "action": [0.2, 0.2]},
    {"type": "act", "agent": "rs", "action": [3, 5]},
    {"type": "act", "agent": "su", "action": [0.5, 0.5]},
    {"type": "act", "agent": "su", "action": [0.0, 1.0]},
    {"type": "act", "agent": "su", "action": [0.9, 0.1]},
    {"type": "act", "agent": "rs", "action": [1, 6]},
]


def drive(session: Session, msg: dict, seq: int):
    replies, closed = session.handle_line(encode_message({**msg, "seq": seq}))
    return [decode_line(r) for r in replies], closed


# -------------------------------------------------------------------- codec


def random_message(rng) -> dict:
    def value(depth=0):
        kind = rng.integers(0, 6 if depth < 2 else 4)
        if kind == 0:
            return float(rng.normal() * 10.0 ** rng.integers(-300, 300))
        if kind == 1:
            return int(rng.integers(-(2**53), 2**53))
        if kind == 2:
            return rng.choice(["", "text", "multi word", "uniçode"]).item()
        if kind == 3:
            return bool(rng.integers(0, 2))
        if kind == 4:
            return [value(depth + 1) for _ in range(rng.integers(0, 4))]
        return {f"k{i}": value(depth + 1) for i in range(rng.integers(0, 4))}

    mtype = rng.choice(["hello", "obs", "act", "reward", "done", "error", "spec", "reset"]).item()
    msg = {"type": mtype, "seq": int(rng.integers(0, 2**31))}
    for i in range(rng.integers(0, 5)):
        msg[f"field{i}"] = value()
    return msg


def test_roundtrip_identity_randomized():
    rng = np.random.Generator(np.random.PCG64(99))
    for _ in range(10_000):
        msg = random_message(rng)
        wire = encode_message(msg)
        back = decode_line(wire)
        assert back == msg
        assert encode_message(back) == wire


def test_canonical_bytes_ignore_key_order():
    a = {"type": "obs", "seq": 3, "alpha": 1.5, "zeta": [1, 2]}
    b = {"zeta": [1, 2], "seq": 3, "alpha": 1.5, "type": "obs"}
    assert encode_message(a) == encode_message(b)


def test_float_shortest_roundtrip():
    for x in (0.1, 1 / 3, 5e-324, 1.7976931348623157e308, -0.0):
        wire = encode_message({"type": "obs", "seq": 0, "x": x})
        back = decode_line(wire)
        assert back["x"] == x or (x == 0 and str(back["x"]) == str(x))
        assert encode_message(back) == wire


def test_decode_rejections():
    with pytest.raises(ProtocolError, match="JSON object"):
        decode_line(b"[1,2]\n")
    with pytest.raises(ProtocolError, match="unknown message type"):
        decode_line(b'{"type":"warp","seq":0}\n')
    with pytest.raises(ProtocolError, match="seq"):
        decode_line(b'{"type":"obs"}\n')
    with pytest.raises(ProtocolError, match="seq"):
        decode_line(b'{"type":"obs","seq":-1}\n')
    with pytest.raises(ProtocolError, match="malformed|non-finite"):
        decode_line(b'{"type":"obs","seq":0,"x":NaN}\n')
    with pytest.raises(ProtocolError, match="malformed"):
        decode_line(b"{norbert\n")


def test_unknown_fields_ignored():
    session = Session(tiny_config())
    replies, closed = drive(session, {"type": "hello", "proto": 1, "banana": 42}, 0)
    assert not closed
    assert replies[0]["type"] == "spec"


# ------------------------------------------------------------------ sessions


def test_hello_spec_contents():
    session = Session(tiny_config(n_users=3))
    replies, closed = drive(session, {"type": "hello", "proto": PROTO_VERSION}, 0)
    spec = replies[0]
    assert not closed
    assert spec["action_dim_su"] == 3
    assert spec["action_dim_rs"] == 7
    assert spec["proto"] == PROTO_VERSION
    for layout in (spec["layout_su"], spec["layout_rs"]):
        assert layout["length"] == sum(seg["length"] for seg in layout["segments"])
    assert [lv["label"] for lv in spec["ladder"]][:2] == ["480P", "720P"]


def test_reset_determinism_across_sessions():
    payloads = []
    for _ in range(2):
        session = Session(tiny_config())
        drive(session, {"type": "hello", "proto": 1}, 0)
        replies, _ = drive(session, {"type": "reset", "seed": 11}, 1)
        payloads.append(replies[0])
    assert payloads[0]["obs_su"] == payloads[1]["obs_su"]
    assert payloads[0]["obs_rs"] == payloads[1]["obs_rs"]


def test_sequencing_violation_rs_when_su_expected():
    session = Session(tiny_config())
    drive(session, {"type": "hello", "proto": 1}, 0)
    drive(session, {"type": "reset", "seed": 1}, 1)
    replies, closed = drive(session, {"type": "act", "agent": "rs", "action": [0, 0]}, 2)
    assert closed
    assert replies[0]["type"] == "error"
    assert "sequencing" in replies[0]["message"]
    # a closed session accepts nothing
    replies, closed = drive(session, {"type": "act", "agent": "su", "action": [0.5, 0.5]}, 3)
    assert replies == [] and closed


def test_su_act_when_rs_expected():
    cfg = tiny_config()
    session = Session(cfg)
    drive(session, {"type": "hello", "proto": 1}, 0)
    drive(session, {"type": "reset", "seed": 1}, 1)
    seq = 2
    for _ in range(cfg.slots_per_frame):
        replies, closed = drive(session, {"type": "act", "agent": "su", "action": [0.5, 0.5]}, seq)
        seq += 1
        assert not closed
        assert [r["type"] for r in replies] == ["reward", "obs"]
    replies, closed = drive(session, {"type": "act", "agent": "su", "action": [0.5, 0.5]}, seq)
    assert closed and "sequencing" in replies[0]["message"]


def test_out_of_order_messages_rejected():
    session = Session(tiny_config())
    replies, closed = drive(session, {"type": "reset", "seed": 1}, 0)
    assert closed and replies[0]["type"] == "error"

    session = Session(tiny_config())
    drive(session, {"type": "hello", "proto": 1}, 0)
    replies, closed = drive(session, {"type": "hello", "proto": 1}, 1)
    assert closed and "expected reset" in replies[0]["message"]


def test_seq_must_strictly_increase():
    session = Session(tiny_config())
    drive(session, {"type": "hello", "proto": 1}, 5)
    replies, closed = drive(session, {"type": "reset", "seed": 1}, 5)
    assert closed and "seq" in replies[0]["message"]


def test_wrong_proto_version():
    session = Session(tiny_config())
    replies, closed = drive(session, {"type": "hello", "proto": 2}, 0)
    assert closed and "proto" in replies[0]["message"]


def test_full_episode_and_reset_again():
    cfg = tiny_config()
    session = Session(cfg)
    seq = 0
    replies, _ = drive(session, {"type": "hello", "proto": 1}, seq)
    seq += 1
    drive(session, {"type": "reset", "seed": 3}, seq)
    seq += 1
    last = None
    for _ in range(cfg.episode_frames):
        for _ in range(cfg.slots_per_frame):
            drive(session, {"type": "act", "agent": "su", "action": [0.4, 0.4]}, seq)
            seq += 1
        last, closed = drive(session, {"type": "act", "agent": "rs", "action": [2, 2]}, seq)
        seq += 1
        assert not closed
    types = [r["type"] for r in last]
    assert types == ["reward", "obs", "done"]
    assert last[2]["metrics"]["n_frames"] == cfg.episode_frames * cfg.n_users
    # back to ready: a new reset starts a new episode in the same session
    replies, closed = drive(session, {"type": "reset", "seed": 4}, seq)
    assert not closed and replies[0]["type"] == "obs"


def test_invalid_su_action_aborts_session():
    session = Session(tiny_config())
    drive(session, {"type": "hello", "proto": 1}, 0)
    drive(session, {"type": "reset", "seed": 1}, 1)
    replies, closed = drive(session, {"type": "act", "agent": "su", "action": [-0.5, 0.2]}, 2)
    assert closed and "invalid su action" in replies[0]["message"]
    session = Session(tiny_config())
    drive(session, {"type": "hello", "proto": 1}, 0)
    drive(session, {"type": "reset", "seed": 1}, 1)
    replies, closed = drive(session, {"type": "act", "agent": "rs", "action": [0.5, 1]}, 2)
    assert closed and ("integers" in replies[0]["message"] or "sequencing" in replies[0]["message"])


# ---------------------------------------------------------------- transcripts


def test_golden_transcript_byte_equality():
    blob = golden_transcript(tiny_config(), GOLDEN_SCRIPT)
    assert blob == (DATA / "golden_transcript_v1.txt").read_bytes()


def test_transcript_acts_always_answered_by_reward():
    blob = (DATA / "golden_transcript_v1.txt").read_bytes()
    pending_act = False
    for line in blob.decode().splitlines():
        direction, payload = line.split(" ", 1)
        msg = json.loads(payload)
        if direction == "C" and msg["type"] == "act":
            assert not pending_act, "two acts without an intervening reward"
            pending_act = True
        if direction == "S" and msg["type"] == "reward":
            pending_act = False
    assert not pending_act


# ------------------------------------------------------------------ streams


def test_serve_stream_malformed_line_reports_offset():
    cfg = tiny_config()
    first = encode_message({"type": "hello", "proto": 1, "seq": 0})
    payload = first + b"this is not json\n"
    out = io.BytesIO()
    serve_stream(cfg, io.BytesIO(payload), out)
    lines = out.getvalue().splitlines()
    err = json.loads(lines[-1])
    assert err["type"] == "error"
    assert err["offset"] == len(first)


def test_serve_stream_full_episode(tmp_path):
    cfg = tiny_config()
    wire = bytearray()
    seq = 0
    for msg in GOLDEN_SCRIPT:
        wire += encode_message({**msg, "seq": seq})
        seq += 1
    out = io.BytesIO()
    serve_stream(cfg, io.BytesIO(bytes(wire)), out)
    types = [json.loads(l)["type"] for l in out.getvalue().splitlines()]
    assert types[0] == "spec"
    assert types.count("done") == 1
    assert "error" not in types


def test_tcp_server_round_trip():
    cfg = tiny_config()
    server = make_tcp_server(cfg, "127.0.0.1", 0)
    port = server.server_address[1]
    thread = threading.Thread(target=server.handle_request, daemon=True)
    thread.start()
    try:
        with socket.create_connection(("127.0.0.1", port), timeout=5) as sock:
            fh = sock.makefile("rwb")
            fh.write(encode_message({"type": "hello", "proto": 1, "seq": 0}))
            fh.flush()
            spec = decode_line(fh.readline())
            assert spec["type"] == "spec"
            fh.write(encode_message({"type": "reset", "seed": 2, "seq": 1}))
            fh.flush()
            obs = decode_line(fh.readline())
            assert obs["type"] == "obs" and len(obs["obs_su"]) == spec["layout_su"]["length"]
    finally:
        thread.join(timeout=5)
        server.server_close()
