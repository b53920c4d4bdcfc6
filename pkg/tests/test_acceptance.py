"""Acceptance criteria, one test per criterion at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one PASS/FAIL line
per criterion.  The theta-sweep and determinism criteria run the canonical
scenario (3 users x 3000 frames) and take around a minute combined.
"""
import itertools
import json
import math
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from vrsim import baselines
from vrsim.channel import ChannelParams, MobilityParams, generate_trace
from vrsim.cli import main
from vrsim.config import load_config
from vrsim.env import EnvConfig, run_scenario
from vrsim.protocol import Session, decode_line, encode_message, golden_transcript
from vrsim.qoe import QoEParams, transition_penalty

REPO = Path(__file__).parent.parent
CANONICAL = REPO / "configs" / "repro_fig5.toml"


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE FAIL: {name}")
        raise
    print(f"ACCEPTANCE PASS: {name}")


def test_determinism_and_runtime(tmp_path):
    with criterion("determinism: equal seeds give byte-identical artifacts; run < 10 s"):
        outputs = []
        elapsed = []
        for name in ("first", "second"):
            out = tmp_path / name
            start = time.perf_counter()
            rc = main(
                ["--config", str(CANONICAL), "--resolution", "threshold:0.5",
                 "--seeds", "1", "--out", str(out)]
            )
            elapsed.append(time.perf_counter() - start)
            assert rc == 0
            run_dir = out / "equal+threshold:0.5" / "seed1"
            outputs.append({p.name: p.read_bytes() for p in sorted(run_dir.iterdir())})
        assert outputs[0].keys() == outputs[1].keys()
        for fname in outputs[0]:
            assert outputs[0][fname] == outputs[1][fname], f"{fname} differs across identical runs"
        assert max(elapsed) < 10.0, f"canonical run took {max(elapsed):.2f} s"


def test_channel_statistics():
    with criterion("channel: shadow std within 8 +/- 0.5 dB, 50 m autocorr within e^-1 +/- 0.05"):
        params = ChannelParams()
        # 1 m per slot so a 50-slot lag spans the 50 m correlation distance
        trace = generate_trace(100_000, 2, params, MobilityParams(speed=1.0), 1.0, np.random.SeedSequence(3))
        std = float(trace.shadow_db.std())
        assert abs(std - 8.0) < 0.5, f"shadow std {std:.3f}"
        for u in range(2):
            series = trace.shadow_db[:, u]
            corr = float(np.corrcoef(series[:-50], series[50:])[0, 1])
            assert abs(corr - math.exp(-1.0)) < 0.05, f"autocorr {corr:.4f}"


def test_scheduler_oracles():
    with criterion("schedulers: PF matches brute force on 1000 instances; equal exact; urgency hand ratios"):
        rng = np.random.Generator(np.random.PCG64(17))
        matches = 0
        for _ in range(1000):
            n = int(rng.integers(1, 8))
            rates = rng.uniform(0.0, 1e8, size=n)
            avg = rng.uniform(1.0, 1e7, size=n)
            shares, _ = baselines.pf_allocation(rates, baselines.PfState(avg.copy()))
            best, best_metric = 0, -np.inf
            for u in range(n):
                if rates[u] / avg[u] > best_metric:
                    best, best_metric = u, rates[u] / avg[u]
            expected = np.zeros(n)
            expected[best] = 1.0
            matches += shares.tolist() == expected.tolist()
        assert matches == 1000, f"PF oracle agreement {matches}/1000"

        for n in range(1, 65):
            assert float(baselines.equal_allocation(n).sum()) == 1.0

        rng = np.random.Generator(np.random.PCG64(31))
        for _ in range(20):
            n = int(rng.integers(2, 6))
            now = int(rng.integers(0, 50))
            remaining = rng.integers(0, 50_000, size=n).astype(float)
            deadlines = (now + rng.integers(1, 40, size=n)).astype(float)
            shares = baselines.urgency_allocation(remaining, deadlines, now, 1e-3)
            required = np.array(
                [r / (max(d - now, 1.0) * 1e-3) if r > 0 else 0.0 for r, d in zip(remaining, deadlines)]
            )
            if required.sum() == 0:
                assert shares.tolist() == [0.0] * n
            else:
                assert shares == pytest.approx(required / required.sum(), rel=1e-12)


def test_qoe_properties_exhaustive():
    with criterion("qoe: asymmetry, magnitude monotonicity, threshold multiplier on all 42 ordered pairs"):
        p = QoEParams()
        pairs = [(a, b) for a, b in itertools.product(range(7), repeat=2) if a != b]
        assert len(pairs) == 42
        for a, b in pairs:
            k = abs(a - b)
            # asymmetry: downgrading by k costs more than upgrading by k
            assert transition_penalty(max(a, b), min(a, b), p) > transition_penalty(min(a, b), max(a, b), p)
            # magnitude monotonicity within each direction
            if k >= 2:
                if a > b:
                    assert transition_penalty(a, b, p) > transition_penalty(a, b + 1, p)
                else:
                    assert transition_penalty(a, b, p) > transition_penalty(a, b - 1, p)
        th = p.jump_threshold
        for base in (6, 5, 4, 3):
            if base - (th + 1) >= 0:
                ratio = transition_penalty(base, base - (th + 1), p) / transition_penalty(base, base - th, p)
                assert ratio >= p.kappa_large * (th + 1) / th


def test_theta_sweep_direction():
    with criterion("theta sweep: switching rate non-increasing in theta (3 values x 10 seeds, canonical)"):
        cfg = load_config(CANONICAL)
        means = []
        for theta in (0.5, 1.5, 2.5):
            rates = []
            for seed in range(10):
                env = run_scenario(
                    cfg,
                    baselines.EqualAllocationPolicy(),
                    lambda th=theta: baselines.ThresholdLevelPolicy(th, cfg.ladder()),
                    seed,
                )
                rates.append(env.metrics_dict()["switching_rate"])
            means.append(sum(rates) / len(rates))
        assert means[0] >= means[1] >= means[2], f"switching rates {means}"


def test_protocol_criteria():
    with criterion("protocol: golden transcript bytes, 10^4 round trips, sequencing errors close"):
        cfg = EnvConfig(n_users=2, slots_per_frame=3, episode_frames=2, h_slot=2, h_frame=2, seed=7)
        script = [
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
        golden = (Path(__file__).parent / "data" / "golden_transcript_v1.txt").read_bytes()
        assert golden_transcript(cfg, script) == golden

        from tests.test_protocol import random_message

        rng = np.random.Generator(np.random.PCG64(99))
        for _ in range(10_000):
            msg = random_message(rng)
            wire = encode_message(msg)
            assert decode_line(wire) == msg
            assert encode_message(decode_line(wire)) == wire

        # every sequencing violation must answer error and close the session
        violations = [
            {"type": "act", "agent": "rs", "action": [0, 0]},  # rs before su quota
            {"type": "reset", "seed": 1},  # reset mid-episode
            {"type": "hello", "proto": 1},  # duplicate hello
        ]
        for bad in violations:
            session = Session(cfg)
            session.handle_line(encode_message({"type": "hello", "proto": 1, "seq": 0}))
            session.handle_line(encode_message({"type": "reset", "seed": 1, "seq": 1}))
            replies, closed = session.handle_line(encode_message({**bad, "seq": 2}))
            assert closed and decode_line(replies[0])["type"] == "error"
            assert session.handle_line(b'{"type":"act","seq":3}') == ([], True)


def test_baseline_contrast_harness(tmp_path):
    with criterion("baseline harness: equal/PF/urgency/CC end-to-end with normalized report"):
        cfg_path = tmp_path / "contrast.toml"
        cfg_path.write_text("[run]\nn_users = 3\nepisode_frames = 400\nseed = 1\n")
        out = tmp_path / "report"
        rc = main(
            ["--config", str(cfg_path), "--seeds", "1,2", "--out", str(out), "--compare",
             "equal+threshold:0.5", "pf+threshold:0.5", "urgency+threshold:0.5", "equal+cc"]
        )
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert set(report["schemes"]) == {
            "equal+threshold:0.5", "pf+threshold:0.5", "urgency+threshold:0.5", "equal+cc",
        }
        for metric in ("avg_level", "switching_rate", "success_rate"):
            normalized = report["metrics"][metric]["normalized"]
            for scheme, value in normalized.items():
                if value is not None:
                    assert 0.0 < value <= 1.0, f"{metric}/{scheme} normalized {value}"
        assert (out / "report.txt").exists() and (out / "plot_data.csv").exists()
