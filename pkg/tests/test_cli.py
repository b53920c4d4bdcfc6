import json
import subprocess
import sys
from pathlib import Path

import pytest

from vrsim.cli import main
from vrsim.config import config_from_dict, default_config_toml, load_config
from vrsim.env import ConfigError, EnvConfig
from vrsim.protocol import decode_line, encode_message


@pytest.fixture()
def tiny_cfg(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text("[run]\nn_users = 2\nepisode_frames = 30\nseed = 3\n")
    return path


# -------------------------------------------------------------------- config


def test_default_config_round_trips(tmp_path):
    path = tmp_path / "default.toml"
    assert main(["--write-default-config", str(path)]) == 0
    cfg = load_config(path)
    assert cfg == EnvConfig()


def test_unknown_config_key_rejected():
    with pytest.raises(ConfigError, match="unknown keys"):
        config_from_dict({"run": {"n_userz": 3}})
    with pytest.raises(ConfigError, match="unknown config sections"):
        config_from_dict({"wireless": {}})


def test_bad_config_value_exit_code(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("[run]\nn_users = 0\n")
    assert main(["--config", str(path)]) == 2


def test_missing_config_file_exit_code(tmp_path):
    assert main(["--config", str(tmp_path / "nope.toml")]) == 2


def test_default_config_text_contains_defaults():
    text = default_config_toml()
    assert "slots_per_frame = 20" in text
    assert "shadow_corr_dist = 50.0" in text


# ---------------------------------------------------------------------- runs


def test_run_smoke_emits_artifacts(tiny_cfg, tmp_path, capsys):
    out = tmp_path / "out"
    rc = main(["--config", str(tiny_cfg), "--controller", "equal", "--resolution", "fixed:0", "--out", str(out)])
    assert rc == 0
    captured = capsys.readouterr().out
    assert "success_rate=" in captured
    run_dir = out / "equal+fixed:0" / "seed3"
    metrics = json.loads((run_dir / "metrics.json").read_text())
    assert metrics["success_rate"] == 1.0
    assert (run_dir / "slot_log.csv").exists()
    assert (run_dir / "frame_log.csv").exists()


def test_unknown_controller_exits_2_listing_choices(capsys):
    with pytest.raises(SystemExit) as err:
        main(["--controller", "bogus"])
    assert err.value.code == 2
    assert "equal" in capsys.readouterr().err  # usage text lists the valid names


def test_unknown_resolution_exit_2(tiny_cfg, tmp_path, capsys):
    rc = main(["--config", str(tiny_cfg), "--resolution", "magic", "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "unknown resolution policy" in capsys.readouterr().err


def test_duplicate_seeds_rejected(tiny_cfg, tmp_path):
    assert main(["--config", str(tiny_cfg), "--seeds", "1,1", "--out", str(tmp_path / "o")]) == 2


def test_same_seed_reruns_byte_identical(tiny_cfg, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["--config", str(tiny_cfg), "--resolution", "fixed:3", "--seeds", "5", "--out", str(out)]) == 0
        run_dir = out / "equal+fixed:3" / "seed5"
        outs.append({p.name: p.read_bytes() for p in run_dir.iterdir()})
    assert outs[0].keys() == outs[1].keys()
    for name in outs[0]:
        assert outs[0][name] == outs[1][name], f"{name} differs between identical runs"


def test_controller_cc_shorthand(tiny_cfg, tmp_path):
    out = tmp_path / "out"
    assert main(["--config", str(tiny_cfg), "--controller", "cc", "--out", str(out)]) == 0
    assert (out / "equal+cc" / "seed3" / "metrics.json").exists()
    # pairing is fixed; an extra --resolution is a usage error
    assert main(["--config", str(tiny_cfg), "--controller", "cc", "--resolution", "fixed:1"]) == 2


def test_agent_controller_requires_serve(tiny_cfg, capsys):
    rc = main(["--config", str(tiny_cfg), "--controller", "agent"])
    assert rc == 2
    assert "--serve" in capsys.readouterr().err


def test_paper_reward_toggle_runs(tiny_cfg, tmp_path):
    out = tmp_path / "out"
    rc = main(["--config", str(tiny_cfg), "--paper-reward", "--resolution", "fixed:2", "--out", str(out)])
    assert rc == 0


def test_export_channel_trace(tiny_cfg, tmp_path):
    dest = tmp_path / "trace.csv"
    rc = main(["--config", str(tiny_cfg), "--export-channel-trace", str(dest)])
    assert rc == 0
    header = dest.read_text().splitlines()[0]
    assert header == "slot,user_id,pathloss_db,shadow_db,snr_db"


# ------------------------------------------------------------------- compare


def test_compare_urgency_dominates_equal(tiny_cfg, tmp_path):
    out = tmp_path / "cmp"
    rc = main(
        ["--config", str(tiny_cfg), "--seeds", "2,4", "--out", str(out),
         "--compare", "equal+fixed:5", "urgency+fixed:5"]
    )
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    raw = report["metrics"]["success_rate"]["raw"]
    assert raw["urgency+fixed:5"] >= raw["equal+fixed:5"]
    for fname in ("report.txt", "plot_data.csv"):
        assert (out / fname).exists()


def test_compare_requires_two_schemes(tiny_cfg, tmp_path, capsys):
    rc = main(["--config", str(tiny_cfg), "--out", str(tmp_path / "o"), "--compare", "equal+fixed:0"])
    assert rc == 2
    assert ">= 2 schemes" in capsys.readouterr().err


def test_report_regeneration_bit_identical(tiny_cfg, tmp_path):
    out = tmp_path / "cmp"
    args = ["--config", str(tiny_cfg), "--seeds", "2", "--out", str(out),
            "--compare", "equal+fixed:2", "pf+fixed:2"]
    assert main(args) == 0
    first = {name: (out / name).read_bytes() for name in ("report.json", "report.txt", "plot_data.csv")}
    assert main(args + ["--report-only"]) == 0
    for name, blob in first.items():
        assert (out / name).read_bytes() == blob


def test_report_only_missing_runs_errors(tiny_cfg, tmp_path, capsys):
    rc = main(["--config", str(tiny_cfg), "--out", str(tmp_path / "void"),
               "--compare", "equal+fixed:0", "pf+fixed:0", "--report-only"])
    assert rc == 2
    assert "missing stored metrics" in capsys.readouterr().err


def test_mismatched_stored_configs_error(tiny_cfg, tmp_path, capsys):
    out = tmp_path / "cmp"
    for scheme, hash_ in (("equal+fixed:0", "aaaa"), ("pf+fixed:0", "bbbb")):
        d = out / scheme / "seed3"
        d.mkdir(parents=True)
        (d / "metrics.json").write_text(json.dumps(
            {"avg_level": 1.0, "switching_rate": 0.1, "success_rate": 1.0, "config_hash": hash_}
        ))
    rc = main(["--config", str(tiny_cfg), "--out", str(out),
               "--compare", "equal+fixed:0", "pf+fixed:0", "--report-only"])
    assert rc == 2
    assert "mismatched configs" in capsys.readouterr().err


def test_theta_sweep_direction_short(tiny_cfg, tmp_path):
    # larger switch-cost theta must not switch more often (short smoke version;
    # the acceptance suite runs the canonical-scale sweep)
    out = tmp_path / "sweep"
    rc = main(
        ["--config", str(tiny_cfg), "--seeds", "1,2,3", "--out", str(out),
         "--compare", "equal+threshold:0.5", "equal+threshold:2.5"]
    )
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    raw = report["metrics"]["switching_rate"]["raw"]
    assert raw["equal+threshold:2.5"] <= raw["equal+threshold:0.5"]


# --------------------------------------------------------------------- serve


def test_serve_stdio_subprocess(tiny_cfg):
    proc = subprocess.Popen(
        [sys.executable, "-m", "vrsim.cli", "--serve", "--stdio", "--config", str(tiny_cfg)],
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        cwd=str(Path(__file__).parent.parent),
    )
    try:
        proc.stdin.write(encode_message({"type": "hello", "proto": 1, "seq": 0}))
        proc.stdin.flush()
        spec = decode_line(proc.stdout.readline())
        assert spec["type"] == "spec"
        proc.stdin.write(encode_message({"type": "reset", "seed": 1, "seq": 1}))
        proc.stdin.flush()
        obs = decode_line(proc.stdout.readline())
        assert obs["type"] == "obs"
        proc.stdin.close()
        assert proc.wait(timeout=30) == 0
    finally:
        proc.kill()


def test_repro_fig5_config_parses():
    cfg = load_config(Path(__file__).parent.parent / "configs" / "repro_fig5.toml")
    assert cfg.n_users == 3
    assert cfg.episode_frames == 3000
    assert cfg.fps == pytest.approx(50.0)
