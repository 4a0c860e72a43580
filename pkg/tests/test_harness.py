import dataclasses
import json
import re
import shutil
from pathlib import Path

import numpy as np
import pytest

from bipedlab.dynamics import default_biped
from bipedlab.env import ConstraintConfig, EnvConfig
from bipedlab.errors import ConfigError
from bipedlab.harness.cli import main
from bipedlab.harness.config import ExperimentConfig, ExperimentSpec, JumpSpec, PushSpec, SlipSpec, load_config
from bipedlab.harness.protocols import (
    PushEvent,
    TrialSpec,
    count_jumps,
    find_max_velocity,
    logged_impulse,
    run_jump_eval,
    run_push_sweep,
    run_slip_test,
    run_trials,
    run_velocity_sweep,
)
from bipedlab.metrics import ExperimentLog, push_impulse
from bipedlab.ppo import init_policy, save_checkpoint

ROOT = Path(__file__).resolve().parents[1]
DATA = Path(__file__).resolve().parent / "data"
MODEL = default_biped()
ENV = EnvConfig()


def stand(obs):
    return np.zeros((obs.shape[0], 4))


def stub_limit(limit):
    """Stands still for commands within +-limit, throws itself over otherwise."""

    def act(obs):
        a = np.zeros((obs.shape[0], 4))
        a[np.abs(obs[:, 0]) > limit + 1e-9] = [4.0, -4.0, -4.0, 4.0]
        return a

    return act


SHORT = ExperimentSpec(duration=1.2, window=0.3, repetitions=2, init_noise=(0.0, 0.0))


# ---------------------------------------------------------------- config
def test_default_grid_has_21_commands():
    grid = ExperimentSpec().grid()
    assert len(grid) == 21
    assert grid[0] == -1.0 and grid[-1] == 1.0 and 0.0 in grid
    np.testing.assert_allclose(np.diff(grid), 0.1, atol=1e-12)


@pytest.mark.parametrize("kw", [dict(step=0.0), dict(repetitions=0), dict(v_min=1.0, v_max=0.0),
                                dict(protocol="dance")])
def test_experiment_spec_validation(kw):
    with pytest.raises(ConfigError):
        ExperimentSpec(**kw)


@pytest.mark.parametrize("kw", [dict(angles=(360.0,)), dict(forces=(1.0, 1.0)), dict(forces=(2.0, 1.0)),
                                dict(duration=0.0), dict(push_time=0.0)])
def test_push_spec_validation(kw):
    with pytest.raises(ConfigError):
        PushSpec(**kw)


def test_shipped_configs_load():
    walk = load_config(ROOT / "configs" / "walk.toml")
    jump = load_config(ROOT / "configs" / "jump.toml")
    assert walk.model == MODEL
    assert walk.env.constraints.gait == "walking" and jump.env.constraints.gait == "jumping"
    assert walk.env.constraint_hash() != jump.env.constraint_hash()
    assert walk.train.total_steps == 10_000_000


def test_config_rejects_unknown_keys(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[experiment.velocity]\nspeed = 3\n")
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text("[weird]\n")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")


def test_config_dict_round_trip(tmp_path):
    cfg = load_config(ROOT / "configs" / "walk.toml").with_seed(4)
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"config": cfg.to_dict()}))
    assert load_config(p) == cfg


# ---------------------------------------------------------------- trials
def test_batched_trials_match_single_runs():
    specs = [TrialSpec(3, 0.1, 0.6, (0.02, 0.05)), TrialSpec(8, -0.2, 0.4, (0.02, 0.05))]
    both = run_trials(stand, specs, ENV, MODEL)
    for spec, res in zip(specs, both):
        alone = run_trials(stand, [spec], ENV, MODEL)[0]
        assert alone.records == res.records
    assert [r.steps for r in both] == [30, 20]


def test_trials_stop_at_termination():
    res = run_trials(stub_limit(0.0), [TrialSpec(0, 0.5, 4.0)], ENV, MODEL)[0]
    assert res.fell and res.steps < 200
    assert res.records[-1]["terminated"]
    assert res.fall_time == pytest.approx(res.steps * ENV.policy_dt)


# ---------------------------------------------------------------- velocity sweep and max velocity
def test_stub_max_velocity():
    spec = dataclasses.replace(SHORT, v_min=-0.6, v_max=0.6)
    r = find_max_velocity(stub_limit(0.3), spec, ENV, MODEL, seed=3)
    assert r.v_max == pytest.approx(0.3)
    assert r.v_min == pytest.approx(-0.3)
    assert r.v_min == -r.v_max
    assert r.fr_max == pytest.approx(0.3 / np.sqrt(9.81 * 0.4))
    assert not r.below_grid_forward and not r.below_grid_backward


def test_max_velocity_below_grid():
    spec = dataclasses.replace(SHORT, v_min=-0.2, v_max=0.2)
    r = find_max_velocity(stub_limit(0.0), spec, ENV, MODEL)
    assert r.v_max is None and r.v_min is None
    assert r.below_grid_forward and r.below_grid_backward


def test_velocity_sweep_rows():
    spec = dataclasses.replace(SHORT, v_min=-0.1, v_max=0.1)
    rep = run_velocity_sweep(stub_limit(0.05), spec, ENV, MODEL)
    assert [s["command"] for s in rep.summary] == [-0.1, 0.0, 0.1]
    assert all(s["repetitions"] == spec.repetitions for s in rep.summary)
    assert len(rep.trials) == 3 * spec.repetitions
    zero = rep.summary[1]
    assert zero["successes"] == spec.repetitions  # balancing in place counts as success
    assert abs(zero["v_mean"]) < spec.zero_speed_tol
    assert rep.summary[0]["falls"] == spec.repetitions
    for s in rep.summary:
        assert s["command_froude"] == pytest.approx(s["command"] / np.sqrt(9.81 * 0.4))
    assert rep.summary[1]["error_froude"] == pytest.approx(rep.summary[1]["error"] / np.sqrt(9.81 * 0.4))


# ---------------------------------------------------------------- pushes
def test_push_impulse_from_logged_profile():
    for F, T in ((2.0, 0.2), (5.5, 0.1), (1.25, 0.3)):
        spec = TrialSpec(0, 0.0, 1.0, push=PushEvent(0.0, F, 0.2, T))
        res = run_trials(stand, [spec], ENV, MODEL)[0]
        assert logged_impulse(res) == pytest.approx(F * T, abs=1e-9)
        assert abs(logged_impulse(res) - F * T) <= 1e-9
        ev = [r["event"] for r in res.records if "event" in r]
        assert ev == [{"type": "push", "t_start": 0.2, "duration": pytest.approx(T), "force": F, "angle": 0.0}]


def test_push_direction():
    fwd = run_trials(stand, [TrialSpec(0, 0.0, 0.6, push=PushEvent(0.0, 2.0, 0.2, 0.2))], ENV, MODEL)[0]
    back = run_trials(stand, [TrialSpec(0, 0.0, 0.6, push=PushEvent(180.0, 2.0, 0.2, 0.2))], ENV, MODEL)[0]
    assert fwd.records[-1]["vx"] > 0.05 and back.records[-1]["vx"] < -0.05
    assert fwd.records[15]["push_force"] == [2.0, 0.0]
    with pytest.raises(ConfigError):
        PushEvent(90.0, 1.0, 0.2, 0.2).vector()


def test_zero_push_always_survived():
    spec = PushSpec(angles=(0.0, 180.0), forces=(0.0,), push_time=0.2, recovery=0.6, repetitions=2,
                    init_noise=(0.0, 0.0))
    rep = run_push_sweep(stand, spec, ENV, MODEL)
    for row in rep.rows:
        assert row["status"] == "ok" and row["max_force"] == 0.0 and row["impulse"] == 0.0
    assert all(t["survived"] for t in rep.trials)


def test_push_ladder_stops_at_first_failure():
    spec = PushSpec(angles=(0.0, 90.0), forces=(0.0, 5.0, 10.0), push_time=0.2, recovery=1.0, repetitions=1,
                    init_noise=(0.0, 0.0))
    rep = run_push_sweep(stand, spec, ENV, MODEL)
    row = rep.rows[0]
    assert row["max_force"] == 0.0 and row["first_failure_force"] == 5.0 and row["levels"] == 2
    assert rep.rows[1]["status"] == "not-sagittal"
    # reported impulse comes from the logged profile only
    for res, t in zip(rep.results, rep.trials):
        if t["survived"]:
            log = res.log()
            assert t["impulse"] == float(np.linalg.norm(push_impulse(log.push_force, log.dt)))


# ---------------------------------------------------------------- slip
def test_null_slip_matches_baseline():
    spec = SlipSpec(command=0.0, event_time=0.4, mu_low=1.0, mu_nominal=1.0, slip_duration=0.3, observe=1.0,
                    seeds=3, init_noise=(0.02, 0.05))
    rep = run_slip_test(stand, spec, ENV, MODEL)
    assert rep.summary["survival_rate"] == rep.summary["baseline_rate"]
    n = spec.seeds
    for ev, base in zip(rep.results[:n], rep.results[n:]):
        strip = lambda recs: [{k: v for k, v in r.items() if k != "event"} for r in recs]  # noqa: E731
        assert strip(ev.records) == strip(base.records)


def test_slip_event_logged_verbatim():
    spec = SlipSpec(command=0.0, event_time=0.4, mu_low=0.05, mu_nominal=1.0, slip_duration=0.3, observe=0.6,
                    seeds=1, init_noise=(0.0, 0.0))
    rep = run_slip_test(stand, spec, ENV, MODEL)
    recs = rep.results[0].records
    events = [(r["step"], r["event"]) for r in recs if "event" in r]
    assert events[0] == (21, {"type": "slip", "t_start": 0.4, "t_end": pytest.approx(0.7), "mu_low": 0.05,
                              "mu_nominal": 1.0})
    assert events[1][0] == 36 and events[1][1]["type"] == "slip_end"
    mu = [r["mu"] for r in recs]
    assert mu[:20] == [1.0] * 20 and mu[20:35] == [0.05] * 15 and set(mu[35:]) == {1.0}


# ---------------------------------------------------------------- jumps
def test_standing_still_has_no_jumps():
    stats, res = run_jump_eval(stand, JumpSpec(duration=1.5), ENV, MODEL)
    assert stats.jumps == 0 and stats.consecutive == 0 and not res.fell


def test_count_jumps_synthetic():
    dt = 0.02
    s = "22" + ("...22" * 12) + "2222222" + ("....2" * 3) + ".." + "2" * 40 + ".."
    contact = np.array([[1.0, 1.0] if ch == "2" else [0.0, 0.0] for ch in s])
    st = count_jumps(contact, dt, min_flight=0.05, max_stance=0.1)
    assert st.jumps == 15
    assert st.consecutive == 12
    assert st.duration == pytest.approx((12 * 5 - 2) * dt)
    # a two-sample flight (40 ms) is too short, one foot down is not flight
    assert count_jumps(np.array([[1, 1], [0, 0], [0, 0], [1, 1]]), dt).jumps == 0
    assert count_jumps(np.array([[1, 1], [1, 0], [1, 0], [1, 0], [1, 1]]), dt).jumps == 0


def scripted_hops(period=15, pulse=2, force=1.5, cycles=6):
    """Lift the torso with vertical force pulses; returns the per-step contact log."""
    from bipedlab.env import BipedEnv

    cfg = dataclasses.replace(ENV, command_resample=0.0, constraints=ConstraintConfig(gait="none"))
    env = BipedEnv(cfg, MODEL, num_envs=1, seed=0, train=False)
    mg = MODEL.mass * MODEL.gravity
    contact = [[1.0, 1.0]]  # standing before the first pulse
    for _ in range(cycles):
        for k in range(period):
            f = np.zeros((1, 2, 2))
            if k < pulse:
                f[0, :, 1] = force * mg
            r = env.step(np.zeros((1, 4)), ext_force=f)
            contact.append(env.sim.in_contact[0].tolist())
            if r.terminated[0]:
                return np.array(contact)
    return np.array(contact)


def test_scripted_hops_match_hand_count():
    contact = scripted_hops()
    text = "".join("." if c.sum() == 0 else "2" for c in contact)
    # independent count: airborne runs of >= 3 samples (60 ms at 50 Hz) with ground on both sides
    hand = len([m for m in re.finditer(r"(?<=2)\.{3,}(?=2)", text)])
    st = count_jumps(contact, ENV.policy_dt, min_flight=0.05, max_stance=0.5)
    assert hand == 3
    assert st.jumps == hand
    assert st.consecutive == hand


# ---------------------------------------------------------------- CLI
TINY = """seed = 1
robot = "{robot}"
[train]
num_envs = 8
horizon = 8
total_steps = 128
hidden = [16]
[experiment.velocity]
v_min = -0.1
v_max = 0.1
repetitions = 2
duration = 1.0
window = 0.3
init_noise = [0.0, 0.0]
[experiment.play]
duration = 1.0
[experiment.jump]
duration = 1.0
"""


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "tiny.toml"
    cfg.write_text(TINY.format(robot=ROOT / "configs" / "robot.toml"))
    assert main(["train", "--config", str(cfg), "--out", str(d / "train")]) == 0
    return d, cfg


def test_cli_usage_errors(capsys):
    assert main(["fly"]) == 2
    assert main(["play", "--bogus"]) == 2
    assert "usage" in capsys.readouterr().err


def test_play_missing_checkpoint(tmp_path, capsys):
    assert main(["play", "--out", str(tmp_path)]) == 1
    assert "--checkpoint" in capsys.readouterr().err
    assert main(["play", "--checkpoint", str(tmp_path / "nope.bplc"), "--out", str(tmp_path)]) == 1
    assert "not found" in capsys.readouterr().err


def test_train_twice_identical_stats(tiny):
    d, cfg = tiny
    assert main(["train", "--config", str(cfg), "--out", str(d / "again")]) == 0
    assert (d / "train" / "stats.csv").read_bytes() == (d / "again" / "stats.csv").read_bytes()
    man = json.loads((d / "train" / "manifest.json").read_text())
    assert man["seed"] == 1 and man["config"]["train"]["seed"] == 1
    assert man["revision"] and man["checkpoint"]["sha256"]


def test_seed_flag_changes_training(tiny, tmp_path):
    d, cfg = tiny
    assert main(["train", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "stats.csv").read_bytes() != (d / "train" / "stats.csv").read_bytes()


def test_manifest_rerun_reproduces_summary(tiny, tmp_path):
    d, cfg = tiny
    ck = str(d / "train" / "checkpoint.bplc")
    assert main(["sweep-velocity", "--config", str(cfg), "--checkpoint", ck, "--out", str(tmp_path / "a")]) == 0
    man = tmp_path / "a" / "manifest.json"
    assert main(["sweep-velocity", "--config", str(man), "--checkpoint", ck, "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "summary.csv").read_bytes() == (tmp_path / "b" / "summary.csv").read_bytes()
    assert (tmp_path / "a" / "trials.csv").read_bytes() == (tmp_path / "b" / "trials.csv").read_bytes()
    assert len(list((tmp_path / "a" / "trials").glob("*.jsonl"))) == 6


def test_play_writes_telemetry(tiny, tmp_path):
    d, cfg = tiny
    ck = str(d / "train" / "checkpoint.bplc")
    assert main(["play", "--config", str(cfg), "--checkpoint", ck, "--command", "0.2", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "telemetry.jsonl").read_text().splitlines()
    rec = json.loads(lines[0])
    assert rec["command"] == [0.2, 0.0] and "costs" in rec and "dyn" in rec
    assert (tmp_path / "summary.csv").exists() and (tmp_path / "manifest.json").exists()


def test_jump_eval_refuses_walking_checkpoint(tiny, tmp_path, capsys):
    d, _ = tiny
    ck = str(d / "train" / "checkpoint.bplc")
    jump_cfg = tmp_path / "jump.toml"
    jump_cfg.write_text(TINY.format(robot=ROOT / "configs" / "robot.toml")
                        + '[env.constraints]\ngait = "jumping"\n')
    assert main(["jump-eval", "--config", str(jump_cfg), "--checkpoint", ck, "--out", str(tmp_path / "j")]) == 1
    assert "--force" in capsys.readouterr().err
    assert main(["jump-eval", "--config", str(jump_cfg), "--checkpoint", ck, "--force",
                 "--out", str(tmp_path / "j")]) == 0
    assert (tmp_path / "j" / "summary.csv").read_text().startswith("jumps,consecutive,duration")


def test_checkpoint_dimension_mismatch_exit_code(tmp_path, capsys):
    ck = save_checkpoint(tmp_path / "c.bplc", init_policy(11, 4), {})
    assert main(["play", "--checkpoint", str(ck), "--out", str(tmp_path), "--force"]) == 1
    assert "observations" in capsys.readouterr().err


def test_metrics_golden(tmp_path, capsys):
    out = tmp_path / "m"
    assert main(["metrics", "--log", str(DATA / "golden_log.jsonl"), "--out", str(out)]) == 0
    golden = (DATA / "golden_summary.csv").read_bytes()
    assert (out / "summary.csv").read_bytes() == golden
    assert capsys.readouterr().out.encode() == golden
    man = json.loads((out / "manifest.json").read_text())
    assert man["log"]["sha256"]


def test_metrics_missing_log(tmp_path):
    assert main(["metrics", "--log", str(tmp_path / "none.jsonl"), "--out", str(tmp_path)]) == 1
    assert main(["metrics", "--out", str(tmp_path)]) == 1


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("BIPEDLAB_OUT", str(tmp_path))
    assert main(["metrics", "--log", str(DATA / "golden_log.jsonl")]) == 0
    assert (tmp_path / "metrics" / "summary.csv").exists()
