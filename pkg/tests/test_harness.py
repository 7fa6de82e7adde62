import json

import numpy as np
import pytest

from tucrl import (AgentConfig, ExperimentConfig, from_text, load_config, make_three_state,
                   parse_config, run_agent, run_experiment, to_text, verify_lemmas, verify_logs)
from tucrl.cli import main
from tucrl.envs import make_env, parse_env_spec
from tucrl.harness import RunSummary, aggregate, geom_bound_check

CONFIG = """\
# small three-state experiment
env = three_state:delta=0
agents = ucrl, tucrl
horizon = 3000
n_seeds = 3
base_seed = 5
checkpoints = 20
shrink_r = 0.05
shrink_p = 0.05
ucrl.delta = 0.1
save_logs = true
"""


@pytest.fixture(scope="module")
def experiment(tmp_path_factory):
    out = tmp_path_factory.mktemp("exp")
    result = run_experiment(parse_config(CONFIG), workers=1, out_dir=out)
    return result, out


class TestConfig:
    def test_parse(self):
        cfg = parse_config(CONFIG)
        assert cfg.env == parse_env_spec("three_state:delta=0")
        assert [a.label for a in cfg.agents] == ["ucrl", "tucrl"]
        assert cfg.horizon == 3000 and cfg.n_seeds == 3 and cfg.base_seed == 5
        assert cfg.agents[0].delta == 0.1 and cfg.agents[1].delta == 0.05
        assert cfg.agents[1].shrink_p == 0.05 and cfg.save_logs

    def test_scientific_horizon(self):
        assert parse_config("env = taxi\nhorizon = 2e5\n").horizon == 200000

    def test_zeta_agent(self):
        cfg = parse_config("env = two_state:eps=0\nagents = tucrl_zeta\n")
        assert cfg.agents[0].variant == "zeta_relaxed"

    @pytest.mark.parametrize("text", ["horizon = 10\n", "env = taxi\ncolour = red\n",
                                      "env = taxi\nagents = regal\n", "env = taxi\nbroken line\n",
                                      "env = taxi\nn_seeds = 0\n", "env = taxi\nagents = ucrl,ucrl\n"])
    def test_rejects(self, text):
        with pytest.raises(ValueError):
            parse_config(text)

    def test_checkpoints(self):
        cfg = ExperimentConfig(env=parse_env_spec("taxi"), agents=[AgentConfig()], horizon=10**7)
        pts = cfg.checkpoints()
        assert pts[0] == 1 and pts[-1] == 10**7 and len(pts) <= 200
        assert np.all(np.diff(pts) > 0)

    def test_load(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text(CONFIG)
        assert load_config(path).horizon == 3000


class TestExperiment:
    def test_outputs(self, experiment):
        result, out = experiment
        names = sorted(p.name for p in out.iterdir())
        assert names == ["diagnostics_tucrl.csv", "diagnostics_ucrl.csv", "lemmas.txt", "logs",
                         "regret_tucrl.csv", "regret_ucrl.csv"]
        lines = (out / "regret_ucrl.csv").read_text().splitlines()
        assert lines[0] == "checkpoint,mean,ci_lo,ci_hi"
        assert int(lines[-1].split(",")[0]) == 3000
        assert result.passed
        assert "ALL PASS" in (out / "lemmas.txt").read_text()

    def test_seeds(self, experiment):
        result, out = experiment
        rows = (out / "diagnostics_tucrl.csv").read_text().splitlines()[1:]
        assert [int(r.split(",")[0]) for r in rows] == [5, 6, 7]

    def test_band_width(self, experiment):
        result, _ = experiment
        agg = result.aggregates["tucrl"]
        np.testing.assert_allclose(agg.half_width[-1],
                                   1.96 * agg.final_regret.std(ddof=1) / np.sqrt(3))
        assert agg.mean[-1] == pytest.approx(agg.final_regret.mean())

    def test_single_seed_has_zero_width(self, tmp_path):
        cfg = parse_config("env = two_state:eps=0\nhorizon = 500\nn_seeds = 1\n")
        result = run_experiment(cfg, out_dir=tmp_path)
        for agg in result.aggregates.values():
            assert np.all(agg.half_width == 0) and np.array_equal(agg.ci_lo, agg.ci_hi)

    def test_rerun_is_byte_identical_and_worker_independent(self, experiment, tmp_path):
        _, first = experiment
        run_experiment(parse_config(CONFIG), workers=2, out_dir=tmp_path)
        for name in ("regret_ucrl.csv", "regret_tucrl.csv", "diagnostics_ucrl.csv",
                     "diagnostics_tucrl.csv", "lemmas.txt"):
            assert (first / name).read_bytes() == (tmp_path / name).read_bytes()
        for path in (first / "logs").iterdir():
            assert path.read_bytes() == (tmp_path / "logs" / path.name).read_bytes()

    def test_aggregation_ignores_seed_order(self, rng):
        cps = np.array([1, 10, 100])
        summaries = [RunSummary("x", seed, rng.random(3) * 1e3, 0.0, 0, 0.0, 0, 0.0, 0, 0, 0, [])
                     for seed in range(7)]
        a = aggregate("x", cps, summaries)
        b = aggregate("x", cps, summaries[::-1])
        c = aggregate("x", cps, [summaries[i] for i in rng.permutation(7)])
        for other in (b, c):
            assert np.array_equal(a.mean, other.mean)
            assert np.array_equal(a.half_width, other.half_width)


class TestVerification:
    def test_geom_grid(self):
        check = geom_bound_check()
        assert check.passed
        low = float(check.detail.split()[0].removeprefix("min="))
        assert low == pytest.approx(0.9 ** 10, abs=1e-12) and low >= 1 / 3
        assert check.detail.endswith("at x=0.1 (needs >= 1/3)")

    def test_compliant_runs(self):
        runs = [run_agent(make_three_state(0.0), AgentConfig(seed=s), 2000) for s in range(2)]
        report = verify_lemmas(runs, d_c=1.0)
        assert report.passed
        names = {c.name for c in report.checks}
        assert names == {"z_bound", "episode_bound", "stopping_inequality", "optimism",
                         "value_span", "geom_bound"}

    def test_saved_logs(self, experiment):
        _, out = experiment
        report = verify_logs(out / "logs")
        assert report.passed
        assert sum(c.name == "stopping_inequality" for c in report.checks) == 6

    def test_corrupted_log_is_pinpointed(self, experiment, tmp_path):
        _, out = experiment
        logs = tmp_path / "logs"
        logs.mkdir()
        (logs / "meta.json").write_text((out / "logs" / "meta.json").read_text())
        lines = (out / "logs" / "tucrl_seed6.steps.csv").read_text().splitlines()
        # merge episode 3 into episode 2 until nu exceeds N+ for a pair
        header, rows = lines[0], [r.split(",") for r in lines[1:]]
        for r in rows:
            if int(r[1]) >= 2:
                r[1] = "2"
        (logs / "tucrl_seed6.steps.csv").write_text(
            "\n".join([header] + [",".join(r) for r in rows]) + "\n")
        report = verify_logs(logs)
        assert not report.passed
        bad = [c for c in report.failures if c.name == "stopping_inequality"]
        assert len(bad) == 1 and bad[0].seed == 6 and bad[0].run == "tucrl"
        assert "episode=2" in bad[0].detail

    def test_missing_logs(self, tmp_path):
        (tmp_path / "meta.json").write_text(json.dumps({"n_states": 3, "n_actions": 2, "n_sc": 2}))
        with pytest.raises(FileNotFoundError):
            verify_logs(tmp_path)


class TestCli:
    def test_run_and_verify(self, tmp_path, capsys):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text(CONFIG.replace("n_seeds = 3", "n_seeds = 2"))
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "res")]) == 0
        assert (tmp_path / "res" / "regret_tucrl.csv").exists()
        assert main(["verify", "--logs", str(tmp_path / "res" / "logs")]) == 0
        assert "ALL PASS" in capsys.readouterr().out

    def test_verify_flags_corruption(self, tmp_path):
        logs = tmp_path / "logs"
        logs.mkdir()
        (logs / "meta.json").write_text(json.dumps({"n_states": 2, "n_actions": 1, "n_sc": 2}))
        (logs / "ucrl_seed0.steps.csv").write_text(
            "t,k,s,a,r,s_next\n1,1,0,0,0.0,0\n2,1,0,0,0.0,0\n3,1,0,0,0.0,0\n")
        assert main(["verify", "--logs", str(logs)]) == 1

    def test_env_export(self, tmp_path, capsys):
        assert main(["env", "export", "--spec", "three_state:delta=0.005"]) == 0
        text = capsys.readouterr().out
        assert to_text(from_text(text)) == text
        assert to_text(make_env("three_state:delta=0.005")) == text
        out = tmp_path / "taxi.txt"
        assert main(["env", "export", "--spec", "taxi:misspecified=false", "--out", str(out)]) == 0
        assert from_text(out.read_text()).n_states == 400

    def test_bad_inputs(self, tmp_path, capsys):
        assert main(["env", "export", "--spec", "maze"]) == 2
        assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == 2
        with pytest.raises(SystemExit):
            main([])
