"""Multi-seed regret experiments, aggregation and lemma checks."""

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .agents import AgentConfig, diagnostics, episode_bound, regret, run_agent, z_bound
from .envs import EnvSpec, make_env, parse_env_spec
from .mdp import decompose, optimal_gain

AGENT_KEYS = {"delta": float, "variant": str, "shrink_r": float, "shrink_p": float,
              "eps_scale": float, "max_iter": int}
GEOM_GRID = np.geomspace(1e-6, 0.1, 10001)


@dataclass
class ExperimentConfig:
    """Experiment recipe, usually parsed from a flat ``key = value`` file.

    Recognized keys: ``env`` (spec string such as ``three_state:delta=0``),
    ``agents`` (comma list of ``ucrl``, ``tucrl``, ``tucrl_zeta``), ``horizon``,
    ``n_seeds``, ``base_seed``, ``out``, ``checkpoints``, ``save_logs`` and the
    agent settings ``delta``, ``variant``, ``shrink_r``, ``shrink_p``,
    ``eps_scale``, ``max_iter``.  An agent setting prefixed by an agent name
    (``ucrl.shrink_p = 0.1``) applies to that agent only.
    """

    env: EnvSpec
    agents: list
    horizon: int = 100000
    n_seeds: int = 20
    base_seed: int = 0
    out_dir: str = "results"
    n_checkpoints: int = 200
    save_logs: bool = False

    def __post_init__(self):
        if self.horizon < 1 or self.n_seeds < 1:
            raise ValueError("horizon and n_seeds must be at least 1")
        if not self.agents:
            raise ValueError("at least one agent is required")
        labels = [a.label for a in self.agents]
        if len(set(labels)) != len(labels):
            raise ValueError(f"agent labels must be distinct, got {labels}")

    def checkpoints(self):
        """Geometrically spaced steps in ``[1, horizon]`` (always ending at ``horizon``)."""
        pts = np.unique(np.round(np.geomspace(1, self.horizon, self.n_checkpoints)).astype(int))
        return pts


def _agent_from_name(name, settings):
    name = name.strip()
    if name == "ucrl":
        return AgentConfig(algorithm="ucrl", **settings)
    if name == "tucrl":
        return AgentConfig(algorithm="tucrl", **settings)
    if name == "tucrl_zeta":
        return AgentConfig(algorithm="tucrl", **{**settings, "variant": "zeta_relaxed"})
    raise ValueError(f"unknown agent {name!r}")


def parse_config(text):
    """Parse the key-value experiment format into an :class:`ExperimentConfig`."""
    values = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ValueError(f"line {n}: expected 'key = value'")
        values[key.strip()] = value.strip()
    if "env" not in values:
        raise ValueError("config needs an 'env' entry")

    def settings(prefix=""):
        out = {}
        for key, conv in AGENT_KEYS.items():
            if prefix + key in values:
                out[key] = conv(values[prefix + key])
        return out

    common = settings()
    agents = []
    for name in values.get("agents", "ucrl,tucrl").split(","):
        name = name.strip()
        agents.append(_agent_from_name(name, {**common, **settings(name + ".")}))
    known = {"env", "agents", "horizon", "n_seeds", "base_seed", "out", "checkpoints",
             "save_logs", *AGENT_KEYS}
    for key in values:
        base = key.split(".", 1)[-1]
        if key not in known and base not in AGENT_KEYS:
            raise ValueError(f"unknown config key {key!r}")
    return ExperimentConfig(
        env=parse_env_spec(values["env"]), agents=agents,
        horizon=int(float(values.get("horizon", 100000))),
        n_seeds=int(values.get("n_seeds", 20)), base_seed=int(values.get("base_seed", 0)),
        out_dir=values.get("out", "results"),
        n_checkpoints=int(values.get("checkpoints", 200)),
        save_logs=values.get("save_logs", "false").lower() in ("1", "true", "yes"))


def load_config(path):
    return parse_config(Path(path).read_text())


# ---------------------------------------------------------------------------
# lemma checks


@dataclass
class Check:
    name: str
    run: str
    seed: int
    passed: bool
    detail: str

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        where = f" run={self.run} seed={self.seed}" if self.run else ""
        return f"{status} {self.name}{where} {self.detail}"


@dataclass
class LemmaReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    @property
    def failures(self):
        return [c for c in self.checks if not c.passed]

    def text(self):
        lines = [c.line() for c in self.checks]
        lines.append(f"{'ALL PASS' if self.passed else 'VIOLATIONS'}: "
                     f"{len(self.checks) - len(self.failures)}/{len(self.checks)} checks passed")
        return "\n".join(lines) + "\n"


def geom_bound_check(grid=GEOM_GRID):
    """Minimum of ``(1 - x)^(1/x)`` over the grid, compared with 1/3."""
    vals = (1.0 - grid) ** (1.0 / grid)
    i = int(np.argmin(vals))
    low = float(vals[i])
    return Check("geom_bound", "", -1, low >= 1.0 / 3.0,
                 f"min={low!r} at x={float(grid[i])!r} (needs >= 1/3)")


def replay_counts(states, actions, episode, n_states, n_actions):
    """Recompute ``N_k``, ``nu_k`` per episode and ``N^±`` per step from a trace.

    Returns ``(npm, worst)`` where ``worst`` lists ``(k, s, a, nu, N+)`` for the
    pair with the largest ``nu / N+`` in each episode.
    """
    A = n_actions
    pair = np.asarray(states) * A + np.asarray(actions)
    episode = np.asarray(episode)
    N = np.zeros(n_states * A, dtype=np.int64)
    npm = np.empty(pair.size, dtype=np.int64)
    worst = []
    bounds = np.flatnonzero(np.diff(episode)) + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [pair.size]])
    for lo, hi in zip(starts, ends):
        chunk = pair[lo:hi]
        npm[lo:hi] = np.maximum(1, N[chunk] - 1)
        nu = np.bincount(chunk, minlength=N.size)
        n_plus = np.maximum(1, N)
        ratio = nu / n_plus
        j = int(np.argmax(ratio))
        worst.append((int(episode[lo]), j // A, j % A, int(nu[j]), int(n_plus[j])))
        N += nu
    return npm, worst


def verify_trace(states, actions, episode, n_states, n_actions, n_sc, label="", seed=-1):
    """Z_T bound, episode-count bound and stopping inequality for one trace."""
    T = len(states)
    npm, worst = replay_counts(states, actions, episode, n_states, n_actions)
    t = np.arange(1, T + 1)
    z_t = int(np.sum(npm <= np.sqrt(t / (n_states * n_actions))))
    zb = z_bound(n_sc, n_actions, T)
    m = len(worst)
    mb = episode_bound(n_sc, n_actions, T)
    bad = [w for w in worst if w[3] > w[4]]
    checks = [
        Check("z_bound", label, seed, z_t <= zb, f"Z_T={z_t} bound={zb:.6g}"),
        Check("episode_bound", label, seed, m <= mb, f"m={m} bound={mb:.6g}"),
    ]
    if bad:
        k, s, a, nu, n_plus = bad[0]
        detail = (f"{len(bad)} episode(s) with nu > N+; first: episode={k} s={s} a={a} "
                  f"nu={nu} N+={n_plus}")
    else:
        top = max(worst, key=lambda w: w[3] / w[4])
        detail = f"max nu/N+={top[3] / top[4]:.6g}"
    checks.append(Check("stopping_inequality", label, seed, not bad, detail))
    return checks


def verify_lemmas(runs, n_sc=None, d_c=None):
    """Lemma report for in-memory run logs (plus the numeric geometric check).

    With ``d_c`` the optimism and value-span properties are checked as well.
    """
    report = LemmaReport()
    for run in runs:
        sc = run.n_sc_true if n_sc is None else n_sc
        report.checks += verify_trace(run.states, run.actions, run.episode, run.n_states,
                                      run.n_actions, sc, run.algorithm, run.seed)
        if d_c is not None:
            report.checks += _property_checks(run, d_c)
    report.checks.append(geom_bound_check())
    return report


def _property_checks(run, d_c):
    diag = diagnostics(run, d_c)
    return [
        Check("optimism", run.algorithm, run.seed, diag.optimism_violations == 0,
              f"violations={diag.optimism_violations} "
              f"explored={int(diag.sufficiently_explored.sum())} in_set={diag.in_set_episodes}"),
        Check("value_span", run.algorithm, run.seed, diag.span_violations == 0,
              f"violations={diag.span_violations} D^C={d_c!r}"),
    ]


# ---------------------------------------------------------------------------
# experiments


@dataclass
class RunSummary:
    label: str
    seed: int
    regret_at: np.ndarray
    final_regret: float
    z_t: int
    z_bound: float
    m: int
    m_bound: float
    optimism_violations: int
    span_violations: int
    in_set_episodes: int
    checks: list


@dataclass
class AggregateResult:
    """Per-agent regret statistics over seeds."""

    label: str
    checkpoints: np.ndarray
    mean: np.ndarray
    half_width: np.ndarray
    final_regret: np.ndarray
    max_z: int
    max_m: int
    violations: int

    @property
    def ci_lo(self):
        return self.mean - self.half_width

    @property
    def ci_hi(self):
        return self.mean + self.half_width


@dataclass
class ExperimentResult:
    aggregates: dict
    report: LemmaReport
    out_dir: Path

    @property
    def passed(self):
        return self.report.passed


def _fmean_std(columns):
    """Exactly rounded mean and sample std per column (order independent)."""
    n = columns.shape[0]
    mean = np.array([math.fsum(col) / n for col in columns.T])
    if n == 1:
        return mean, np.zeros_like(mean)
    var = np.array([math.fsum((col - m) ** 2) / (n - 1) for col, m in zip(columns.T, mean)])
    return mean, np.sqrt(var)


def aggregate(label, checkpoints, summaries):
    """Mean regret and 95% half-width ``1.96 * stderr`` at each checkpoint."""
    summaries = sorted(summaries, key=lambda r: r.seed)
    curves = np.array([r.regret_at for r in summaries])
    mean, std = _fmean_std(curves)
    half = 1.96 * std / math.sqrt(len(summaries))
    return AggregateResult(label=label, checkpoints=checkpoints, mean=mean, half_width=half,
                           final_regret=np.array([r.final_regret for r in summaries]),
                           max_z=max(r.z_t for r in summaries),
                           max_m=max(r.m for r in summaries),
                           violations=sum(not c.passed for r in summaries for c in r.checks))


def _run_one(task):
    env_spec, agent, horizon, g_star, n_sc, d_c, checkpoints, log_dir = task
    env = make_env(env_spec)
    run = run_agent(env, agent, horizon, g_star=g_star)
    curve = regret(run)
    diag = diagnostics(run, d_c)
    checks = verify_trace(run.states, run.actions, run.episode, run.n_states, run.n_actions,
                          n_sc, run.algorithm, run.seed) + _property_checks(run, d_c)
    if log_dir is not None:
        stem = Path(log_dir) / f"{run.algorithm}_seed{run.seed}"
        Path(f"{stem}.steps.csv").write_text(run.steps_csv())
        Path(f"{stem}.episodes.csv").write_text(run.episodes_csv())
    return RunSummary(label=run.algorithm, seed=run.seed, regret_at=curve[checkpoints - 1],
                      final_regret=float(curve[-1]), z_t=diag.z_t, z_bound=diag.z_bound,
                      m=diag.m, m_bound=diag.m_bound,
                      optimism_violations=diag.optimism_violations,
                      span_violations=diag.span_violations,
                      in_set_episodes=diag.in_set_episodes, checks=checks)


def environment_facts(env):
    """``(g*, |S^C|, D^C)`` of an environment."""
    dec = decompose(env)
    return optimal_gain(env), len(dec.communicating), float(dec.diameter_c)


def _fmt(x):
    return repr(float(x))


def write_outputs(out_dir, config, aggregates, summaries, report):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for label, agg in aggregates.items():
        rows = ["checkpoint,mean,ci_lo,ci_hi"]
        for c, m, lo, hi in zip(agg.checkpoints, agg.mean, agg.ci_lo, agg.ci_hi):
            rows.append(f"{c},{_fmt(m)},{_fmt(lo)},{_fmt(hi)}")
        (out / f"regret_{label}.csv").write_text("\n".join(rows) + "\n")
        rows = ["seed,final_regret,Z_T,Z_bound,m,m_bound,optimism_violations,"
                "span_violations,in_set_episodes,checks_failed"]
        for r in sorted(summaries[label], key=lambda r: r.seed):
            failed = sum(not c.passed for c in r.checks)
            rows.append(f"{r.seed},{_fmt(r.final_regret)},{r.z_t},{_fmt(r.z_bound)},{r.m},"
                        f"{_fmt(r.m_bound)},{r.optimism_violations},{r.span_violations},"
                        f"{r.in_set_episodes},{failed}")
        (out / f"diagnostics_{label}.csv").write_text("\n".join(rows) + "\n")
    (out / "lemmas.txt").write_text(report.text())


def run_experiment(config, workers=1, out_dir=None):
    """Run every (agent, seed) pair, aggregate and write the CSV artifacts.

    Seeds are ``base_seed + i``.  Results do not depend on ``workers``.
    """
    out = Path(out_dir or config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    env = make_env(config.env)
    g_star, n_sc, d_c = environment_facts(env)
    checkpoints = config.checkpoints()
    log_dir = None
    if config.save_logs:
        log_dir = out / "logs"
        log_dir.mkdir(exist_ok=True)
        meta = {"env": str(config.env), "n_states": env.n_states,
                "n_actions": env.max_actions, "n_sc": n_sc, "horizon": config.horizon,
                "g_star": g_star, "d_c": d_c}
        (log_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    tasks = [(config.env, replace(agent, seed=config.base_seed + i), config.horizon, g_star,
              n_sc, d_c, checkpoints, log_dir)
             for agent in config.agents for i in range(config.n_seeds)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]

    summaries = {a.label: [r for r in results if r.label == a.label] for a in config.agents}
    aggregates = {label: aggregate(label, checkpoints, rs) for label, rs in summaries.items()}
    report = LemmaReport()
    for label in summaries:
        for r in sorted(summaries[label], key=lambda r: r.seed):
            report.checks += r.checks
    report.checks.append(geom_bound_check())
    write_outputs(out, config, aggregates, summaries, report)
    return ExperimentResult(aggregates=aggregates, report=report, out_dir=out)


def verify_logs(log_dir):
    """Recheck the lemma inequalities from saved step logs."""
    log_dir = Path(log_dir)
    meta = json.loads((log_dir / "meta.json").read_text())
    report = LemmaReport()
    for path in sorted(log_dir.glob("*.steps.csv")):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        label, _, seed = path.name[: -len(".steps.csv")].rpartition("_seed")
        t, k, s, a = (data[:, i].astype(np.int64) for i in range(4))
        if not np.array_equal(t, np.arange(1, len(t) + 1)):
            report.checks.append(Check("trace_order", label, int(seed), False,
                                       "step column is not 1..T"))
            continue
        report.checks += verify_trace(s, a, k, meta["n_states"], meta["n_actions"],
                                      meta["n_sc"], label, int(seed))
    if not report.checks:
        raise FileNotFoundError(f"no *.steps.csv logs in {log_dir}")
    report.checks.append(geom_bound_check())
    return report


def default_workers():
    return max(1, (os.cpu_count() or 1))
