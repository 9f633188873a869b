"""Training loops, evaluation checkpoints and run artifacts."""
from __future__ import annotations

import csv
import io
import logging
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .algorithms import (
    AgentLearner,
    RoundRecord,
    run_dvdn_gt_round,
    run_dvdn_round,
    run_iql_round,
    run_vdn_ps_round,
    run_vdn_round,
)
from .config import ExperimentConfig, substream
from .envs import make_env
from .graphs import GraphSampler, complete_graph, ring_graph
from .nn import NetworkSpec, dumps_params
from .qlearning import (
    EpsilonSchedule,
    ReplayBuffer,
    SharedIndexStream,
    TargetUpdate,
    sample_synchronized_batch,
    select_action,
)
from .stats import aggregate_checkpoints, bootstrap_ci, pool_best_neighborhood, rank_compare

log = logging.getLogger(__name__)

METRICS_COLUMNS = ["run_id", "algorithm", "env", "seed", "checkpoint_step", "mean_return", "ci_low", "ci_high"]
ABLATION_GROUPS = {"IQL": "IQL", "JTD": "DVDN", "GT": "GT", "GT+JTD": "DVDN_GT"}


@dataclass
class SeedRun:
    seed: int
    steps: list = field(default_factory=list)
    returns: list = field(default_factory=list)
    learners: list = field(default_factory=list)
    rounds: list = field(default_factory=list)

    @property
    def mean_returns(self) -> np.ndarray:
        return np.array([float(np.mean(r)) for r in self.returns])


class Trainer:
    """One seed of one algorithm on one environment."""

    def __init__(self, cfg: ExperimentConfig, seed: int, pool=None):
        self.cfg = cfg
        self.seed = seed
        self.pool = pool
        self.env = make_env(cfg.env, seed=substream(seed, "env"), gamma=cfg.train.gamma, **cfg.env_params)
        self.eval_env = make_env(cfg.env, seed=substream(seed, "eval", 0), gamma=cfg.train.gamma, **cfg.env_params)
        es = self.env.spec
        self.n = es.n_agents
        if cfg.algorithm in ("VDN_PS", "DVDN_GT", "GT") and not es.homogeneous:
            raise cfgmod.ConfigError("algorithm", f"{cfg.algorithm} requires homogeneous agents")
        self.specs = [NetworkSpec(es.obs_dims[i], cfg.train.hidden_dims, es.n_actions[i]) for i in range(self.n)]
        tu = TargetUpdate(cfg.target.mode, cfg.target.period, cfg.target.rate)

        def make_learner(i):
            return AgentLearner.create(self.specs[i], substream(seed, "init", i), lr=cfg.train.lr,
                                       target_update=tu, standardize_rewards=cfg.train.standardize_rewards)

        if cfg.algorithm == "VDN_PS":
            shared = make_learner(0)
            self.learners = [shared] * self.n
            self.owners = [shared]
        else:
            self.learners = [make_learner(i) for i in range(self.n)]
            self.owners = self.learners
        self.explore_rngs = [substream(seed, "explore", i) for i in range(self.n)]
        self.schedule = EpsilonSchedule(cfg.explore.eps_start, cfg.explore.eps_final, cfg.explore.anneal_steps,
                                        cfg.eval.epsilon)
        replay_seed = [seed, zlib.crc32(b"replay")]
        self.streams = [SharedIndexStream(replay_seed) for _ in range(self.n)]
        self.buffers = [ReplayBuffer(cfg.train.buffer_capacity, es.horizon, es.obs_dims[i]) for i in range(self.n)]
        self.graphs = GraphSampler(self.n, substream(seed, "graph"), cfg.graph.p_extra)
        self.eval_rng = substream(seed, "eval", 1)
        self.eval_graphs = GraphSampler(self.n, substream(seed, "eval", 2), cfg.graph.p_extra)
        self.run = SeedRun(seed, learners=self.learners)
        self.graph = None

    def next_graph(self, sampler=None):
        kind = self.cfg.graph.kind
        if kind == "complete":
            return complete_graph(self.n)
        if kind == "ring":
            return ring_graph(self.n)
        return (sampler or self.graphs).sample()

    def evaluate(self) -> np.ndarray:
        """Episodic returns under the eval epsilon; reads learner parameters only."""
        env, rng = self.eval_env, self.eval_rng
        eps = self.cfg.eval.epsilon
        returns = np.empty(self.cfg.eval.episodes)
        for e in range(self.cfg.eval.episodes):
            # policies act without communication; a graph is still drawn per episode
            self.next_graph(self.eval_graphs)
            obs = env.reset()
            total, done = 0.0, False
            while not done:
                acts = [select_action(s, l.params, o, eps, rng) for s, l, o in zip(self.specs, self.learners, obs)]
                res = env.step(acts)
                total += res.reward
                obs, done = res.obs, res.done
            returns[e] = total
        return returns

    def train_round(self) -> None:
        cfg = self.cfg
        batches = sample_synchronized_batch(self.buffers, self.streams, cfg.train.batch_size)
        if batches is None:
            return
        batches = [b.with_rewards(l.reward_norm.standardize(b.rewards)) for l, b in zip(self.learners, batches)]
        gamma, clip = cfg.train.gamma, cfg.train.grad_clip or None
        algo = cfg.algorithm
        if algo == "IQL":
            rec = run_iql_round(self.learners, batches, gamma, clip, self.pool)
        elif algo == "VDN":
            rec = run_vdn_round(self.learners, batches, gamma, clip, self.pool)
        elif algo == "VDN_PS":
            rec = run_vdn_ps_round(self.owners[0], batches, gamma, clip, self.pool)
        elif algo == "DVDN":
            rec = run_dvdn_round(self.learners, batches, self.graph, gamma, clip, self.pool)
        else:
            rec = run_dvdn_gt_round(self.learners, batches, self.graph, gamma, use_jtd=(algo == "DVDN_GT"),
                                    clip=clip, pool=self.pool)
        if cfg.diagnostics:
            self.run.rounds.append(rec.summary())

    def checkpoint(self, step: int) -> None:
        self.run.steps.append(step)
        self.run.returns.append(self.evaluate())

    def train(self) -> SeedRun:
        cfg = self.cfg
        total, interval = cfg.train.total_steps, cfg.eval.interval
        if total <= 0:
            return self.run
        per_step = cfg.train.train_every == "step"
        obs = self.env.reset()
        self.graph = self.next_graph()
        ep_obs = [[o] for o in obs]
        ep_actions, ep_rewards, ep_dones = [], [], []
        episode_id = 0
        for step in range(total):
            if step % interval == 0:
                self.checkpoint(step)
            eps = self.schedule.value(step)
            acts = [select_action(s, l.params, o, eps, r)
                    for s, l, o, r in zip(self.specs, self.learners, obs, self.explore_rngs)]
            res = self.env.step(acts)
            for l in self.owners:
                l.reward_norm.update(res.reward)
            ep_actions.append(acts)
            ep_rewards.append(res.reward)
            ep_dones.append(res.done)
            for i, o in enumerate(res.obs):
                ep_obs[i].append(o)
            if res.done:
                joint = np.array(ep_actions)
                for i, buf in enumerate(self.buffers):
                    buf.add_episode(episode_id, np.array(ep_obs[i]), joint[:, i], ep_rewards, ep_dones)
                episode_id += 1
                if not per_step:
                    self.train_round()
                obs = self.env.reset()
                self.graph = self.next_graph()
                ep_obs = [[o] for o in obs]
                ep_actions, ep_rewards, ep_dones = [], [], []
            else:
                obs = res.obs
            if per_step:
                self.train_round()
        if total % interval == 0:
            self.checkpoint(total)
        return self.run


@dataclass
class RunArtifact:
    run_id: str
    config: ExperimentConfig
    seed_runs: list
    rows: list
    out_dir: Path | None = None

    def per_seed_matrix(self) -> tuple[np.ndarray, list]:
        if not self.seed_runs or not self.seed_runs[0].steps:
            return np.zeros((len(self.seed_runs), 0)), []
        return np.stack([r.mean_returns for r in self.seed_runs]), list(self.seed_runs[0].steps)

    def records(self):
        mat, steps = self.per_seed_matrix()
        return aggregate_checkpoints(mat, steps, self.config.eval.resamples, substream(0, "aggregate"))


def run_id_for(cfg: ExperimentConfig) -> str:
    return f"{cfg.algorithm.lower()}_{cfg.env}"


def metrics_rows(cfg: ExperimentConfig, run_id: str, seed_run: SeedRun) -> list[dict]:
    rng = substream(seed_run.seed, "ci")
    rows = []
    for step, rets in zip(seed_run.steps, seed_run.returns):
        m = float(np.mean(rets))
        lo, hi = bootstrap_ci(rets, resamples=cfg.eval.resamples, rng=rng) if len(rets) > 1 else (m, m)
        rows.append({"run_id": run_id, "algorithm": cfg.algorithm, "env": cfg.env, "seed": seed_run.seed,
                     "checkpoint_step": step, "mean_return": m, "ci_low": min(lo, m), "ci_high": max(hi, m)})
    return rows


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def write_metrics_csv(path, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in METRICS_COLUMNS])
    Path(path).write_text(buf.getvalue())


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["seed"] = int(r["seed"])
        r["checkpoint_step"] = int(r["checkpoint_step"])
        for k in ("mean_return", "ci_low", "ci_high"):
            r[k] = float(r[k])
    return rows


def rows_to_matrix(rows) -> tuple[np.ndarray, list, list]:
    """(seeds x checkpoints) mean returns, the checkpoint steps and the seeds."""
    seeds = sorted({r["seed"] for r in rows})
    steps = sorted({r["checkpoint_step"] for r in rows})
    mat = np.full((len(seeds), len(steps)), np.nan)
    for r in rows:
        mat[seeds.index(r["seed"]), steps.index(r["checkpoint_step"])] = r["mean_return"]
    return mat, steps, seeds


def write_diagnostics_csv(path, rounds) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["round", "agent", "grad_norm", "tracker_norm", "td_norm", "net_td_norm", "disagreement"])
    for rec in rounds:
        for i, g in enumerate(rec.grad_norms):
            pick = lambda xs: _fmt(xs[i]) if i < len(xs) else ""
            w.writerow([rec.k, i, _fmt(g), pick(rec.tracker_norms), pick(rec.td_norms), pick(rec.net_td_norms),
                        _fmt(rec.disagreement)])
    Path(path).write_text(buf.getvalue())


def train(cfg: ExperimentConfig, out_dir=None, threads: int = 1) -> RunArtifact:
    """Train every seed of ``cfg``; writes config, metrics and checkpoints when ``out_dir`` is set."""
    cfg.validate()
    run_id = run_id_for(cfg)
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        seed_runs = []
        for seed in cfg.seeds:
            log.info("training %s seed %d", run_id, seed)
            seed_runs.append(Trainer(cfg, seed, pool).train())
    finally:
        if pool is not None:
            pool.shutdown()
    rows = [row for sr in seed_runs for row in metrics_rows(cfg, run_id, sr)]
    art = RunArtifact(run_id, cfg, seed_runs, rows)
    if out_dir is not None:
        save_artifact(art, out_dir)
    return art


def save_artifact(art: RunArtifact, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(cfgmod.dumps(art.config))
    write_metrics_csv(out / "metrics.csv", art.rows)
    ckpt = out / "checkpoints"
    ckpt.mkdir(exist_ok=True)
    for sr in art.seed_runs:
        for i, l in enumerate(sr.learners):
            (ckpt / f"seed{sr.seed}_agent{i}.pvec").write_bytes(dumps_params(l.spec, l.params))
        if sr.rounds:
            write_diagnostics_csv(out / f"diagnostics_seed{sr.seed}.csv", sr.rounds)
    art.out_dir = out
    return out


def best_checkpoint_samples(rows) -> tuple[int, np.ndarray]:
    """Per-seed returns at the checkpoint with the highest seed-averaged return."""
    mat, steps, _ = rows_to_matrix(rows)
    best = int(np.argmax(mat.mean(axis=0)))
    return steps[best], mat[:, best]


def compare_runs(rows_a, rows_b, resamples: int = 20_000, seed: int = 0) -> str:
    _, a = best_checkpoint_samples(rows_a)
    _, b = best_checkpoint_samples(rows_b)
    return rank_compare(a, b, resamples=resamples, rng=substream(seed, "compare"))


@dataclass
class AblationResult:
    group: str
    algorithm: str
    best_step: int
    n_pooled: int
    mean: float
    ci_low: float
    ci_high: float
    flagged: bool
    vs_iql: str


def run_ablation(cfg: ExperimentConfig, groups=tuple(ABLATION_GROUPS), out_dir=None,
                 threads: int = 1) -> list[AblationResult]:
    """Train each ablation group and pool its best checkpoint with two neighbors on each side."""
    pooled = {}
    for g in groups:
        if g not in ABLATION_GROUPS:
            raise cfgmod.ConfigError("groups", f"unknown ablation group {g!r}")
        gcfg = replace(cfg, algorithm=ABLATION_GROUPS[g])
        sub = None if out_dir is None else Path(out_dir) / g.replace("+", "_")
        art = train(gcfg, sub, threads)
        mat, steps = art.per_seed_matrix()
        if mat.shape[1] < 5:
            log.warning("group %s has %d checkpoints; neighborhood pooling is narrower", g, mat.shape[1])
        pg = pool_best_neighborhood(mat, radius=2)
        pooled[g] = (art, pg, steps)
    results = []
    rng = substream(0, "ablation")
    for g, (art, pg, steps) in pooled.items():
        s = pg.samples
        lo, hi = bootstrap_ci(s, resamples=cfg.eval.resamples, rng=rng) if len(s) > 1 else (s.mean(), s.mean())
        vs = rank_compare(s, pooled["IQL"][1].samples, resamples=cfg.eval.resamples, rng=rng) \
            if "IQL" in pooled else ""
        results.append(AblationResult(g, ABLATION_GROUPS[g], steps[pg.best_index], len(s), float(s.mean()),
                                      float(lo), float(hi), pg.flagged, vs))
    if out_dir is not None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["group", "algorithm", "best_step", "n_pooled", "mean", "ci_low", "ci_high", "flagged", "vs_iql"]
        w.writerow(cols)
        for r in results:
            w.writerow([_fmt(getattr(r, c)) for c in cols])
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "ablation.csv").write_text(buf.getvalue())
    return results


def export_plots(metrics_paths, out_dir, resamples: int = 20_000) -> list[Path]:
    """Seed-aggregated long-format CSV, one file per environment."""
    by_env = {}
    for p in metrics_paths:
        for r in read_metrics_csv(p):
            by_env.setdefault(r["env"], {}).setdefault(r["algorithm"], []).append(r)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for env, algos in sorted(by_env.items()):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["figure", "algorithm", "checkpoint_step", "mean_return", "ci_low", "ci_high", "n_seeds"])
        for algo, rows in sorted(algos.items()):
            mat, steps, seeds = rows_to_matrix(rows)
            for rec in aggregate_checkpoints(mat, steps, resamples, substream(0, "plots")):
                w.writerow([env, algo, rec.step, _fmt(rec.mean), _fmt(rec.ci_low), _fmt(rec.ci_high), len(seeds)])
        path = out / f"{env}.csv"
        path.write_text(buf.getvalue())
        written.append(path)
    return written


def output_root() -> Path:
    return Path(os.environ.get("DVDN_OUTPUT_ROOT", "runs"))
