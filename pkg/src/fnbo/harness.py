"""Experiment orchestration: configuration, the BO loop, traces and summaries.

One trial runs the cost-budgeted loop of the selected policy on one problem:
fit per-node surrogates on a uniform initial design (fully evaluated, not
charged against the budget), then repeatedly choose a node evaluation (or a
full-network evaluation for the baseline policies), query the ground truth,
refit the touched surrogates and log a trace record. Records carry the
recommendation (posterior-mean maximizer) computed from the data available
after the recorded evaluation, which is what the progress curves plot.

Trace CSVs are a pure function of (config, seed) except for the acquisition
wall-time column; set timing="off" to zero it and make files byte-identical
across repeats.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import acquisition as acq
from . import gp
from .discrete import DiscreteSetConfig, build_set
from .errors import ParseError
from .netposterior import NetworkPosterior, fit_node
from .problems import get_problem

ALGOS = ("fast-pkgfn", "pkgfn", "eifn", "ei", "tsfn", "random")
_FULL_EVAL_ALGOS = ("eifn", "ei", "tsfn", "random")


@dataclass
class MCConfig:
    nu_samples: int = 64
    eifn_samples: int = 64
    fantasies: int = 16


@dataclass
class OptimizerConfig:
    restarts: int = 10
    max_evals: int = 200
    screen: int = 256
    pkgfn_restarts: int = 2
    pkgfn_max_evals: int = 25


@dataclass
class ExperimentConfig:
    problem: str = "ackmat"
    algo: str = "fast-pkgfn"
    budget: float = None  # None: use the problem default
    trials: int = 1
    seed: int = 0
    problem_seed: int = 0
    discrete: DiscreteSetConfig = field(default_factory=DiscreteSetConfig)
    mc: MCConfig = field(default_factory=MCConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    out_dir: str = "runs"
    timing: str = "wall"  # "wall" records acquisition seconds, "off" writes 0.0

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ValueError(f"algo must be one of {ALGOS}, got {self.algo!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.timing not in ("wall", "off"):
            raise ValueError("timing must be 'wall' or 'off'")


def config_from_dict(doc):
    """Build an ExperimentConfig from a JSON-style dict; unknown keys fail."""
    doc = dict(doc)
    kwargs = {}
    for section, cls in (("discrete", DiscreteSetConfig), ("mc", MCConfig),
                         ("optimizer", OptimizerConfig)):
        if section in doc:
            sub = doc.pop(section)
            try:
                kwargs[section] = cls(**sub)
            except TypeError as e:
                raise ParseError(f"bad '{section}' section: {e}") from e
    allowed = {"problem", "algo", "budget", "trials", "seed", "problem_seed",
               "out_dir", "timing"}
    unknown = set(doc) - allowed
    if unknown:
        raise ParseError(f"unknown config keys: {sorted(unknown)}")
    kwargs.update(doc)
    try:
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as e:
        raise ParseError(str(e)) from e


def load_config(path):
    try:
        with open(path) as fh:
            return config_from_dict(json.load(fh))
    except OSError as e:
        raise ParseError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ParseError(f"{path} is not valid JSON: {e}") from e


@dataclass
class TraceRecord:
    trial: int
    iteration: int
    cum_cost: float
    node: str  # 1-based node index as text, or "full"
    input: np.ndarray
    observed: float
    nu_star: float = None
    x_star: np.ndarray = None
    ground_truth: float = None
    acq_seconds: float = 0.0


@dataclass
class TrialResult:
    trial: int
    algo: str
    problem: str
    seed: int
    budget: float
    records: list
    initial_nu_star: float
    initial_x_star: np.ndarray
    initial_truth: float
    final_nu_star: float
    final_x_star: np.ndarray
    final_truth: float


def _int_seed(ss):
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def initial_design(problem, seed):
    """2d+1 uniform points, fully evaluated through the true network.

    Returns (X, per-node observation lists). The spend is not charged against
    the optimization budget; progress curves start at cost zero.
    """
    spec = problem.spec
    rng = np.random.default_rng(seed)
    n = 2 * spec.dim + 1
    X = rng.uniform(spec.domain[:, 0], spec.domain[:, 1], size=(n, spec.dim))
    outputs = problem.truth_outputs(X)  # (K, n)
    data = []
    for k in range(spec.K):
        Z = np.stack(
            [outputs[j] for j in spec.parents[k]]
            + [X[:, i] for i in spec.ext_inputs[k]],
            axis=1,
        )
        data.append((Z.copy(), outputs[k].copy()))
    return X, data


class _TrialState:
    """Mutable per-trial data: node datasets, GP states, full-eval history."""

    def __init__(self, problem, X0, data):
        self.problem = problem
        self.spec = problem.spec
        self.node_data = [(Z.copy(), y.copy()) for Z, y in data]
        self.states = [
            fit_node(self.spec, k, Z, y) for k, (Z, y) in enumerate(self.node_data)
        ]
        self.full_X = X0.copy()
        self.full_y = problem.truth_final(X0)

    def add_partial(self, k, z, y):
        Z, t = self.node_data[k]
        self.node_data[k] = (np.vstack([Z, z[None, :]]), np.append(t, y))
        self.refit(k)

    def add_full(self, x, outputs):
        spec = self.spec
        for k in range(spec.K):
            z = np.concatenate(
                [outputs[list(spec.parents[k])], x[list(spec.ext_inputs[k])]]
            )
            Z, t = self.node_data[k]
            self.node_data[k] = (np.vstack([Z, z[None, :]]), np.append(t, outputs[k]))
            self.refit(k)
        self.full_X = np.vstack([self.full_X, x[None, :]])
        self.full_y = np.append(self.full_y, outputs[spec.K - 1])

    def refit(self, k):
        Z, y = self.node_data[k]
        warm = self.states[k].config if self.states[k] is not None else None
        self.states[k] = fit_node(self.spec, k, Z, y, warm_start=warm)


def run_trial(config, trial_seed, trial_index=0, problem=None):
    """Execute one BO trial; returns a TrialResult with the full trace."""
    if problem is None:
        problem = get_problem(config.problem, seed=config.problem_seed)
    spec = problem.spec
    budget = problem.default_budget if config.budget is None else float(config.budget)
    opt = config.optimizer
    root = np.random.SeedSequence(trial_seed)
    init_ss, loop_ss = root.spawn(2)

    X0, data = initial_design(problem, _int_seed(init_ss))
    state = _TrialState(problem, X0, data)

    records = []
    pending = None
    initial = None
    prev_x_star = None
    b = 0.0
    iteration = 0
    timing_on = config.timing == "wall"

    def recommend(post, seed, timed_box=None):
        extra = []
        if prev_x_star is not None:
            extra.append(prev_x_star)
        extra.append(state.full_X[int(np.argmax(state.full_y))])
        t0 = time.perf_counter()
        x_star, nu_star = post.maximize_mean(
            seed,
            restarts=opt.restarts,
            max_evals=opt.max_evals,
            screen=opt.screen,
            extra_starts=np.vstack(extra) if extra else None,
        )
        if timed_box is not None:
            timed_box[0] += time.perf_counter() - t0
        return x_star, nu_star

    def finalize(x_star, nu_star):
        nonlocal pending, initial
        truth = float(problem.truth_final(x_star[None, :])[0])
        if pending is not None:
            pending.nu_star = nu_star
            pending.x_star = x_star.copy()
            pending.ground_truth = truth
            pending = None
        if initial is None:
            initial = (nu_star, x_star.copy(), truth)

    while b < budget:
        it_ss = loop_ss.spawn(1)[0]
        seeds = [_int_seed(s) for s in it_ss.spawn(8)]
        timer = [0.0]
        post = NetworkPosterior(
            spec, state.states, nu_samples=config.mc.nu_samples, base_seed=seeds[0]
        )
        partial = config.algo in ("fast-pkgfn", "pkgfn")
        x_star, nu_star = recommend(post, seeds[1], timed_box=timer if partial else None)
        finalize(x_star, nu_star)
        prev_x_star = x_star

        remaining = budget - b
        if partial:
            t0 = time.perf_counter()
            A = build_set(
                post, config.discrete, x_star, seeds[2], known_points=state.full_X
            )
            fantasy = acq.FantasyBatch(count=config.mc.fantasies, seed=seeds[3])
            if config.algo == "fast-pkgfn":
                x_hat, _ = acq.propose_network_candidate(
                    post, nu_star, seeds[4], restarts=opt.restarts,
                    max_evals=opt.max_evals, screen=opt.screen,
                )
                cands = acq.generate_node_candidates(post, x_hat, seeds[5])
                cands = [c for c in cands if c.cost <= remaining]
                if not cands:
                    break
                acq.score_candidates(post, cands, A, fantasy, nu_star)
                chosen = acq.select_node(cands)
            else:
                cands = [
                    acq.pkgfn_optimize_node(
                        post, k, A, fantasy, nu_star, seed=seeds[4] + 101 * k,
                        restarts=opt.pkgfn_restarts, max_evals=opt.pkgfn_max_evals,
                    )
                    for k in range(spec.K)
                    if spec.costs[k] <= remaining
                ]
                if not cands:
                    break
                chosen = acq.select_node(cands)
            timer[0] += time.perf_counter() - t0
            z = chosen.input.vector
            y_obs = problem.evaluate_node(chosen.node, z)
            state.add_partial(chosen.node, z, y_obs)
            b += chosen.cost
            record = TraceRecord(
                trial=trial_index,
                iteration=iteration + 1,
                cum_cost=b,
                node=str(chosen.node + 1),
                input=z,
                observed=y_obs,
                acq_seconds=timer[0] if timing_on else 0.0,
            )
        else:
            if spec.total_cost() > remaining:
                break
            t0 = time.perf_counter()
            if config.algo == "ei":
                dom = spec.domain
                Xn = (state.full_X - dom[:, 0]) / (dom[:, 1] - dom[:, 0])
                ei_state = gp.fit(Xn, state.full_y)
                x_next = acq.baseline_step(
                    "ei", post, seed=seeds[4], incumbent=float(state.full_y.max()),
                    ei_state=ei_state, restarts=opt.restarts,
                    max_evals=opt.max_evals, screen=opt.screen,
                )
            elif config.algo == "random":
                x_next = acq.baseline_step("random", post, seed=seeds[4])
            else:  # eifn, tsfn
                x_next = acq.baseline_step(
                    config.algo, post, seed=seeds[4],
                    incumbent=float(state.full_y.max()), restarts=opt.restarts,
                    max_evals=opt.max_evals, screen=opt.screen,
                )
            t_acq = time.perf_counter() - t0
            outputs = problem.truth_outputs(x_next[None, :])[:, 0]
            state.add_full(x_next, outputs)
            b += spec.total_cost()
            record = TraceRecord(
                trial=trial_index,
                iteration=iteration + 1,
                cum_cost=b,
                node="full",
                input=x_next,
                observed=float(outputs[spec.K - 1]),
                acq_seconds=t_acq if timing_on else 0.0,
            )
        records.append(record)
        pending = record
        iteration += 1

    post = NetworkPosterior(
        spec, state.states, nu_samples=config.mc.nu_samples,
        base_seed=_int_seed(loop_ss.spawn(1)[0]),
    )
    x_star, nu_star = recommend(post, _int_seed(loop_ss.spawn(1)[0]))
    finalize(x_star, nu_star)

    return TrialResult(
        trial=trial_index,
        algo=config.algo,
        problem=config.problem,
        seed=trial_seed,
        budget=budget,
        records=records,
        initial_nu_star=initial[0],
        initial_x_star=initial[1],
        initial_truth=initial[2],
        final_nu_star=nu_star,
        final_x_star=x_star.copy(),
        final_truth=float(problem.truth_final(x_star[None, :])[0]),
    )


# ---------------------------------------------------------------------------
# Multi-trial driver and persistence
# ---------------------------------------------------------------------------

def _vec(v):
    return ";".join(repr(float(t)) for t in np.atleast_1d(v))


TRACE_HEADER = [
    "trial", "iter", "cum_cost", "node", "input", "observed",
    "nu_star", "x_star", "ground_truth", "acq_seconds",
]


def write_trace(result, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for r in result.records:
            w.writerow(
                [
                    r.trial,
                    r.iteration,
                    repr(float(r.cum_cost)),
                    r.node,
                    _vec(r.input),
                    repr(float(r.observed)),
                    repr(float(r.nu_star)),
                    _vec(r.x_star),
                    repr(float(r.ground_truth)),
                    repr(float(r.acq_seconds)),
                ]
            )


def write_meta(result, path):
    doc = {
        "algo": result.algo,
        "problem": result.problem,
        "trial": result.trial,
        "seed": int(result.seed),
        "budget": float(result.budget),
        "initial": {
            "nu_star": float(result.initial_nu_star),
            "x_star": [float(v) for v in result.initial_x_star],
            "ground_truth": float(result.initial_truth),
        },
        "final": {
            "nu_star": float(result.final_nu_star),
            "x_star": [float(v) for v in result.final_x_star],
            "ground_truth": float(result.final_truth),
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def _trial_task(args):
    cfg_doc, trial_seed, index = args
    config = config_from_dict(cfg_doc)
    result = run_trial(config, trial_seed, trial_index=index)
    return result


def run_experiment(config, out_dir=None, workers=None):
    """Run all trials of one config; write trace/meta files; return results.

    Trials are independent; FNBO_THREADS (or `workers`) caps the process
    count. Results are deterministic per (config, seed) regardless of the
    worker count.
    """
    out_dir = config.out_dir if out_dir is None else out_dir
    os.makedirs(out_dir, exist_ok=True)
    seeds = [_int_seed(s) for s in np.random.SeedSequence(config.seed).spawn(config.trials)]
    if workers is None:
        workers = int(os.environ.get("FNBO_THREADS", "0")) or (os.cpu_count() or 1)
    workers = max(1, min(workers, config.trials))
    cfg_doc = config_to_dict(config)
    tasks = [(cfg_doc, seeds[i], i) for i in range(config.trials)]
    if workers == 1:
        results = [_trial_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial_task, tasks))
    for res in results:
        tag = f"{config.algo}_trial{res.trial:03d}"
        write_trace(res, os.path.join(out_dir, f"trace_{tag}.csv"))
        write_meta(res, os.path.join(out_dir, f"meta_{tag}.json"))
    return results


def config_to_dict(config):
    doc = asdict(config)
    return doc


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------

def read_trace(path):
    records = []
    with open(path) as fh:
        for row in csv.DictReader(fh):
            records.append(
                TraceRecord(
                    trial=int(row["trial"]),
                    iteration=int(row["iter"]),
                    cum_cost=float(row["cum_cost"]),
                    node=row["node"],
                    input=np.array([float(v) for v in row["input"].split(";")]),
                    observed=float(row["observed"]),
                    nu_star=float(row["nu_star"]),
                    x_star=np.array([float(v) for v in row["x_star"].split(";")]),
                    ground_truth=float(row["ground_truth"]),
                    acq_seconds=float(row["acq_seconds"]),
                )
            )
    return records


def load_results(in_dir):
    """Rehydrate TrialResults from the trace/meta files in a directory."""
    results = []
    for name in sorted(os.listdir(in_dir)):
        if not (name.startswith("meta_") and name.endswith(".json")):
            continue
        with open(os.path.join(in_dir, name)) as fh:
            meta = json.load(fh)
        trace_path = os.path.join(in_dir, name.replace("meta_", "trace_").replace(".json", ".csv"))
        records = read_trace(trace_path) if os.path.exists(trace_path) else []
        results.append(
            TrialResult(
                trial=meta["trial"],
                algo=meta["algo"],
                problem=meta["problem"],
                seed=meta["seed"],
                budget=meta["budget"],
                records=records,
                initial_nu_star=meta["initial"]["nu_star"],
                initial_x_star=np.array(meta["initial"]["x_star"]),
                initial_truth=meta["initial"]["ground_truth"],
                final_nu_star=meta["final"]["nu_star"],
                final_x_star=np.array(meta["final"]["x_star"]),
                final_truth=meta["final"]["ground_truth"],
            )
        )
    return results


def step_interpolate(costs, values, grid):
    """Previous-value interpolation onto the grid; values[i] holds from
    costs[i] (inclusive) until the next cost."""
    out = np.empty(len(grid))
    costs = np.asarray(costs, dtype=float)
    values = np.asarray(values, dtype=float)
    idx = np.searchsorted(costs, grid, side="right") - 1
    out = values[np.clip(idx, 0, len(values) - 1)]
    out[idx < 0] = values[0]
    return out


def summarize(results, grid_size=101):
    """Progress curves, runtime table and Pareto points per algorithm.

    Returns a dict: algo -> {cost_grid, mean, stderr, runtime_mean,
    runtime_stderr, final_mean, final_stderr, pareto}.
    """
    if not results:
        raise ValueError("need at least one trial result")
    by_algo = {}
    for r in results:
        by_algo.setdefault(r.algo, []).append(r)
    out = {}
    for algo, group in sorted(by_algo.items()):
        budget = max(r.budget for r in group)
        grid = np.linspace(0.0, budget, grid_size)
        curves = []
        acq_times = []
        finals = []
        for r in group:
            costs = [0.0] + [rec.cum_cost for rec in r.records]
            vals = [r.initial_truth] + [rec.ground_truth for rec in r.records]
            curves.append(step_interpolate(costs, vals, grid))
            acq_times.extend(rec.acq_seconds for rec in r.records)
            finals.append(r.final_truth)
        curves = np.asarray(curves)
        n = curves.shape[0]
        mean = curves.mean(axis=0)
        stderr = curves.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
        acq_times = np.asarray(acq_times, dtype=float)
        finals = np.asarray(finals, dtype=float)
        rt_mean = float(acq_times.mean()) if acq_times.size else 0.0
        rt_se = (
            float(acq_times.std(ddof=1) / np.sqrt(acq_times.size))
            if acq_times.size > 1
            else 0.0
        )
        out[algo] = {
            "cost_grid": grid,
            "mean": mean,
            "stderr": stderr,
            "runtime_mean": rt_mean,
            "runtime_stderr": rt_se,
            "final_mean": float(finals.mean()),
            "final_stderr": float(finals.std(ddof=1) / np.sqrt(len(finals)))
            if len(finals) > 1
            else 0.0,
            "pareto": (rt_mean, float(np.median(finals))),
        }
    return out


def write_summary(summary, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    table = {}
    for algo, s in summary.items():
        path = os.path.join(out_dir, f"summary_{algo}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cost_grid", "mean", "stderr"])
            for g, m, e in zip(s["cost_grid"], s["mean"], s["stderr"]):
                w.writerow([repr(float(g)), repr(float(m)), repr(float(e))])
        table[algo] = {
            "runtime_mean_seconds": s["runtime_mean"],
            "runtime_stderr_seconds": s["runtime_stderr"],
            "final_value_mean": s["final_mean"],
            "final_value_stderr": s["final_stderr"],
            "pareto_runtime_vs_final": list(s["pareto"]),
        }
    with open(os.path.join(out_dir, "summary_runtime.json"), "w") as fh:
        json.dump(table, fh, indent=1, sort_keys=True)
