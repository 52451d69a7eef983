"""Box-constrained multistart maximization and low-discrepancy sampling.

Every acquisition optimization in the package funnels through
`multistart_maximize`, which keeps the discipline uniform: scrambled-Sobol
start points, optional batch screening, quasi-Newton steps when a gradient is
available and a bounded Powell search otherwise. Objectives are expected to be
deterministic during one call (sample-average approximation: callers freeze
their Monte Carlo base samples first).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.stats import qmc


@dataclass
class BoxProblem:
    """A pure objective to maximize over a finite box.

    `objective` maps one point (dim,) to a float. `batch_objective`, when
    given, maps (m, dim) to (m,) and enables cheap screening of candidate
    start points. `gradient` switches local search to projected quasi-Newton.
    """

    bounds: np.ndarray
    objective: object
    gradient: object = None
    batch_objective: object = None
    restarts: int = 10
    max_evals: int = 200
    screen: int = 0

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=float).reshape(-1, 2)
        if np.any(~np.isfinite(self.bounds)) or np.any(self.bounds[:, 0] >= self.bounds[:, 1]):
            raise ValueError("bounds must be finite with lower < upper")

    @property
    def dim(self):
        return self.bounds.shape[0]


def sobol_points(dim, count, seed):
    """`count` scrambled-Sobol points in the unit box [0,1]^dim."""
    if count < 1:
        raise ValueError("count must be >= 1")
    sampler = qmc.Sobol(d=dim, scramble=True, seed=seed)
    with warnings.catch_warnings():
        # scipy warns when count is not a power of two; balance is irrelevant
        # for start-point generation.
        warnings.simplefilter("ignore", UserWarning)
        return sampler.random(count)


def scale_to_box(unit_points, bounds):
    """Map unit-box points onto the box described by (dim, 2) bounds."""
    bounds = np.asarray(bounds, dtype=float)
    return bounds[:, 0] + unit_points * (bounds[:, 1] - bounds[:, 0])


def multistart_maximize(problem, seed, extra_starts=None):
    """Maximize `problem.objective` over its box; returns (x_best, f_best).

    Start points are `problem.restarts` scrambled-Sobol draws plus any
    `extra_starts` (clipped into the box). With `problem.screen` > 0 and a
    batch objective, a larger Sobol pool is screened first and the best pool
    points seed the local searches. The returned value dominates the
    objective at every start and screened point.
    """
    lo, hi = problem.bounds[:, 0], problem.bounds[:, 1]
    starts = []
    if extra_starts is not None:
        for x in np.atleast_2d(np.asarray(extra_starts, dtype=float)):
            starts.append(np.clip(x, lo, hi))

    best_x, best_f = None, -np.inf
    n_sobol = max(problem.restarts, 1)
    if problem.screen and problem.batch_objective is not None:
        pool = scale_to_box(sobol_points(problem.dim, problem.screen, seed), problem.bounds)
        vals = np.asarray(problem.batch_objective(pool), dtype=float)
        order = np.argsort(-vals)
        for i in order[:n_sobol]:
            starts.append(pool[i])
        if vals[order[0]] > best_f:
            best_f = float(vals[order[0]])
            best_x = pool[order[0]].copy()
    else:
        pool = scale_to_box(sobol_points(problem.dim, n_sobol, seed), problem.bounds)
        starts.extend(pool)

    box = list(zip(lo, hi))
    if problem.gradient is None and problem.batch_objective is not None and len(starts) > 1:
        # all restarts advance in lockstep, one batched poll per round
        x, f = _compass_maximize_batch(
            problem.batch_objective, np.array(starts), lo, hi, problem.max_evals
        )
        if best_x is None or f > best_f:
            return x, f
        return best_x, best_f
    for x0 in starts:
        f0 = float(problem.objective(x0))
        if f0 > best_f:
            best_f, best_x = f0, np.array(x0, dtype=float)
        res = _local_maximize(problem, x0, box)
        if res is not None and np.isfinite(res[1]) and res[1] > best_f:
            best_x, best_f = res
    return best_x, best_f


def _local_maximize(problem, x0, box):
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    if problem.gradient is not None:
        neg = lambda x: -float(problem.objective(x))
        try:
            res = optimize.minimize(
                neg,
                x0,
                jac=lambda x: -np.asarray(problem.gradient(x), dtype=float),
                method="L-BFGS-B",
                bounds=box,
                options={"maxfun": problem.max_evals},
            )
        except FloatingPointError:
            return None
        x = np.clip(res.x, lo, hi)
        return x, float(problem.objective(x))
    return _compass_maximize(problem.objective, x0, lo, hi, problem.max_evals)


def _compass_maximize_batch(batch_f, X0, lo, hi, max_evals):
    """Full-poll compass search over many start points simultaneously.

    Each search keeps its own step size; every poll round evaluates all 2*dim
    probes of all searches in one batch-objective call, moves each search to
    its best improving probe, and halves the steps of searches that saw no
    improvement. Per-search evaluation budget matches max_evals.
    """
    X = np.clip(np.asarray(X0, dtype=float), lo, hi)
    R, dim = X.shape
    span = hi - lo
    F = np.asarray(batch_f(X), dtype=float)
    steps = np.tile(0.25 * span, (R, 1))
    rounds = max(1, (max_evals - 1) // (2 * dim))
    offsets = np.concatenate([np.eye(dim), -np.eye(dim)])  # (2*dim, dim)
    for _ in range(rounds):
        probes = X[:, None, :] + offsets[None, :, :] * steps[:, None, :]
        np.clip(probes, lo, hi, out=probes)
        vals = np.asarray(batch_f(probes.reshape(R * 2 * dim, dim)), dtype=float)
        vals = vals.reshape(R, 2 * dim)
        best_probe = np.argmax(vals, axis=1)
        best_val = vals[np.arange(R), best_probe]
        improved = best_val > F
        X[improved] = probes[improved, best_probe[improved]]
        F[improved] = best_val[improved]
        steps[~improved] *= 0.5
        if np.all(steps <= 1e-9 * span):
            break
    w = int(np.argmax(F))
    return X[w].copy(), float(F[w])


def _compass_maximize(f, x0, lo, hi, max_evals):
    """Coordinate pattern search with halving steps; strictly local."""
    span = hi - lo
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    fx = float(f(x))
    evals = 1
    step = 0.25 * span
    dim = x.shape[0]
    while evals < max_evals and np.any(step > 1e-9 * span):
        improved = False
        for d in range(dim):
            for sign in (1.0, -1.0):
                if evals >= max_evals:
                    break
                cand = x.copy()
                cand[d] = min(max(x[d] + sign * step[d], lo[d]), hi[d])
                if cand[d] == x[d]:
                    continue
                fc = float(f(cand))
                evals += 1
                if fc > fx:
                    x, fx = cand, fc
                    improved = True
                    break
            if improved:
                break
        if not improved:
            step *= 0.5
    return x, fx
