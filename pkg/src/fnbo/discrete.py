"""Construction of the discrete inner-maximization set used by the fast
acquisition: batch-Thompson representative maximizers, local points around
the current recommendation, and the recommendation itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyDiscreteSet
from .network import propagate_functions
from .optim import scale_to_box, sobol_points


@dataclass
class DiscreteSetConfig:
    """Knobs for discrete-set construction.

    M: network realizations scored on the candidate pool.
    N_T / N_L: batch-Thompson and local point counts.
    r: local radius as a fraction of the widest domain side.
    pool_size: Sobol pool size for the greedy subset selection.
    include_*: ablation switches for each of the three point sources.
    """

    M: int = 10
    N_T: int = 10
    N_L: int = 10
    r: float = 0.1
    pool_size: int = 512
    include_maximizer: bool = True
    include_thompson: bool = True
    include_local: bool = True

    def __post_init__(self):
        if self.M < 1 or self.r <= 0:
            raise ValueError("M must be >= 1 and r > 0")
        if self.N_T > self.pool_size:
            raise ValueError("N_T cannot exceed pool_size")


def greedy_subset(values, n_select):
    """Greedy max of the average-of-maxima objective over matrix columns.

    values is (M, P): realization j's output at pool point p. Selects
    n_select column indices maximizing (1/M) sum_j max_{p in S} values[j, p],
    one greedy step at a time, ties broken by the lowest column index.
    """
    values = np.asarray(values, dtype=float)
    M, P = values.shape
    n_select = min(n_select, P)
    best = np.full(M, -np.inf)
    chosen = []
    taken = np.zeros(P, dtype=bool)
    for _ in range(n_select):
        objective = np.maximum(best[:, None], values).mean(axis=0)
        objective[taken] = -np.inf
        p = int(np.argmax(objective))
        chosen.append(p)
        taken[p] = True
        best = np.maximum(best, values[:, p])
    return chosen


def thompson_pool(post, cfg, seed, x_star=None, known_points=None):
    """Candidate pool: Sobol cover of the domain plus the recommendation and
    previously fully-evaluated inputs, deduplicated."""
    spec = post.spec
    pool = scale_to_box(sobol_points(spec.dim, cfg.pool_size, seed), spec.domain)
    extras = []
    if x_star is not None:
        extras.append(np.asarray(x_star, dtype=float).reshape(1, -1))
    if known_points is not None and len(known_points):
        extras.append(np.atleast_2d(np.asarray(known_points, dtype=float)))
    if extras:
        pool = np.vstack([pool] + extras)
    return _dedup(pool, tol=1e-12)


def batch_thompson(post, cfg, seed, x_star=None, known_points=None):
    """N_T pool points that jointly cover the maxima of M sampled realizations.

    Scores every pool point under each realization once, then runs the greedy
    subset selection; far cheaper than optimizing each realization separately.
    """
    ss = np.random.SeedSequence(seed).spawn(cfg.M + 1)
    pool = thompson_pool(
        post, cfg, np.random.default_rng(ss[0]), x_star=x_star, known_points=known_points
    )
    values = np.empty((cfg.M, pool.shape[0]))
    final = post.spec.K - 1
    for j in range(cfg.M):
        funcs = post.sample_realization(ss[j + 1])
        values[j] = propagate_functions(post.spec, funcs, pool)[final]
    idx = greedy_subset(values, cfg.N_T)
    return pool[idx]


def local_points(x_star, domain, cfg, seed):
    """N_L uniform draws from the radius-ball around x_star clipped to the box.

    Rejection sampling from the axis-aligned box-ball intersection bounding
    box keeps the acceptance rate workable in any dimension up to ~10.
    """
    domain = np.asarray(domain, dtype=float)
    x_star = np.asarray(x_star, dtype=float).reshape(-1)
    d = x_star.shape[0]
    if cfg.N_L <= 0:
        return np.zeros((0, d))
    radius = cfg.r * float(np.max(domain[:, 1] - domain[:, 0]))
    lo = np.maximum(domain[:, 0], x_star - radius)
    hi = np.minimum(domain[:, 1], x_star + radius)
    rng = np.random.default_rng(seed)
    out = []
    need = cfg.N_L
    while need > 0:
        draw = rng.uniform(lo, hi, size=(max(4096, 4 * need), d))
        keep = draw[np.linalg.norm(draw - x_star, axis=1) <= radius]
        if keep.shape[0]:
            out.append(keep[:need])
            need -= min(need, keep.shape[0])
    return np.vstack(out)


def build_set(post, cfg, x_star, seed, known_points=None):
    """Assemble the discrete set from the enabled sources; dedup at 1e-9."""
    parts = []
    if cfg.include_maximizer:
        parts.append(np.asarray(x_star, dtype=float).reshape(1, -1))
    if cfg.include_thompson:
        parts.append(
            batch_thompson(post, cfg, seed, x_star=x_star, known_points=known_points)
        )
    if cfg.include_local:
        parts.append(local_points(x_star, post.spec.domain, cfg, seed + 1))
    parts = [p for p in parts if p.shape[0]]
    if not parts:
        raise EmptyDiscreteSet("all discrete-set sources are disabled")
    return _dedup(np.vstack(parts), tol=1e-9)


def _dedup(points, tol):
    n = points.shape[0]
    if n <= 1:
        return points
    kept = np.empty_like(points)
    m = 0
    for i in range(n):
        if m and np.min(np.max(np.abs(points[i] - kept[:m]), axis=1)) <= tol:
            continue
        kept[m] = points[i]
        m += 1
    return kept[:m].copy()
