"""Acquisition functions and selection policies.

Implements the network expected improvement (original incumbent and the
recommendation-mean variant), the cost-normalized one-step knowledge gradient
for a single node evaluated over a discrete inner set, the fast candidate
generation that turns one network-level candidate into node-specific inputs,
and the full-evaluation baseline policies.

Monte Carlo discipline: within one BO iteration all candidates share the same
propagation base and the same fantasy base (common random numbers), so the
K-way node comparison is low-variance and bit-reproducible per seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import gp
from .errors import DomainViolation, EmptyDiscreteSet
from .netposterior import gaussian_base, normalize_node_inputs
from .network import NodeInput, assemble_node_input, propagate_functions
from .optim import BoxProblem, multistart_maximize, scale_to_box, sobol_points


@dataclass
class Candidate:
    """A node index with a proposed input, and (once scored) its value."""

    node: int
    input: NodeInput
    cost: float
    acq_value: float = None
    x_hat: np.ndarray = None  # network candidate this input was derived from
    stderr: float = None


@dataclass
class FantasyBatch:
    """Fixed standard-normal draws used to fantasize one node observation.

    The same base is reused for every candidate within a BO iteration.
    Antithetic pairs make the fantasy average of linear quantities exact.
    """

    count: int = 16
    seed: int = 0
    base: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.base is None:
            self.base = gaussian_base(self.count, 1, self.seed)[:, 0]
        self.base = np.asarray(self.base, dtype=float).reshape(-1)
        self.count = self.base.shape[0]


# ---------------------------------------------------------------------------
# Expected improvement over the network posterior
# ---------------------------------------------------------------------------

def eifn_batch(post, X, incumbent):
    """qMC estimate of E[(y_K(x) - incumbent)^+] for each row of X."""
    samples = post.final_samples(np.atleast_2d(X))
    return np.maximum(samples - incumbent, 0.0).mean(axis=1)


def eifn(post, x, incumbent):
    """Expected improvement of the final node output at a single point."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if not post.spec.in_domain(x):
        raise DomainViolation(f"{x} outside the domain box")
    return float(eifn_batch(post, x[None, :], incumbent)[0])


def eifn_stderr(post, x, incumbent):
    """(value, MC standard error) of the improvement estimate at x."""
    samples = post.final_samples(np.asarray(x, dtype=float).reshape(1, -1))[0]
    imp = np.maximum(samples - incumbent, 0.0)
    return float(imp.mean()), float(imp.std(ddof=1) / math.sqrt(imp.size))


def propose_network_candidate(post, incumbent, seed, restarts=10, max_evals=200,
                              screen=256):
    """Maximize the incumbent-modified improvement over the domain.

    Returns (x_hat, acquisition value). The propagation base is frozen inside
    `post`, so the objective is deterministic during the search.
    """
    problem = BoxProblem(
        bounds=post.spec.domain,
        objective=lambda x: float(eifn_batch(post, x[None, :], incumbent)[0]),
        batch_objective=lambda X: eifn_batch(post, X, incumbent),
        restarts=restarts,
        max_evals=max_evals,
        screen=screen,
    )
    return multistart_maximize(problem, seed=seed)


# ---------------------------------------------------------------------------
# Fast candidate generation
# ---------------------------------------------------------------------------

def generate_node_candidates(post, x_hat, seed, use_posterior_mean=False):
    """Node-specific inputs from one simulated propagation of x_hat.

    A single network realization supplies the intermediate outputs; each node
    input pairs its parents' simulated outputs (clamped into the declared
    parent ranges) with the matching slice of x_hat. `use_posterior_mean`
    replaces the realization by plug-in posterior-mean propagation
    (diagnostic mode).
    """
    spec = post.spec
    x_hat = np.asarray(x_hat, dtype=float).reshape(-1)
    if use_posterior_mean:
        y_hat = np.concatenate(post.propagate_mean(x_hat[None, :]))
    else:
        funcs = post.sample_realization(seed)
        y_hat = propagate_functions(spec, funcs, x_hat[None, :])[:, 0]
    out = []
    for k in range(spec.K):
        if spec.parents[k]:
            rng = spec.parent_ranges[k]
            parent_vals = np.clip(y_hat[list(spec.parents[k])], rng[:, 0], rng[:, 1])
        else:
            parent_vals = np.zeros(0)
        node_input = assemble_node_input(spec, k, parent_vals, x_hat)
        out.append(
            Candidate(
                node=k,
                input=node_input,
                cost=spec.cost(k, node_input.vector),
                x_hat=x_hat,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Discretized knowledge gradient for one node
# ---------------------------------------------------------------------------

def _propagate_with_fantasy(post, X, k, ensemble):
    """Final-node samples (F, N, S) with node k replaced by a fantasy ensemble.

    Nodes that are not k and not downstream of k are propagated once and
    shared across fantasies. Node k's fantasy means come from one matrix
    product against the shared augmented factorization; descendants are
    propagated with stacked per-fantasy rows.
    """
    spec = post.spec
    base = post.base
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N, S, F = X.shape[0], base.shape[0], ensemble.count
    affected = {k} | spec.descendants(k)
    shared = [None] * spec.K
    fan = [None] * spec.K
    for j in range(spec.K):
        if j not in affected:
            Z = post._node_rows(j, X, shared)
            mu, var = gp.posterior_diag(post.nodes[j], normalize_node_inputs(spec, j, Z))
            sd = np.sqrt(var)
            if not spec.parents[j]:
                shared[j] = mu[:, None] + sd[:, None] * base[None, :, j]
            else:
                shared[j] = (mu + sd * np.tile(base[:, j], N)).reshape(N, S)
        elif j == k:
            # Parents of k are never downstream of k, so its rows are shared.
            Z = post._node_rows(k, X, shared)
            means, var = ensemble.posterior_diag(normalize_node_inputs(spec, k, Z))
            sd = np.sqrt(var)
            if not spec.parents[k]:
                fan[k] = (
                    means.T[:, :, None] + (sd[:, None] * base[None, :, k])[None, :, :]
                )
            else:
                noise = (sd * np.tile(base[:, k], N)).reshape(N, S)
                fan[k] = means.T.reshape(F, N, S) + noise[None, :, :]
        else:
            cols = []
            for p in spec.parents[j]:
                if fan[p] is not None:
                    cols.append(fan[p].reshape(F * N * S))
                else:
                    cols.append(np.tile(shared[p].reshape(N * S), F))
            for i in spec.ext_inputs[j]:
                cols.append(np.tile(np.repeat(X[:, i], S), F))
            Z = np.stack(cols, axis=1)
            mu, var = gp.posterior_diag(post.nodes[j], normalize_node_inputs(spec, j, Z))
            y = mu + np.sqrt(var) * np.tile(base[:, j], F * N)
            fan[j] = y.reshape(F, N, S)
    return fan[spec.K - 1]


def pkgfn_value(post, k, z_k, discrete_set, fantasy, nu_star, return_stderr=False):
    """Cost-normalized expected gain in the recommendation value from one
    fantasized observation of node k at z_k, with the inner maximization
    restricted to the discrete set.

    For each fantasy draw the node GP is conditioned on the fantasized pair,
    the final-node posterior mean is evaluated on the discrete set, and the
    best value is recorded; the fantasy-average gain over nu_star is divided
    by the node cost.
    """
    A = np.atleast_2d(np.asarray(discrete_set, dtype=float))
    if A.shape[0] == 0:
        raise EmptyDiscreteSet("discrete inner-maximization set is empty")
    z = z_k.vector if isinstance(z_k, NodeInput) else np.asarray(z_k, dtype=float).reshape(-1)
    mu, var = post.node_posterior_diag(k, z[None, :])
    y_draws = mu[0] + math.sqrt(max(var[0], 0.0)) * fantasy.base
    zn = normalize_node_inputs(post.spec, k, z[None, :])[0]
    ensemble = gp.FantasyEnsemble(post.nodes[k], zn, y_draws)
    samples = _propagate_with_fantasy(post, A, k, ensemble)
    nu_next = samples.mean(axis=2)          # (F, |A|)
    best = nu_next.max(axis=1)              # (F,)
    cost = post.spec.cost(k, z)
    value = (float(best.mean()) - nu_star) / cost
    if not return_stderr:
        return value
    se = float(best.std(ddof=1) / math.sqrt(best.size)) / cost if best.size > 1 else 0.0
    return value, se


def score_candidates(post, candidates, discrete_set, fantasy, nu_star):
    """Fill in acq_value (and stderr) for every candidate; returns them."""
    for cand in candidates:
        val, se = pkgfn_value(
            post, cand.node, cand.input, discrete_set, fantasy, nu_star,
            return_stderr=True,
        )
        cand.acq_value = val
        cand.stderr = se
    return candidates


def select_node(candidates):
    """Highest-value candidate; ties go to lower cost, then lower node index."""
    if not candidates:
        raise ValueError("need at least one candidate")
    return min(candidates, key=lambda c: (-c.acq_value, c.cost, c.node))


def pkgfn_optimize_node(post, k, discrete_set, fantasy, nu_star, seed,
                        restarts=2, max_evals=25):
    """Continuous maximization of the node-k knowledge gradient over Z_k.

    This is the nested search of the original partial-evaluation method; the
    fast path replaces it with a single simulated candidate.
    """
    lo, hi = post.spec.node_bounds(k)

    def objective(z):
        return pkgfn_value(post, k, z, discrete_set, fantasy, nu_star)

    problem = BoxProblem(
        bounds=np.stack([lo, hi], axis=1),
        objective=objective,
        restarts=restarts,
        max_evals=max_evals,
    )
    z_best, val = multistart_maximize(problem, seed=seed)
    n_par = len(post.spec.parents[k])
    cand = Candidate(
        node=k,
        input=NodeInput(z_best[:n_par], z_best[n_par:]),
        cost=post.spec.cost(k, z_best),
        acq_value=val,
    )
    return cand


# ---------------------------------------------------------------------------
# Baseline policies
# ---------------------------------------------------------------------------

def expected_improvement(mu, sd, incumbent):
    """Closed-form EI of a Gaussian with the given moments."""
    mu = np.asarray(mu, dtype=float)
    sd = np.asarray(sd, dtype=float)
    imp = mu - incumbent
    out = np.where(imp > 0, imp, 0.0)
    ok = sd > 1e-300
    gamma = np.zeros_like(mu)
    np.divide(imp, sd, out=gamma, where=ok)
    ei = sd * norm.pdf(gamma) + imp * norm.cdf(gamma)
    return np.where(ok, ei, out)


def baseline_step(policy, post, *, seed, incumbent=None, ei_state=None,
                  discrete_set=None, fantasy=None, nu_star=None,
                  restarts=10, max_evals=200, screen=256,
                  pkgfn_restarts=2, pkgfn_max_evals=25):
    """One proposal from a baseline policy.

    Full-evaluation policies ("ei", "random", "tsfn", "eifn") return the
    network input x to evaluate at every node. "pkgfn" returns the selected
    Candidate (single node + input) of the original partial method.
    """
    spec = post.spec
    if policy == "random":
        rng = np.random.default_rng(seed)
        return rng.uniform(spec.domain[:, 0], spec.domain[:, 1])

    if policy == "tsfn":
        funcs = post.sample_realization(seed)
        final = spec.K - 1

        def batch(X):
            return propagate_functions(spec, funcs, np.atleast_2d(X))[final]

        problem = BoxProblem(
            bounds=spec.domain,
            objective=lambda x: float(batch(x[None, :])[0]),
            batch_objective=batch,
            restarts=restarts,
            max_evals=max_evals,
            screen=screen,
        )
        x, _ = multistart_maximize(problem, seed=seed)
        return x

    if policy == "ei":
        # Black-box EI on the single GP over (x, y_K) pairs.
        dom = spec.domain

        def batch(X):
            Xn = (np.atleast_2d(X) - dom[:, 0]) / (dom[:, 1] - dom[:, 0])
            mu, var = gp.posterior_diag(ei_state, Xn)
            return expected_improvement(mu, np.sqrt(var), incumbent)

        problem = BoxProblem(
            bounds=dom,
            objective=lambda x: float(batch(x[None, :])[0]),
            batch_objective=batch,
            restarts=restarts,
            max_evals=max_evals,
            screen=screen,
        )
        x, _ = multistart_maximize(problem, seed=seed)
        return x

    if policy == "eifn":
        x, _ = propose_network_candidate(
            post, incumbent, seed, restarts=restarts, max_evals=max_evals, screen=screen
        )
        return x

    if policy == "pkgfn":
        cands = []
        for k in range(spec.K):
            cands.append(
                pkgfn_optimize_node(
                    post, k, discrete_set, fantasy, nu_star, seed=seed + 101 * k,
                    restarts=pkgfn_restarts, max_evals=pkgfn_max_evals,
                )
            )
        return select_node(cands)

    raise ValueError(f"unknown policy {policy!r}")
