"""The posterior a network of independent node GPs induces on its output.

Node surrogates live on normalized coordinates (unit box per node input
space); this module owns that mapping, so callers work with raw network
inputs throughout. Expectations over the final node output are estimated by
reparameterized propagation: each node output is sampled as mean + std *
base-normal, with one fixed antithetic quasi-random base matrix shared across
query points (sample-average approximation). The base is refreshed once per
BO iteration, never inside an acquisition optimization.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import norm

from . import gp
from .errors import DimensionMismatch, DomainViolation
from .optim import BoxProblem, multistart_maximize, sobol_points


def normalize_node_inputs(spec, k, Z):
    """Map raw node-k inputs onto the unit box using the spec bounds."""
    lo, hi = spec.node_bounds(k)
    return (np.atleast_2d(np.asarray(Z, dtype=float)) - lo) / (hi - lo)


def fit_node(spec, k, inputs, targets, family=gp.MATERN52, warm_start=None):
    """Fit node k's GP on raw inputs (normalized here)."""
    Zn = normalize_node_inputs(spec, k, inputs)
    return gp.fit(Zn, targets, family=family, warm_start=warm_start)


def gaussian_base(n_samples, width, seed):
    """Antithetic scrambled-Sobol normal base matrix of shape (S, width).

    S is n_samples rounded up to the next even integer; antithetic pairing
    makes odd moments vanish exactly, so one-node networks propagate to their
    posterior mean with zero base error.
    """
    half = max(1, (int(n_samples) + 1) // 2)
    u = sobol_points(width, half, seed)
    g = norm.ppf(np.clip(u, 1e-12, 1.0 - 1e-12))
    return np.vstack([g, -g])


class NetworkPosterior:
    """K conditionally independent node GPs plus the DAG that combines them."""

    def __init__(self, spec, nodes, nu_samples=64, base_seed=0):
        if len(nodes) != spec.K:
            raise DimensionMismatch("need one GPState per node")
        for k, st in enumerate(nodes):
            if st.dim != spec.node_dim(k):
                raise DimensionMismatch(
                    f"node {k} GP has input dim {st.dim}, spec says {spec.node_dim(k)}"
                )
        self.spec = spec
        self.nodes = list(nodes)
        self.base = gaussian_base(nu_samples, spec.K, base_seed)
        bounds = [spec.node_bounds(k) for k in range(spec.K)]
        self._lo = [lo for lo, hi in bounds]
        self._span = [hi - lo for lo, hi in bounds]

    def _normalize(self, k, Z):
        return (Z - self._lo[k]) / self._span[k]

    @property
    def n_samples(self):
        return self.base.shape[0]

    def node_posterior_diag(self, k, Z):
        """Posterior mean/variance of node k at raw inputs Z (m, dim_k)."""
        return gp.posterior_diag(self.nodes[k], self._normalize(k, np.atleast_2d(Z)))

    # -- propagation --------------------------------------------------------

    def _node_rows(self, k, X, values, n_samples=None):
        """Assemble node-k input rows from parent sample values.

        X is (N, d); values[j] is (N, S). Returns (N*S, dim_k) raw inputs, or
        (N, dim_k) when node k is a root (inputs independent of the samples).
        """
        spec = self.spec
        N = X.shape[0]
        S = self.base.shape[0] if n_samples is None else n_samples
        if not spec.parents[k]:
            return X[:, list(spec.ext_inputs[k])]
        cols = [values[j].reshape(N * S) for j in spec.parents[k]]
        cols += [np.repeat(X[:, i], S) for i in spec.ext_inputs[k]]
        return np.stack(cols, axis=1)

    def propagate(self, X, states=None, base=None):
        """Sampled node outputs at each row of X; returns list of (N, S) arrays."""
        spec = self.spec
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != spec.dim:
            raise DimensionMismatch(f"X must have {spec.dim} columns")
        states = self.nodes if states is None else states
        base = self.base if base is None else base
        N, S = X.shape[0], base.shape[0]
        values = [None] * spec.K
        for k in range(spec.K):
            Z = self._node_rows(k, X, values, S)
            mu, var = gp.posterior_diag(states[k], self._normalize(k, Z))
            sd = np.sqrt(var)
            if not spec.parents[k]:
                values[k] = mu[:, None] + sd[:, None] * base[None, :, k]
            else:
                values[k] = (mu + sd * np.tile(base[:, k], N)).reshape(N, S)
        return values

    def final_samples(self, X, states=None, base=None):
        """(N, S) samples of the final node output at each row of X."""
        return self.propagate(X, states=states, base=base)[self.spec.K - 1]

    def nu(self, x):
        """Quasi-MC posterior mean of the final node output at one point x."""
        x = np.asarray(x, dtype=float).reshape(-1)
        if not self.spec.in_domain(x):
            raise DomainViolation(f"{x} outside the domain box")
        return float(self.final_samples(x[None, :]).mean())

    def nu_batch(self, X):
        """Vectorized nu over the rows of X; no domain check."""
        return self.final_samples(np.atleast_2d(X)).mean(axis=1)

    def propagate_mean(self, X):
        """Plug-in propagation of posterior means only (diagnostic mode)."""
        zero = np.zeros((1, self.spec.K))
        return [v[:, 0] for v in self.propagate(X, base=zero)]

    # -- realizations --------------------------------------------------------

    def sample_realization(self, seed):
        """One pathwise draw of every node function, in raw coordinates.

        Returns K callables composable with `network.propagate_functions`;
        deterministic per seed (int or SeedSequence).
        """
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        seeds = ss.spawn(self.spec.K)
        funcs = []
        for k in range(self.spec.K):
            path = gp.sample_path(self.nodes[k], seed=seeds[k])
            lo, hi = self.spec.node_bounds(k)
            span = hi - lo

            def raw(Z, path=path, lo=lo, span=span):
                Zn = (np.atleast_2d(np.asarray(Z, dtype=float)) - lo) / span
                return path(Zn)

            funcs.append(raw)
        return funcs

    # -- recommendation ------------------------------------------------------

    def maximize_mean(self, seed, restarts=10, max_evals=200, screen=256,
                      extra_starts=None):
        """Multistart maximization of nu over the domain; returns (x*, nu*)."""
        problem = BoxProblem(
            bounds=self.spec.domain,
            objective=lambda x: float(self.nu_batch(x[None, :])[0]),
            batch_objective=self.nu_batch,
            restarts=restarts,
            max_evals=max_evals,
            screen=screen,
        )
        return multistart_maximize(problem, seed=seed, extra_starts=extra_starts)
