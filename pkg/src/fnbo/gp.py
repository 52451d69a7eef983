"""Single-output Gaussian-process regression for one network node.

Targets are standardized and hyperparameters live on the standardized scale;
all public posterior quantities are returned on the original target scale.
Inputs are expected on the unit box (callers normalize with the node bounds).

The module provides exact noiseless regression with a jitter term for
conditioning, one-step fantasy conditioning as a rank-1 Cholesky extension,
and pathwise posterior samples (random Fourier features for the prior plus an
exact data correction) that can be evaluated at arbitrary inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import DimensionMismatch, DuplicateInputs, SingularCovariance
from .optim import sobol_points

MATERN52 = "matern52"
RBF = "rbf"
_FAMILIES = (MATERN52, RBF)

# Hyperparameter box used after input normalization and target standardization.
_LS_BOUNDS = (5e-2, 20.0)
_OS_BOUNDS = (5e-2, 20.0)
_FIT_SEED = 20107  # fixed so fitting is a deterministic function of the data
_MAX_JITTER = 1e-4


@dataclass(frozen=True)
class KernelConfig:
    """Stationary ARD kernel: family, per-dimension lengthscales, outputscale
    (the kernel variance) and the diagonal jitter."""

    family: str
    lengthscales: np.ndarray
    outputscale: float
    jitter: float = 1e-6

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)
        if np.any(ls <= 0) or self.outputscale <= 0:
            raise ValueError("lengthscales and outputscale must be positive")
        if self.jitter < 1e-12:
            raise ValueError("jitter must be >= 1e-12")


def _sq_dists_per_dim(A, B):
    # A (na, d), B (nb, d) -> (d, na, nb); only used on training-sized blocks.
    return (A.T[:, :, None] - B.T[:, None, :]) ** 2.0


def _scaled_sqdist(A, B, ls):
    """ARD-scaled squared distances, accumulated from explicit differences.

    The inner-product expansion would be faster but loses ~1e-12 of relative
    precision, which the near-singular noiseless solves amplify beyond the
    posterior oracle tolerance. Small problems use one broadcast; larger ones
    accumulate per dimension to bound memory.
    """
    na, nb, dim = A.shape[0], B.shape[0], A.shape[1]
    if na * nb * dim <= 2_000_000:
        diff = (A[:, None, :] - B[None, :, :]) / ls
        return np.einsum("ijk,ijk->ij", diff, diff)
    s = np.zeros((na, nb))
    tmp = np.empty_like(s)
    for d in range(dim):
        np.subtract(A[:, d, None], B[None, :, d], out=tmp)
        tmp /= ls[d]
        np.multiply(tmp, tmp, out=tmp)
        s += tmp
    return s


def _corr_from_s(family, s):
    """Correlation given the ARD-scaled squared distance s."""
    if family == RBF:
        return np.exp(-0.5 * s)
    r = np.sqrt(np.maximum(s, 0.0))
    t = math.sqrt(5.0) * r
    return (1.0 + t + (5.0 / 3.0) * s) * np.exp(-t)


def _dcorr_ds(family, s, corr=None):
    if family == RBF:
        c = _corr_from_s(family, s) if corr is None else corr
        return -0.5 * c
    r = np.sqrt(np.maximum(s, 0.0))
    t = math.sqrt(5.0) * r
    return -(5.0 / 6.0) * (1.0 + t) * np.exp(-t)


def kernel(config, A, B):
    """Covariance matrix between point sets A (na, d) and B (nb, d)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1] or A.shape[1] != config.lengthscales.shape[0]:
        raise DimensionMismatch("kernel input dimensions disagree")
    s = _scaled_sqdist(A, B, config.lengthscales)
    return config.outputscale * _corr_from_s(config.family, s)


@dataclass
class GPState:
    """Fitted GP: hyperparameters plus cached Cholesky factor and weights.

    `config`, `mean` and the caches are on the standardized-target scale;
    `y_mean`/`y_scale` map back to the original scale. Treated as immutable:
    fantasize returns a fresh state.
    """

    config: KernelConfig
    train_inputs: np.ndarray
    train_targets: np.ndarray  # original scale
    y_mean: float
    y_scale: float
    mean: float  # constant prior mean, standardized scale
    chol: np.ndarray
    alpha: np.ndarray

    @property
    def n(self):
        return self.train_inputs.shape[0]

    @property
    def dim(self):
        return self.train_inputs.shape[1]

    @property
    def prior_mean(self):
        """Fitted constant prior mean on the original target scale."""
        return self.y_mean + self.y_scale * self.mean

    @property
    def prior_variance(self):
        """Prior (far-from-data) predictive variance on the original scale."""
        return self.y_scale ** 2 * self.config.outputscale

    def standardized_targets(self):
        return (self.train_targets - self.y_mean) / self.y_scale


def _chol_with_escalation(K, jitter):
    """Cholesky of K + jitter*I, escalating jitter up to the module cap."""
    j = jitter
    while True:
        try:
            return np.linalg.cholesky(K + j * np.eye(K.shape[0])), j
        except np.linalg.LinAlgError:
            if j >= _MAX_JITTER:
                raise SingularCovariance(
                    f"training covariance singular even at jitter {j:g}"
                ) from None
            j = min(j * 10.0, _MAX_JITTER)


def _build_state(inputs, targets, y_mean, y_scale, config, mean):
    Knn = kernel(config, inputs, inputs)
    L, j = _chol_with_escalation(Knn, config.jitter)
    if j != config.jitter:
        config = replace(config, jitter=j)
    resid = (targets - y_mean) / y_scale - mean
    alpha = cho_solve((L, True), resid)
    return GPState(
        config=config,
        train_inputs=inputs,
        train_targets=targets,
        y_mean=y_mean,
        y_scale=y_scale,
        mean=mean,
        chol=L,
        alpha=alpha,
    )


# ---------------------------------------------------------------------------
# Marginal likelihood and fitting
# ---------------------------------------------------------------------------

def log_marginal_likelihood(inputs, targets, family, lengthscales, outputscale, mean,
                            jitter=1e-6):
    """Exact LML of the data under the given hyperparameters, with gradient.

    Returns (value, grad) where grad concatenates d/d lengthscale_i,
    d/d outputscale and d/d mean (natural parameters, not logs).
    """
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float).reshape(-1)
    ls = np.atleast_1d(np.asarray(lengthscales, dtype=float))
    n, dim = X.shape
    D2 = _sq_dists_per_dim(X, X)  # (dim, n, n)
    s = np.tensordot(1.0 / ls ** 2, D2, axes=1)
    corr = _corr_from_s(family, s)
    K = outputscale * corr + jitter * np.eye(n)
    L = np.linalg.cholesky(K)
    resid = y - mean
    alpha = cho_solve((L, True), resid)
    value = (
        -0.5 * resid @ alpha
        - np.sum(np.log(np.diag(L)))
        - 0.5 * n * math.log(2.0 * math.pi)
    )
    Kinv = cho_solve((L, True), np.eye(n))
    W = np.outer(alpha, alpha) - Kinv
    dC_ds = _dcorr_ds(family, s, corr)
    grad = np.empty(dim + 2)
    for d in range(dim):
        dK = outputscale * dC_ds * (-2.0 * D2[d] / ls[d] ** 3)
        grad[d] = 0.5 * np.sum(W * dK)
    grad[dim] = 0.5 * np.sum(W * corr)
    grad[dim + 1] = np.sum(alpha)
    return float(value), grad


def _profiled_nll(theta, X, y_std, family, D2, jitter):
    """Negative LML at log-hyperparameters theta, prior mean profiled out.

    Returns (nll, grad wrt theta). The profiled (GLS) mean makes the mean
    gradient vanish, so the envelope theorem gives the remaining gradients.
    """
    dim = X.shape[1]
    ls = np.exp(theta[:dim])
    os_ = math.exp(theta[dim])
    n = X.shape[0]
    s = np.tensordot(1.0 / ls ** 2, D2, axes=1)
    corr = _corr_from_s(family, s)
    K = os_ * corr + jitter * np.eye(n)
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        return 1e12, np.zeros(dim + 1)
    ones = np.ones(n)
    Ki_y = cho_solve((L, True), y_std)
    Ki_1 = cho_solve((L, True), ones)
    mean = (ones @ Ki_y) / (ones @ Ki_1)
    resid = y_std - mean
    alpha = Ki_y - mean * Ki_1
    value = (
        -0.5 * resid @ alpha
        - np.sum(np.log(np.diag(L)))
        - 0.5 * n * math.log(2.0 * math.pi)
    )
    Kinv = cho_solve((L, True), np.eye(n))
    W = np.outer(alpha, alpha) - Kinv
    dC_ds = _dcorr_ds(family, s, corr)
    grad = np.empty(dim + 1)
    for d in range(dim):
        dK = os_ * dC_ds * (-2.0 * D2[d] / ls[d] ** 3)
        grad[d] = 0.5 * np.sum(W * dK) * ls[d]  # chain rule to log-space
    grad[dim] = 0.5 * np.sum(W * corr) * os_
    return -value, -grad


def fit(inputs, targets, family=MATERN52, *, jitter=1e-6, restarts=5, warm_start=None):
    """Fit hyperparameters by multi-start LML maximization; returns a GPState.

    Inputs are expected on the unit box. Targets are standardized internally;
    lengthscale and outputscale bounds apply on that scale. `warm_start` may
    carry a previous KernelConfig whose hyperparameters seed one extra start.
    """
    from scipy.optimize import minimize

    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(targets, dtype=float).reshape(-1)
    n, dim = X.shape
    if n < 1:
        raise ValueError("need at least one observation")
    if y.shape[0] != n:
        raise DimensionMismatch("inputs and targets disagree in length")
    if n > 1:
        diff = X[:, None, :] - X[None, :, :]
        d2 = np.sum(diff ** 2, axis=-1)
        np.fill_diagonal(d2, np.inf)
        if d2.min() < 1e-20:
            raise DuplicateInputs("training inputs contain (near-)duplicates")

    y_mean = float(np.mean(y))
    y_scale = float(np.std(y))
    if y_scale < 1e-12:
        y_scale = 1.0
    y_std = (y - y_mean) / y_scale

    D2 = _sq_dists_per_dim(X, X)
    lb = np.full(dim + 1, math.log(_LS_BOUNDS[0]))
    ub = np.full(dim + 1, math.log(_LS_BOUNDS[1]))
    lb[dim], ub[dim] = math.log(_OS_BOUNDS[0]), math.log(_OS_BOUNDS[1])

    starts = []
    if n > 1:
        med = math.sqrt(np.median(d2[np.isfinite(d2)]))
        ls0 = np.clip(med, _LS_BOUNDS[0], _LS_BOUNDS[1])
    else:
        ls0 = 0.5
    starts.append(np.concatenate([np.full(dim, math.log(ls0)), [0.0]]))
    if warm_start is not None:
        ws = np.concatenate(
            [
                np.log(np.clip(warm_start.lengthscales, *_LS_BOUNDS)),
                [math.log(min(max(warm_start.outputscale, _OS_BOUNDS[0]), _OS_BOUNDS[1]))],
            ]
        )
        starts.append(ws)
    u = sobol_points(dim + 1, max(restarts, 5), seed=_FIT_SEED)
    starts.extend(lb + u * (ub - lb))

    best = None
    for theta0 in starts:
        res = minimize(
            _profiled_nll,
            theta0,
            args=(X, y_std, family, D2, jitter),
            jac=True,
            method="L-BFGS-B",
            bounds=list(zip(lb, ub)),
            options={"maxiter": 80},
        )
        if best is None or res.fun < best.fun:
            best = res
    theta = best.x
    ls = np.exp(theta[:dim])
    os_ = math.exp(theta[dim])
    config = KernelConfig(family=family, lengthscales=ls, outputscale=os_, jitter=jitter)

    # Recover the profiled mean at the optimum.
    Knn = kernel(config, X, X)
    L, j = _chol_with_escalation(Knn, jitter)
    ones = np.ones(n)
    Ki_y = cho_solve((L, True), y_std)
    Ki_1 = cho_solve((L, True), ones)
    mean = float((ones @ Ki_y) / (ones @ Ki_1))
    if j != jitter:
        config = replace(config, jitter=j)
    return _build_state(X, y, y_mean, y_scale, config, mean)


# ---------------------------------------------------------------------------
# Posterior evaluation
# ---------------------------------------------------------------------------

def posterior(state, query_points):
    """Posterior (means, covariance) at the query points, original scale."""
    Z = np.atleast_2d(np.asarray(query_points, dtype=float))
    if Z.shape[1] != state.dim:
        raise DimensionMismatch(f"queries must be {state.dim}-dimensional")
    Kzx = kernel(state.config, Z, state.train_inputs)
    mean_std = state.mean + Kzx @ state.alpha
    V = solve_triangular(state.chol, Kzx.T, lower=True)
    Kzz = kernel(state.config, Z, Z)
    cov_std = Kzz - V.T @ V
    cov_std = 0.5 * (cov_std + cov_std.T)
    mean = state.y_mean + state.y_scale * mean_std
    return mean, state.y_scale ** 2 * cov_std


def posterior_diag(state, query_points):
    """Posterior (means, pointwise variances); variances clipped at zero."""
    Z = np.atleast_2d(np.asarray(query_points, dtype=float))
    if Z.shape[1] != state.dim:
        raise DimensionMismatch(f"queries must be {state.dim}-dimensional")
    Kzx = kernel(state.config, Z, state.train_inputs)
    mean_std = state.mean + Kzx @ state.alpha
    V = solve_triangular(state.chol, Kzx.T, lower=True)
    var_std = np.maximum(state.config.outputscale - np.sum(V * V, axis=0), 0.0)
    return state.y_mean + state.y_scale * mean_std, state.y_scale ** 2 * var_std


# ---------------------------------------------------------------------------
# Fantasy conditioning
# ---------------------------------------------------------------------------

def _extend_chol(state, z):
    """Rank-1 extension of the cached factor with the new input z.

    Returns (k_vec, b, d) where b solves L b = k_vec and d is the new diagonal
    entry. d*d close to the jitter signals a duplicate input.
    """
    kz = kernel(state.config, z[None, :], state.train_inputs)[0]
    b = solve_triangular(state.chol, kz, lower=True)
    d2 = state.config.outputscale + state.config.jitter - b @ b
    return kz, b, d2


def fantasize(state, z, y_sample):
    """Condition on one extra noiseless pair (z, y_sample); returns a new state.

    Implemented as a rank-1 Cholesky extension; the input state is unchanged.
    Duplicating a training input returns the state unchanged when y_sample is
    consistent with the (deterministic) posterior there, else raises.
    """
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.shape[0] != state.dim:
        raise DimensionMismatch(f"fantasy input must be {state.dim}-dimensional")
    kz, b, d2 = _extend_chol(state, z)
    if d2 < 4.0 * state.config.jitter:
        mu, var = posterior_diag(state, z[None, :])
        scale = max(abs(state.y_scale), 1.0)
        if abs(mu[0] - y_sample) <= 1e-6 * scale + 3.0 * math.sqrt(max(var[0], 0.0)):
            return state
        raise SingularCovariance(
            "fantasy input duplicates a training input with an inconsistent value"
        )
    d = math.sqrt(d2)
    n = state.n
    L_new = np.zeros((n + 1, n + 1))
    L_new[:n, :n] = state.chol
    L_new[n, :n] = b
    L_new[n, n] = d
    inputs = np.vstack([state.train_inputs, z[None, :]])
    targets = np.concatenate([state.train_targets, [float(y_sample)]])
    resid = (targets - state.y_mean) / state.y_scale - state.mean
    alpha = cho_solve((L_new, True), resid)
    return GPState(
        config=state.config,
        train_inputs=inputs,
        train_targets=targets,
        y_mean=state.y_mean,
        y_scale=state.y_scale,
        mean=state.mean,
        chol=L_new,
        alpha=alpha,
    )


class FantasyEnsemble:
    """F fantasy conditionings of one GP at a shared input z.

    All fantasies share the training set and covariance; only the regression
    weights differ, so posterior means for every fantasy come from one matrix
    product and the variance is computed once.
    """

    def __init__(self, state, z, y_samples):
        z = np.asarray(z, dtype=float).reshape(-1)
        y_samples = np.asarray(y_samples, dtype=float).reshape(-1)
        kz, b, d2 = _extend_chol(state, z)
        self.state = state
        self.count = y_samples.shape[0]
        self.degenerate = d2 < 4.0 * state.config.jitter
        if self.degenerate:
            # No-information fantasy: all conditioned posteriors equal the
            # current one.
            self.inputs = state.train_inputs
            self.chol = state.chol
            self.alphas = np.repeat(state.alpha[:, None], self.count, axis=1)
            return
        n = state.n
        L_new = np.zeros((n + 1, n + 1))
        L_new[:n, :n] = state.chol
        L_new[n, :n] = b
        L_new[n, n] = math.sqrt(d2)
        self.inputs = np.vstack([state.train_inputs, z[None, :]])
        self.chol = L_new
        resid = np.empty((n + 1, self.count))
        base = (state.train_targets - state.y_mean) / state.y_scale - state.mean
        resid[:n, :] = base[:, None]
        resid[n, :] = (y_samples - state.y_mean) / state.y_scale - state.mean
        self.alphas = cho_solve((L_new, True), resid)

    def posterior_diag(self, query_points):
        """Means (m, F) for every fantasy and the shared variances (m,)."""
        st = self.state
        Z = np.atleast_2d(np.asarray(query_points, dtype=float))
        Kzx = kernel(st.config, Z, self.inputs)
        means_std = st.mean + Kzx @ self.alphas
        V = solve_triangular(self.chol, Kzx.T, lower=True)
        var_std = np.maximum(st.config.outputscale - np.sum(V * V, axis=0), 0.0)
        return (
            st.y_mean + st.y_scale * means_std,
            st.y_scale ** 2 * var_std,
        )


# ---------------------------------------------------------------------------
# Pathwise sampling
# ---------------------------------------------------------------------------

def sample_path(state, seed, n_features=1024):
    """Approximate posterior function draw, evaluable at arbitrary inputs.

    The prior draw uses random Fourier features of the fitted kernel; adding
    the exact kernel data correction (Matheron's rule) makes the draw
    interpolate the training data up to jitter. Deterministic per seed.
    """
    rng = np.random.default_rng(seed)
    cfg = state.config
    dim = state.dim
    if cfg.family == MATERN52:
        # Matern spectral density = multivariate t with 5 dof.
        chi = rng.chisquare(5.0, n_features)
        freq = rng.standard_normal((n_features, dim)) * np.sqrt(5.0 / chi)[:, None]
    else:
        freq = rng.standard_normal((n_features, dim))
    freq = freq / cfg.lengthscales[None, :]
    phases = rng.uniform(0.0, 2.0 * math.pi, n_features)
    weights = rng.standard_normal(n_features)
    amp = math.sqrt(2.0 * cfg.outputscale / n_features)

    def prior(Z):
        return state.mean + amp * (np.cos(Z @ freq.T + phases) @ weights)

    correction = cho_solve(
        (state.chol, True), state.standardized_targets() - prior(state.train_inputs)
    )
    X = state.train_inputs

    def path(Z):
        Z = np.asarray(Z, dtype=float)
        single = Z.ndim == 1
        Zm = np.atleast_2d(Z)
        val_std = prior(Zm) + kernel(cfg, Zm, X) @ correction
        out = state.y_mean + state.y_scale * val_std
        return float(out[0]) if single else out

    return path
