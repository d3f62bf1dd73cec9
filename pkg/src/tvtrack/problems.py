"""
Time-varying LASSO benchmark.

The data model is ``y ~ N(A x*(t), noise_scale**2 I)`` with the loss
``0.5 ||A x - y||**2`` and regulariser ``lam ||x||_1``. The design matrix has
its extreme singular values pinned to ``sqrt(mu)`` and ``sqrt(L)``.

Random streams are numpy ``Generator(PCG64)`` objects seeded from
``SeedSequence([seed, stream])``; Gaussian draws use numpy's ziggurat
``standard_normal``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .corrector import soft_threshold

MATRIX_STREAM = 0
NOISE_STREAM = 1

REFERENCE_TOL = 1e-11
REFERENCE_MAX_ITER = 1_000_000


class ConvergenceError(RuntimeError):
    pass


def make_rng(seed, stream=NOISE_STREAM):
    """Private PCG64 stream for ``(seed, stream)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(stream)])))


def _orthonormal(rng, rows, cols):
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    # sign-fix so the factor is a deterministic function of the Gaussian draw
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


def generate_matrix(d_y, d, mu, L, seed):
    """
    Random ``d_y x d`` matrix with ``sigma_max**2 = L`` and ``sigma_min**2 = mu``.

    The ``d - 2`` intermediate singular values are drawn log-uniformly in
    ``[sqrt(mu), sqrt(L)]``. The draws depend on ``seed`` only, so matrices
    built for different ``(mu, L)`` share their singular vectors.
    """
    if d < 1 or d_y < d:
        raise ValueError(f"need d_y >= d >= 1, got d_y={d_y}, d={d}")
    if not 0 < mu <= L:
        raise ValueError(f"need 0 < mu <= L, got mu={mu}, L={L}")
    if d == 1 and not math.isclose(mu, L, rel_tol=1e-12):
        raise ValueError("a single column has one singular value; mu must equal L")
    rng = make_rng(seed, MATRIX_STREAM)
    U = _orthonormal(rng, d_y, d)
    V = _orthonormal(rng, d, d)
    u = np.sort(rng.uniform(size=max(d - 2, 0)))[::-1]
    lo, hi = 0.5 * math.log(mu), 0.5 * math.log(L)
    log_sigma = np.concatenate([[hi], lo + u * (hi - lo), [lo]]) if d > 1 else np.array([hi])
    return (U * np.exp(log_sigma)) @ V.T


@dataclass(frozen=True)
class TrajectorySpec:
    """
    Target trajectory ``x*(t)``.

    ``kind="sinusoid"`` is the benchmark path
    ``x*_i(t) = sin(t + 2 pi (i-1)/d) + 0.5 sin(2t + 2 pi (i-1)/d)``.
    ``"constant"`` and ``"affine"`` (``offset + t * velocity``) exist for
    exactness checks.
    """

    d: int
    kind: str = "sinusoid"
    offset: tuple = ()
    velocity: tuple = ()

    def __post_init__(self):
        if self.kind not in ("sinusoid", "constant", "affine"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.kind != "sinusoid" and len(self.offset) != self.d:
            raise ValueError("offset must have d entries")
        if self.kind == "affine" and len(self.velocity) != self.d:
            raise ValueError("velocity must have d entries")

    def __call__(self, t):
        return trajectory_value(self, t)


def trajectory_value(spec, t):
    if spec.kind == "sinusoid":
        phase = 2 * np.pi * np.arange(spec.d) / spec.d
        return np.sin(t + phase) + 0.5 * np.sin(2 * t + phase)
    x = np.array(spec.offset, dtype=float)
    if spec.kind == "affine":
        x = x + t * np.array(spec.velocity, dtype=float)
    return x


@dataclass(frozen=True)
class LassoProblem:
    """
    One instance of the time-varying LASSO.

    ``mu`` and ``L`` are recomputed from the singular values of ``A``.
    """

    A: np.ndarray
    lam: float = 0.0
    trajectory: TrajectorySpec | None = None
    noise_scale: float = 1.0
    mu: float = field(init=False)
    L: float = field(init=False)
    gram: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] < A.shape[1]:
            raise ValueError(f"A must be d_y x d with d_y >= d, got shape {A.shape}")
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        s = np.linalg.svd(A, compute_uv=False)
        if s[-1] <= s[0] * max(A.shape) * np.finfo(float).eps:
            raise ValueError("A must have full column rank")
        A.setflags(write=False)
        gram = A.T @ A
        gram.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "mu", float(s[-1] ** 2))
        object.__setattr__(self, "L", float(s[0] ** 2))
        object.__setattr__(self, "gram", gram)
        if self.trajectory is None:
            object.__setattr__(self, "trajectory", TrajectorySpec(A.shape[1]))
        elif self.trajectory.d != A.shape[1]:
            raise ValueError("trajectory dimension does not match A")

    @classmethod
    def generate(cls, d_y, d, mu, L, seed, lam=0.0, trajectory=None, noise_scale=1.0):
        return cls(generate_matrix(d_y, d, mu, L, seed), lam=lam,
                   trajectory=trajectory, noise_scale=noise_scale)

    @property
    def d(self):
        return self.A.shape[1]

    @property
    def d_y(self):
        return self.A.shape[0]

    @property
    def sigma1_sq(self):
        """Gradient-noise variance at the optimum, ``noise_scale**2 * ||A||_F**2``."""
        return self.noise_scale ** 2 * float(np.sum(self.A ** 2))

    def mean_observation(self, t):
        return self.A @ trajectory_value(self.trajectory, t)


def sample_batch(problem, t, b, rng):
    """``b`` draws of ``A x*(t) + noise``, as a ``b x d_y`` array."""
    if b < 1:
        raise ValueError(f"batch size must be >= 1, got {b}")
    mean = problem.mean_observation(t)
    return mean + problem.noise_scale * rng.standard_normal((b, problem.d_y))


def stochastic_gradient(problem, x, batch):
    """Gradient of the batch-averaged loss, ``A'(A x - mean(batch))``."""
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    return problem.A.T @ (problem.A @ x - batch.mean(axis=0))


def solve_lasso(Q, c, lam, L, x0=None, tol=REFERENCE_TOL, max_iter=REFERENCE_MAX_ITER):
    """
    Minimise ``0.5 x'Qx - c'x + lam ||x||_1`` for positive-definite ``Q``.

    With ``lam = 0`` the normal equations are solved directly. Otherwise
    proximal gradient with step ``1/L`` runs until the fixed-point residual
    ``||x - prox(x - grad/L)||`` is at most ``tol``. The result is then
    polished by solving the linear system on the detected support and sign
    pattern; the polished point is kept when its residual is smaller. A warm
    start ``x0`` goes through the same polish first and is returned directly
    when it already meets ``tol``.

    Returns
    -------
    x : ndarray
    residual : float
    """
    c = np.asarray(c, dtype=float)
    x = np.zeros_like(c) if x0 is None else np.array(x0, dtype=float)
    beta = 1.0 / L
    thr = beta * lam

    def step(z):
        return soft_threshold(z - beta * (Q @ z - c), thr)

    if lam == 0:
        # plain least squares: the normal equations are exact
        x = np.linalg.solve(Q, c)
        res = float(np.linalg.norm(x - step(x)))
        if res <= tol:
            return x, res

    if x0 is not None:
        # a warm start usually carries the right sign pattern already
        guess = _polish(Q, c, lam, x)
        if guess is not None:
            g_res = float(np.linalg.norm(guess - step(guess)))
            if g_res <= tol:
                return guess, g_res

    res = math.inf
    for _ in range(max_iter):
        nxt = step(x)
        res = float(np.linalg.norm(nxt - x))
        x = nxt
        if res <= tol:
            break
    else:
        raise ConvergenceError(f"LASSO solve stalled at residual {res:.3e} after {max_iter} iterations")

    polished = _polish(Q, c, lam, x)
    if polished is not None:
        p_res = float(np.linalg.norm(polished - step(polished)))
        if p_res < res:
            x, res = polished, p_res
    return x, res


def _polish(Q, c, lam, x):
    """Exact minimiser for the support and signs of ``x``, or None if the pattern is inconsistent."""
    support = x != 0
    if not support.any():
        return None
    signs = np.sign(x[support])
    out = np.zeros_like(x)
    out[support] = np.linalg.solve(Q[np.ix_(support, support)], c[support] - lam * signs)
    if not np.array_equal(np.sign(out[support]), signs):
        return None
    return out


def reference_optimum(problem, t, x0=None):
    """
    Minimiser of the expected objective at time ``t``.

    With ``lam = 0`` this is ``x*(t)`` itself; otherwise the LASSO
    ``0.5 ||A x - A x*(t)||**2 + lam ||x||_1`` is solved to a fixed-point
    residual of ``1e-11``.
    """
    target = trajectory_value(problem.trajectory, t)
    if problem.lam == 0:
        return target
    x, _ = solve_lasso(problem.gram, problem.gram @ target, problem.lam, problem.L,
                       x0=target if x0 is None else x0)
    return x


def empirical_optimum(problem, batch, x0=None):
    """Minimiser of the batch objective ``0.5 ||A x - mean(batch)||**2 + lam ||x||_1``."""
    ybar = np.atleast_2d(batch).mean(axis=0)
    x, _ = solve_lasso(problem.gram, problem.A.T @ ybar, problem.lam, problem.L, x0=x0)
    return x


def empirical_optimum_deviation(problem, t, b, trials, rng):
    """Monte-Carlo estimate of ``E ||x_hat* - x*(t)||**2`` for batches of size ``b``."""
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    ref = reference_optimum(problem, t)
    total = 0.0
    for _ in range(trials):
        x_hat = empirical_optimum(problem, sample_batch(problem, t, b, rng), x0=ref)
        total += float(np.sum((x_hat - ref) ** 2))
    return total / trials
