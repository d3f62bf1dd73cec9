"""
Correction step: proximal gradient on the sampled objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DIVERGENCE_NORM = 1e12


class DivergenceError(RuntimeError):
    """An iterate became non-finite or exceeded the divergence threshold."""


def soft_threshold(x, tau):
    """Componentwise ``sign(x) * max(|x| - tau, 0)``."""
    if tau < 0:
        raise ValueError(f"threshold must be non-negative, got {tau}")
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


@dataclass(frozen=True)
class ProxSpec:
    """Regulariser ``psi``: ``kind`` is ``"zero"`` or ``"l1"`` (``lam * ||x||_1``)."""

    kind: str = "zero"
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "l1"):
            raise ValueError(f"unknown regulariser {self.kind!r}")
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")

    @classmethod
    def l1(cls, lam):
        return cls("l1", float(lam)) if lam > 0 else cls()

    def prox(self, x, beta):
        if self.kind == "zero":
            return np.asarray(x, dtype=float)
        return soft_threshold(x, beta * self.lam)

    def value(self, x):
        if self.kind == "zero":
            return 0.0
        return self.lam * float(np.abs(x).sum())

    def subgradient(self, x):
        """Minimum-norm subgradient; coordinate 0 where ``x_j = 0``."""
        if self.kind == "zero":
            return np.zeros_like(np.asarray(x, dtype=float))
        return self.lam * np.sign(x)


class GradientOracle:
    """
    Gradient of the smooth sampled loss, with a call counter.

    Parameters
    ----------
    grad : callable
        ``grad(x) -> ndarray``.
    mu, L : float
        Strong-convexity and smoothness constants.
    value : callable, optional
        ``value(x) -> float``; needed only for objective diagnostics.
    """

    def __init__(self, grad, mu, L, value=None):
        self._grad = grad
        self._value = value
        self.mu = float(mu)
        self.L = float(L)
        self.calls = 0

    def __call__(self, x):
        self.calls += 1
        return self._grad(x)

    def value(self, x):
        if self._value is None:
            raise TypeError("this oracle has no loss value")
        return self._value(x)

    @classmethod
    def quadratic(cls, Q, c, mu=None, L=None):
        """Oracle for ``0.5 x'Qx - c'x`` (gradient ``Qx - c``)."""
        Q = np.asarray(Q, dtype=float)
        c = np.asarray(c, dtype=float)
        if mu is None or L is None:
            eig = np.linalg.eigvalsh(Q)
            mu = eig[0] if mu is None else mu
            L = eig[-1] if L is None else L
        return cls(lambda x: Q @ x - c, mu, L, value=lambda x: 0.5 * x @ Q @ x - c @ x)


def _guard(x, c):
    if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_NORM:
        raise DivergenceError(
            f"prox-gradient iterate diverged at inner step {c} (||x|| = {np.linalg.norm(x):.3g}); "
            "the step size is probably above 1/L")


def prox_gradient(oracle, psi, x0, beta, c_max, trace=False):
    """
    Run ``c_max`` proximal gradient steps ``x <- prox_{beta psi}(x - beta grad(x))``.

    Parameters
    ----------
    oracle : GradientOracle
    psi : ProxSpec
    x0 : ndarray
        Warm start (the prediction).
    beta : float
        Step size; ``1/L`` keeps the objective monotone.
    c_max : int
        Number of steps. No early exit.
    trace : bool, optional
        Also return the list of all iterates ``x^0, ..., x^{c_max}``.

    Raises
    ------
    DivergenceError
        If an iterate is non-finite or its norm exceeds ``1e12``.
    """
    if beta < 0:
        raise ValueError(f"step size must be non-negative, got {beta}")
    x = np.array(x0, dtype=float)
    path = [x.copy()] if trace else None
    for c in range(c_max):
        x = psi.prox(x - beta * oracle(x), beta)
        _guard(x, c + 1)
        if trace:
            path.append(x.copy())
    return (x, path) if trace else x


def contraction_factor(mu, L, beta, c_max):
    """Guaranteed distance contraction ``(1 - beta*mu)**c_max`` of ``c_max`` prox-gradient steps."""
    if not 0 < mu <= L:
        raise ValueError(f"need 0 < mu <= L, got mu={mu}, L={L}")
    if not 0 < beta <= 1.0 / L * (1 + 1e-12):
        raise ValueError(f"rate only guaranteed for 0 < beta <= 1/L={1.0 / L}, got {beta}")
    return (1.0 - beta * mu) ** c_max


def fixed_point_residual(oracle, psi, x, beta):
    """``||x - prox_{beta psi}(x - beta grad(x))||``; zero exactly at the minimiser."""
    return float(np.linalg.norm(x - psi.prox(x - beta * oracle(x), beta)))
