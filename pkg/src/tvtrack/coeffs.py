"""
Prediction coefficients.

A prediction is an affine combination ``x_hat_k = sum_i alpha_i x_{k-i}`` of
the last ``n`` iterates. This module builds the weight vector ``alpha`` from a
polynomial regression over the nodes ``-1, ..., -n``, from the closed form of
the linear (p=2) fit, and from the alternating binomials of Lagrange
extrapolation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from math import comb

import numpy as np

MAX_POLY_DEGREE = 8
MAX_SHARP_ORDER = 60


class Provenance(str, enum.Enum):
    MIN_NORM_REGRESSION = "min_norm_regression"
    CLOSED_FORM_LINEAR = "closed_form_linear"
    SHARP_BINOMIAL = "sharp_binomial"
    LEARNED = "learned"


@dataclass(frozen=True)
class BasisSpec:
    """
    Polynomial basis evaluated at the past nodes.

    The node for lag ``i`` is ``phi(-i) = (1, i, i**2, ..., i**(p-1))``, so
    ``phi(0) = (1, 0, ..., 0)``.
    """

    p: int
    kind: str = "polynomial"

    def __post_init__(self):
        if self.p < 1:
            raise ValueError(f"basis size p must be >= 1, got {self.p}")
        if self.kind != "polynomial":
            raise ValueError(f"unsupported basis kind {self.kind!r}")

    def node(self, i):
        """Basis vector at lag ``i`` (``i = 0`` is the prediction node)."""
        return float(i) ** np.arange(self.p)

    def target(self):
        return self.node(0)

    def matrix(self, n):
        """The ``p x n`` matrix with columns ``phi(-1), ..., phi(-n)``."""
        lags = np.arange(1, n + 1, dtype=float)
        return lags[None, :] ** np.arange(self.p)[:, None]


@dataclass(frozen=True)
class CoefficientVector:
    alpha: np.ndarray
    provenance: Provenance
    p: int | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=float).reshape(-1)
        if alpha.size == 0:
            raise ValueError("coefficient vector must be non-empty")
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)

    @property
    def n(self):
        return self.alpha.size

    def __len__(self):
        return self.alpha.size

    def __array__(self, dtype=None, copy=None):
        return self.alpha if dtype is None else self.alpha.astype(dtype)


def regression_coefficients(basis, n):
    """
    Minimum-norm solution of ``Phi @ alpha = phi(0)``.

    Equivalent to ``Phi.T @ inv(Phi @ Phi.T) @ phi(0)`` but computed from a QR
    factorization of ``Phi.T`` with the lags scaled to ``i/n``. The scaling is
    a row scaling of ``Phi`` by ``diag(1, 1/n, ..., 1/n**(p-1))``, which leaves
    the solution set unchanged because ``phi(0) = e_1``.

    Parameters
    ----------
    basis : BasisSpec
        Polynomial basis with ``p <= 8`` functions.
    n : int
        Number of past iterates, ``n >= p``.

    Returns
    -------
    CoefficientVector
    """
    if isinstance(basis, int):
        basis = BasisSpec(basis)
    p = basis.p
    if p > MAX_POLY_DEGREE:
        raise ValueError(f"polynomial regression supports p <= {MAX_POLY_DEGREE}, got {p}")
    if n < p:
        raise ValueError(f"need n >= p for a full-rank basis matrix, got n={n}, p={p}")

    u = np.arange(1, n + 1, dtype=float) / n
    design = u[:, None] ** np.arange(p)[None, :]  # n x p, scaled Phi.T
    q, r = np.linalg.qr(design, mode="reduced")
    # Phi_s alpha = e1 with Phi_s = R^T Q^T  ->  alpha = Q R^{-T} e1
    e1 = np.zeros(p)
    e1[0] = 1.0
    w = np.linalg.solve(r.T, e1)
    alpha = q @ w
    return CoefficientVector(alpha, Provenance.MIN_NORM_REGRESSION, p=p)


def linear_coefficients(n):
    """Closed-form p=2 weights ``(4n + 2 - 6i) / (n(n-1))``."""
    if n < 2:
        raise ValueError(f"linear coefficients need n >= 2, got {n}")
    i = np.arange(1, n + 1, dtype=float)
    alpha = (4 * n + 2 - 6 * i) / (n * (n - 1))
    return CoefficientVector(alpha, Provenance.CLOSED_FORM_LINEAR, p=2)


def sharp_coefficients(n):
    """Lagrange extrapolation weights ``(-1)**(i-1) * C(n, i)``."""
    if n < 1:
        raise ValueError(f"SHARP coefficients need n >= 1, got {n}")
    if n > MAX_SHARP_ORDER:
        raise ValueError(f"binomial weights overflow for n > {MAX_SHARP_ORDER}, got {n}")
    alpha = [(-1) ** (i - 1) * comb(n, i) for i in range(1, n + 1)]
    return CoefficientVector(np.array(alpha, dtype=float), Provenance.SHARP_BINOMIAL, p=n)


def uniform_coefficients(n):
    """Plain moving average ``1/n``; the default start for learned weights."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return CoefficientVector(np.full(n, 1.0 / n), Provenance.LEARNED, p=1)


def reproduction_residual(alpha, basis):
    """``||Phi @ alpha - phi(0)||_2`` for the basis over ``len(alpha)`` lags."""
    a = np.asarray(alpha, dtype=float)
    if isinstance(basis, int):
        basis = BasisSpec(basis)
    if a.size < basis.p:
        raise ValueError(f"need at least p={basis.p} coefficients, got {a.size}")
    return float(np.linalg.norm(basis.matrix(a.size) @ a - basis.target()))


def norm_profile(alpha):
    """Return ``(||alpha||_2, ||alpha||_1)``."""
    a = np.asarray(alpha, dtype=float)
    return float(np.linalg.norm(a)), float(np.abs(a).sum())
