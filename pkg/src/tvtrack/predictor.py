"""
Iterate history and prediction.

``HistoryBuffer`` keeps the most recent corrected iterates newest-first and is
pre-filled with the starting point, so the first rounds predict from a
constant history. ``predict_linear_rolling`` is the O(d) recursion for the
p=2 weights; ``ogd_update`` learns the weights online over the set
``{alpha : sum(alpha) = 1, ||alpha|| <= D}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .coeffs import CoefficientVector, Provenance, linear_coefficients

REANCHOR_PERIOD = 4096


class HistoryBuffer:
    """
    Ring buffer of the last ``capacity`` iterates, newest first.

    Parameters
    ----------
    x0 : array_like
        Starting point; every slot is initialised to it.
    capacity : int
        Number of stored iterates.
    rolling_terms : int, optional
        If given, maintain ``rolling_sum``, the sum of the newest
        ``rolling_terms`` entries, updated incrementally on ``push``.
    """

    def __init__(self, x0, capacity, rolling_terms=None):
        x0 = np.array(x0, dtype=float).reshape(-1)
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        if rolling_terms is not None and not 1 <= rolling_terms <= capacity:
            raise ValueError(f"rolling_terms must lie in [1, {capacity}], got {rolling_terms}")
        self.capacity = int(capacity)
        self.d = x0.size
        self._data = np.tile(x0, (self.capacity, 1))
        self._head = 0
        self.pushes = 0
        self.rolling_terms = rolling_terms
        self.rolling_sum = None if rolling_terms is None else rolling_terms * x0
        self.last_prediction = None
        self.rolling_predictions = 0

    def __len__(self):
        return self.capacity

    def entry(self, i):
        """Return ``x_{k-i}`` for ``i = 1, ..., capacity``."""
        if not 1 <= i <= self.capacity:
            raise IndexError(f"lag {i} outside 1..{self.capacity}")
        return self._data[(self._head - (i - 1)) % self.capacity]

    def window(self, n=None):
        """Return the newest ``n`` entries as an ``n x d`` array (row ``i-1`` is ``x_{k-i}``)."""
        n = self.capacity if n is None else n
        if n > self.capacity:
            raise ValueError(f"window of {n} exceeds capacity {self.capacity}")
        idx = (self._head - np.arange(n)) % self.capacity
        return self._data[idx]

    def push(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.d:
            raise ValueError(f"expected a vector of dimension {self.d}, got {x.size}")
        if self.rolling_sum is not None:
            leaving = self.entry(self.rolling_terms)
            self.rolling_sum = self.rolling_sum + x - leaving
        self._head = (self._head + 1) % self.capacity
        self._data[self._head] = x
        self.pushes += 1
        if self.rolling_sum is not None and self.pushes % REANCHOR_PERIOD == 0:
            self.rolling_sum = self.window(self.rolling_terms).sum(axis=0)
        return self


def predict(buffer, alpha):
    """Affine combination ``sum_i alpha_i x_{k-i}`` of the newest ``len(alpha)`` entries."""
    a = np.asarray(alpha, dtype=float)
    if a.size > buffer.capacity:
        raise ValueError(f"{a.size} coefficients but only {buffer.capacity} stored iterates")
    return a @ buffer.window(a.size)


def linear_rolling_buffer(x0, n):
    """Buffer set up for ``predict_linear_rolling`` with window ``n``."""
    if n < 2:
        raise ValueError(f"rolling linear predictor needs n >= 2, got {n}")
    buf = HistoryBuffer(x0, n + 1, rolling_terms=n - 1)
    buf.last_prediction = buf.entry(1).copy()
    return buf


def predict_linear_rolling(buffer, n):
    """
    O(d) prediction with the p=2 weights.

    Uses ``x_hat_k = x_hat_{k-1} + (4/n) x_{k-1} - 6/(n(n-1)) s_{k-1} + (2/n) x_{k-n-1}``
    where ``s_{k-1} = x_{k-2} + ... + x_{k-n}``. Must be called exactly once per
    round, before the round's ``push``. Every ``REANCHOR_PERIOD`` calls the
    prediction is recomputed directly to bound floating-point drift.
    """
    if buffer.rolling_sum is None or buffer.last_prediction is None:
        raise ValueError("buffer has no rolling state; build it with linear_rolling_buffer")
    if buffer.capacity != n + 1 or buffer.rolling_terms != n - 1:
        raise ValueError(f"buffer layout does not match window n={n}")
    buffer.rolling_predictions += 1
    if buffer.rolling_predictions % REANCHOR_PERIOD == 0:
        x_hat = predict(buffer, linear_coefficients(n))
    else:
        newest = buffer.entry(1)
        s_prev = buffer.rolling_sum - newest + buffer.entry(n)
        x_hat = (buffer.last_prediction + (4.0 / n) * newest
                 - (6.0 / (n * (n - 1))) * s_prev + (2.0 / n) * buffer.entry(n + 1))
    buffer.last_prediction = x_hat
    return x_hat


def project_A(v, D):
    """
    Euclidean projection onto ``{alpha : <1, alpha> = 1, ||alpha||_2 <= D}``.

    Inside the hyperplane the set is a ball centred at ``1/n`` with radius
    ``sqrt(D**2 - 1/n)``, so the projection is the hyperplane projection
    followed by a radial clip.
    """
    v = np.asarray(v, dtype=float).reshape(-1)
    n = v.size
    if D * D < 1.0 / n - 1e-15:
        raise ValueError(f"D={D} < n**-0.5={n ** -0.5}: the constraint set is empty")
    w = v - (v.sum() - 1.0) / n
    c = np.full(n, 1.0 / n)
    r = math.sqrt(max(D * D - 1.0 / n, 0.0))
    dev = w - c
    dist = np.linalg.norm(dev)
    if dist > r:
        return c + (r / dist) * dev
    return w


@dataclass(frozen=True)
class OnlineCoeffState:
    """
    Learned prediction weights and the online-gradient schedule.

    The step at round ``k >= 1`` is ``eta0 * 2 ** (-decay * floor(log2 k))``,
    i.e. constant between powers of two.
    """

    alpha: CoefficientVector
    D: float = 1.0
    eta0: float = 0.01
    k: int = 1
    decay: float = 0.5

    def __post_init__(self):
        if self.eta0 <= 0:
            raise ValueError(f"eta0 must be positive, got {self.eta0}")
        if self.D * self.D < 1.0 / self.alpha.n - 1e-15:
            raise ValueError(f"D={self.D} is below n**-0.5 for n={self.alpha.n}")

    @classmethod
    def start(cls, alpha, D=1.0, eta0=0.01, decay=0.5):
        a = np.asarray(alpha, dtype=float)
        return cls(CoefficientVector(project_A(a, D), Provenance.LEARNED), D=D, eta0=eta0, decay=decay)

    @property
    def step_size(self):
        return self.eta0 * 2.0 ** (-self.decay * (self.k.bit_length() - 1))


def ogd_update(state, X, grad_loss, subgrad_psi):
    """
    One projected online-gradient step on the prediction weights.

    Parameters
    ----------
    state : OnlineCoeffState
    X : ndarray, shape (n, d)
        History window, row ``i-1`` holding ``x_{k-i}`` (``HistoryBuffer.window``).
    grad_loss, subgrad_psi : ndarray, shape (d,)
        Loss gradient and regulariser subgradient at the prediction ``X.T @ alpha``.

    Returns
    -------
    OnlineCoeffState
        The updated state with the round counter advanced.
    """
    X = np.asarray(X, dtype=float)
    g = np.asarray(grad_loss, dtype=float) + np.asarray(subgrad_psi, dtype=float)
    n = state.alpha.n
    if X.shape != (n, g.size):
        raise ValueError(f"history window has shape {X.shape}, expected ({n}, {g.size})")
    step = state.alpha.alpha - state.step_size * (X @ g)
    alpha = CoefficientVector(project_A(step, state.D), Provenance.LEARNED)
    return replace(state, alpha=alpha, k=state.k + 1)
