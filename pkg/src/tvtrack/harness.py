"""
Experiment harness: method configurations, the prediction-correction loop,
the TVSGD baseline, the windowed tracking metric and grid sweeps.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .coeffs import linear_coefficients, norm_profile, regression_coefficients, uniform_coefficients
from .corrector import DivergenceError, GradientOracle, ProxSpec, contraction_factor, prox_gradient
from .predictor import (
    HistoryBuffer,
    OnlineCoeffState,
    linear_rolling_buffer,
    ogd_update,
    predict,
    predict_linear_rolling,
)
from .problems import ConvergenceError, make_rng, reference_optimum, sample_batch

log = logging.getLogger(__name__)

N_MAX = 100_000
CSV_COLUMNS = ("method", "h", "n", "p", "seed", "lambda", "avg_err",
               "std_err_over_seeds", "grad_calls_per_round", "wall_ms")


class GradientAccountingError(AssertionError):
    pass


def _floor(x):
    # guard against h**-e landing a hair below an integer
    return int(math.floor(x + 1e-9))


@dataclass(frozen=True)
class NPolicy:
    """
    How the history length ``n`` is picked from ``h``.

    ``auto``: ``floor(h ** (-2q / (2q + 1)))``; ``power``: ``floor(h ** -exponent)``;
    ``fixed``: ``n`` as given. Derived values are clamped to ``[max(p, 2), 1e5]``.
    """

    kind: str = "auto"
    q: int = 2
    n: int | None = None
    exponent: float | None = None

    def __post_init__(self):
        if self.kind not in ("auto", "fixed", "power"):
            raise ValueError(f"unknown n policy {self.kind!r}")
        if self.kind == "fixed" and (self.n is None or self.n < 1):
            raise ValueError("fixed n policy needs n >= 1")
        if self.kind == "power" and (self.exponent is None or self.exponent <= 0):
            raise ValueError("power n policy needs a positive exponent")
        if self.kind == "auto" and self.q < 1:
            raise ValueError("auto n policy needs q >= 1")

    def resolve(self, h, p=1):
        if self.kind == "fixed":
            return self.n
        e = 2 * self.q / (2 * self.q + 1) if self.kind == "auto" else self.exponent
        return min(max(_floor(h ** -e), p, 2), N_MAX)


@dataclass(frozen=True)
class MethodSpec:
    """
    One solver configuration.

    ``kind`` is ``"tvsgd"``, ``"sharp_poly"`` or ``"sharp_online"``. ``beta`` of
    None means ``1/L`` for the SHARP variants and ``h**(2/3)`` for TVSGD.
    """

    kind: str
    p: int = 2
    n_policy: NPolicy = field(default_factory=NPolicy)
    c_max: int = 30
    beta: float | None = None
    eta0: float = 0.01
    D: float = 1.0
    decay: float = 0.5
    rolling: bool = True

    def __post_init__(self):
        if self.kind not in ("tvsgd", "sharp_poly", "sharp_online"):
            raise ValueError(f"unknown method kind {self.kind!r}")
        if self.c_max < 0:
            raise ValueError("c_max must be non-negative")
        if self.kind == "sharp_poly" and self.p < 1:
            raise ValueError("p must be >= 1")

    @property
    def id(self):
        if self.kind == "tvsgd":
            return "tvsgd"
        if self.kind == "sharp_online":
            return "sharp:online"
        return f"sharp:p={self.p}"

    @classmethod
    def tvsgd(cls, beta=None):
        return cls("tvsgd", beta=beta)

    @classmethod
    def sharp_poly(cls, p, n=None, c_max=30, **kw):
        policy = NPolicy("fixed", n=n) if n is not None else NPolicy("auto", q=p)
        return cls("sharp_poly", p=p, n_policy=policy, c_max=c_max, **kw)

    @classmethod
    def sharp_online(cls, n=None, c_max=30, eta0=0.01, D=1.0, **kw):
        policy = NPolicy("fixed", n=n) if n is not None else NPolicy("power", exponent=1.0)
        return cls("sharp_online", n_policy=policy, c_max=c_max, eta0=eta0, D=D, **kw)

    @classmethod
    def parse(cls, text, c_max=30):
        """Parse ``tvsgd``, ``sharp:p=<int>`` or ``sharp:online``."""
        t = text.strip().lower()
        if t == "tvsgd":
            return cls.tvsgd()
        if t == "sharp:online":
            return cls.sharp_online(c_max=c_max)
        if t.startswith("sharp:p="):
            try:
                p = int(t[len("sharp:p="):])
            except ValueError:
                raise ValueError(f"bad method {text!r}") from None
            return cls.sharp_poly(p, c_max=c_max)
        raise ValueError(f"bad method {text!r}; expected tvsgd, sharp:p=<int> or sharp:online")

    def resolve_n(self, h):
        if self.kind == "tvsgd":
            return None
        p = self.p if self.kind == "sharp_poly" else 2
        n = self.n_policy.resolve(h, p)
        if n < p:
            raise ValueError(f"{self.id}: history length n={n} is below p={p}")
        return n

    def grad_calls_per_round(self):
        if self.kind == "tvsgd":
            return 1
        return self.c_max + (1 if self.kind == "sharp_online" else 0)


@dataclass
class RunRecord:
    """
    Per-round log of one run and its summary.

    ``pred`` is None for TVSGD, which has no prediction; its error is measured
    on the corrected iterate.
    """

    method: str
    h: float
    seed: int
    lam: float
    n: int | None
    p: int | None
    k: np.ndarray
    t: np.ndarray
    pred: np.ndarray | None
    corr: np.ndarray
    ref: np.ndarray
    grad_calls: int
    wall_ms: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def measurand(self):
        return "corr" if self.pred is None else "pred"

    @property
    def err_pred(self):
        if self.pred is None:
            return None
        return np.linalg.norm(self.pred - self.ref, axis=1)

    @property
    def err_corr(self):
        return np.linalg.norm(self.corr - self.ref, axis=1)

    @property
    def err(self):
        return self.err_corr if self.pred is None else self.err_pred

    @property
    def rounds(self):
        return self.k.size

    @property
    def grad_calls_per_round(self):
        return self.grad_calls / self.rounds if self.rounds else 0.0

    def rows(self):
        """Per-round rows ``(k, t_k, x_hat_k, x_k, x*_k, err_pred, err_corr)``."""
        ep = self.err_pred
        ec = self.err_corr
        for j in range(self.rounds):
            yield (int(self.k[j]), float(self.t[j]),
                   None if self.pred is None else self.pred[j], self.corr[j], self.ref[j],
                   None if ep is None else float(ep[j]), float(ec[j]))


def windowed_error(record, t_lo=4.0, t_hi=5.0):
    """Mean tracking error over rounds with ``t_lo <= t_k < t_hi``."""
    mask = (record.t >= t_lo) & (record.t < t_hi)
    if not mask.any():
        raise ValueError(f"no rounds with {t_lo} <= t_k < {t_hi}")
    return float(record.err[mask].mean())


def default_x0(d):
    x0 = np.zeros(d)
    x0[0] = 2.0
    return x0


def _rounds(h, t_end):
    if h <= 0 or t_end <= 0:
        raise ValueError(f"need h > 0 and t_end > 0, got h={h}, t_end={t_end}")
    K = _floor(t_end / h)
    k = np.arange(1, K + 1)
    return k, k * h


def reference_path(problem, t):
    """Reference optima at every time in ``t``, warm-started along the path."""
    out = np.empty((len(t), problem.d))
    prev = None
    for j, tj in enumerate(t):
        prev = reference_optimum(problem, tj, x0=prev)
        out[j] = prev
    return out


class _Round:
    """Sampled smooth loss ``0.5 x'Gx - c'x`` for one round."""

    def __init__(self, problem):
        self.gram = problem.gram
        self.At = problem.A.T
        self.c = None
        self.oracle = GradientOracle(self._grad, problem.mu, problem.L)

    def _grad(self, x):
        return self.gram @ x - self.c

    def observe(self, batch):
        self.c = self.At @ batch.mean(axis=0)


def _check_calls(method, before, after, k):
    expected = method.grad_calls_per_round()
    if after - before != expected:
        raise GradientAccountingError(
            f"{method.id}: {after - before} gradient calls in round {k}, expected {expected}")


def run_sharp(problem, method, h, t_end, seed, x0=None, batch=1, refs=None):
    """
    Prediction-correction loop over ``k = 1, ..., floor(t_end / h)``.

    Each round predicts from the history (p=2 via the rolling recursion when
    ``method.rolling``; learned weights for ``sharp_online``), samples a batch
    at ``t_k``, runs ``c_max`` prox-gradient steps from the prediction and
    pushes the result. In online mode the weights take one projected gradient
    step on the round's loss at the prediction before the correction.

    Parameters
    ----------
    problem : LassoProblem
    method : MethodSpec
    h, t_end : float
    seed : int
        Seeds the noise stream.
    x0 : array_like, optional
        Start point; defaults to ``(2, 0, ..., 0)``.
    batch : int
        Samples per round.
    refs : ndarray, optional
        Precomputed reference optima for the rounds.

    Returns
    -------
    RunRecord
    """
    if method.kind not in ("sharp_poly", "sharp_online"):
        raise ValueError(f"run_sharp cannot run {method.id}")
    start = time.perf_counter()
    k, t = _rounds(h, t_end)
    n = method.resolve_n(h)
    x0 = default_x0(problem.d) if x0 is None else np.asarray(x0, dtype=float)
    psi = ProxSpec.l1(problem.lam)
    beta = 1.0 / problem.L if method.beta is None else method.beta
    rng = make_rng(seed)
    rnd = _Round(problem)
    oracle = rnd.oracle

    online = method.kind == "sharp_online"
    rolling = method.kind == "sharp_poly" and method.p == 2 and method.rolling
    state = None
    alpha = None
    if online:
        buf = HistoryBuffer(x0, n)
        state = OnlineCoeffState.start(uniform_coefficients(n).alpha, D=method.D,
                                       eta0=method.eta0, decay=method.decay)
    elif rolling:
        buf = linear_rolling_buffer(x0, n)
    else:
        buf = HistoryBuffer(x0, n)
        alpha = regression_coefficients(method.p, n)

    pred = np.empty((k.size, problem.d))
    corr = np.empty_like(pred)
    for j, tk in enumerate(t):
        calls = oracle.calls
        if online:
            x_hat = predict(buf, state.alpha)
        elif rolling:
            x_hat = predict_linear_rolling(buf, n)
        else:
            x_hat = predict(buf, alpha)
        rnd.observe(sample_batch(problem, tk, batch, rng))
        if online:
            state = ogd_update(state, buf.window(n), oracle(x_hat), psi.subgradient(x_hat))
        x = prox_gradient(oracle, psi, x_hat, beta, method.c_max)
        _check_calls(method, calls, oracle.calls, int(k[j]))
        buf.push(x)
        pred[j] = x_hat
        corr[j] = x

    if refs is None:
        refs = reference_path(problem, t)
    meta = {}
    if not online:
        # the rolling recursion never materialises alpha; rebuild it for the diagnostic
        _, l1 = norm_profile(alpha if alpha is not None else linear_coefficients(n))
        meta["alpha_l1"] = l1
        if method.c_max and beta <= 1.0 / problem.L * (1 + 1e-12):
            gamma = contraction_factor(problem.mu, problem.L, beta, method.c_max)
            meta["gamma_alpha_l1"] = gamma * l1
            if gamma * l1 >= 1:
                log.warning("%s at h=%g: contraction bound %.3g * ||alpha||_1 %.3g >= 1",
                            method.id, h, gamma, l1)
    if online:
        meta["alpha_final"] = state.alpha.alpha.copy()
    return RunRecord(method.id, h, seed, problem.lam, n,
                     method.p if method.kind == "sharp_poly" else None,
                     k, t, pred, corr, np.asarray(refs), oracle.calls,
                     wall_ms=1e3 * (time.perf_counter() - start), meta=meta)


def run_tvsgd(problem, h, t_end, seed, x0=None, batch=1, refs=None, beta=None):
    """
    Proximal stochastic gradient baseline: one step of size ``h**(2/3)`` per round.
    """
    method = MethodSpec.tvsgd(beta)
    start = time.perf_counter()
    k, t = _rounds(h, t_end)
    x = default_x0(problem.d) if x0 is None else np.array(x0, dtype=float)
    psi = ProxSpec.l1(problem.lam)
    beta = h ** (2.0 / 3.0) if beta is None else beta
    rng = make_rng(seed)
    rnd = _Round(problem)
    oracle = rnd.oracle
    corr = np.empty((k.size, problem.d))
    for j, tk in enumerate(t):
        calls = oracle.calls
        rnd.observe(sample_batch(problem, tk, batch, rng))
        x = prox_gradient(oracle, psi, x, beta, 1)
        _check_calls(method, calls, oracle.calls, int(k[j]))
        corr[j] = x
    if refs is None:
        refs = reference_path(problem, t)
    return RunRecord("tvsgd", h, seed, problem.lam, None, None, k, t, None, corr,
                     np.asarray(refs), oracle.calls,
                     wall_ms=1e3 * (time.perf_counter() - start))


def run_method(problem, method, h, t_end, seed, x0=None, batch=1, refs=None):
    if method.kind == "tvsgd":
        return run_tvsgd(problem, h, t_end, seed, x0=x0, batch=batch, refs=refs, beta=method.beta)
    return run_sharp(problem, method, h, t_end, seed, x0=x0, batch=batch, refs=refs)


def fit_rate(points):
    """Least-squares slope of ``log(err)`` against ``log(h)``."""
    pts = [(float(h), float(e)) for h, e in points]
    if len(pts) < 3:
        raise ValueError(f"need at least 3 points, got {len(pts)}")
    if any(h <= 0 or e <= 0 for h, e in pts):
        raise ValueError("h and error values must be positive")
    lh = np.log([h for h, _ in pts])
    le = np.log([e for _, e in pts])
    if np.ptp(lh) == 0:
        raise ValueError("need at least two distinct h values")
    lh_c = lh - lh.mean()
    return float(lh_c @ (le - le.mean()) / (lh_c @ lh_c))


# ---------------------------------------------------------------- grid sweeps

@dataclass
class CellResult:
    method: str
    h: float
    n: int | None
    p: int | None
    seed: int
    lam: float
    avg_err: float | None
    grad_calls_per_round: float | None
    wall_ms: float
    error: str | None = None
    kind: str | None = None  # failure class: "divergence" | "convergence"

    @property
    def ok(self):
        return self.error is None


@dataclass
class AggregateRow:
    method: str
    h: float
    n: int | None
    p: int | None
    lam: float
    avg_err: float
    std_err_over_seeds: float
    grad_calls_per_round: float
    wall_ms: float
    seeds: int


@dataclass
class GridResult:
    cells: list
    aggregates: list

    @property
    def failures(self):
        return [c for c in self.cells if not c.ok]

    def mean_error(self, method_id, h):
        for a in self.aggregates:
            if a.method == method_id and a.h == h:
                return a.avg_err
        raise KeyError((method_id, h))

    def series(self, method_id):
        """``[(h, mean error)]`` for one method, sorted by ``h``."""
        return sorted((a.h, a.avg_err) for a in self.aggregates if a.method == method_id)


def _run_group(task):
    """Every method for one ``(h, seed)``: one problem instance, shared reference path."""
    config, h, seed = task
    problem = config.problem_for(h, seed)
    _, t = _rounds(h, config.t_end)
    refs = None
    out = []
    for method in config.methods:
        n = method.resolve_n(h)
        p = method.p if method.kind == "sharp_poly" else None
        try:
            if refs is None:
                refs = reference_path(problem, t)
            rec = run_method(problem, method, h, config.t_end, seed, x0=config.x0_vector(),
                             batch=config.batch, refs=refs)
            err = windowed_error(rec, *config.window)
            out.append(CellResult(method.id, h, n, p, seed, problem.lam, err,
                                  rec.grad_calls_per_round, rec.wall_ms))
        except (DivergenceError, ConvergenceError, FloatingPointError) as exc:
            kind = "convergence" if isinstance(exc, ConvergenceError) else "divergence"
            out.append(CellResult(method.id, h, n, p, seed, problem.lam, None, None, 0.0,
                                  error=str(exc), kind=kind))
    return out


def aggregate(cells, methods_order=None):
    groups = {}
    for c in cells:
        if c.ok:
            groups.setdefault((c.method, c.h), []).append(c)
    order = {m: i for i, m in enumerate(methods_order or [])}
    rows = []
    for (m, h), cs in groups.items():
        errs = np.array([c.avg_err for c in cs])
        rows.append(AggregateRow(
            m, h, cs[0].n, cs[0].p, cs[0].lam, float(errs.mean()),
            float(errs.std(ddof=1)) if errs.size > 1 else 0.0,
            cs[0].grad_calls_per_round, float(np.mean([c.wall_ms for c in cs])), errs.size))
    rows.sort(key=lambda a: (order.get(a.method, len(order)), a.method, -a.h))
    return rows


def run_grid(config, workers=None):
    """
    Run every ``(h, method, seed)`` cell of ``config``.

    Work is split by ``(h, seed)`` so the methods share one problem instance
    and reference path. With ``workers > 1`` the groups run in a process
    pool; results are merged in task order, so output matches a serial run.
    """
    workers = config.workers if workers is None else workers
    tasks = [(config, h, seed) for h in config.h for seed in config.seeds]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            groups = list(pool.map(_run_group, tasks))
    else:
        groups = [_run_group(t) for t in tasks]
    order = {m.id: i for i, m in enumerate(config.methods)}
    cells = [c for g in groups for c in g]
    cells.sort(key=lambda c: (order[c.method], -c.h, c.seed))
    for c in cells:
        if not c.ok:
            log.error("cell %s h=%g seed=%d failed: %s", c.method, c.h, c.seed, c.error)
    return GridResult(cells, aggregate(cells, [m.id for m in config.methods]))


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if v.is_integer() and abs(v) < 2 ** 53:
        return str(int(v))
    return f"{v:.17g}"


def write_csv(result, path):
    """Write cell rows then aggregate rows (blank ``seed``) in the fixed column order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for c in result.cells:
            if not c.ok:
                continue
            w.writerow([c.method, _fmt(c.h), _fmt(c.n), _fmt(c.p), _fmt(c.seed), _fmt(c.lam),
                        _fmt(c.avg_err), "", _fmt(c.grad_calls_per_round), _fmt(c.wall_ms)])
        for a in result.aggregates:
            w.writerow([a.method, _fmt(a.h), _fmt(a.n), _fmt(a.p), "", _fmt(a.lam),
                        _fmt(a.avg_err), _fmt(a.std_err_over_seeds),
                        _fmt(a.grad_calls_per_round), _fmt(a.wall_ms)])


def read_rates(path):
    """Fitted log-log slope per method from the aggregate rows of a results CSV."""
    series = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            if row["seed"] != "":
                continue
            series.setdefault(row["method"], []).append((float(row["h"]), float(row["avg_err"])))
    return {m: fit_rate(pts) for m, pts in series.items() if len(pts) >= 3}
