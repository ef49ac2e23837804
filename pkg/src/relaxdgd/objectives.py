"""Per-agent loss oracles and curvature tools.

Every objective exposes ``value``, ``gradient`` and ``hvp`` (Hessian-vector
product). Logistic objectives also support minibatch gradients through
:class:`StochasticOracle`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExceeded, DegenerateInput, DimensionMismatch, NoConvergence

__all__ = [
    "Objective",
    "Quadratic",
    "Exponential",
    "Logistic",
    "Quartic",
    "DoubleWell",
    "OBJECTIVE_KINDS",
    "StochasticOracle",
    "SmoothnessCertificate",
    "SmoothnessFit",
    "hessian_norm",
    "certify_smoothness",
    "fit_smoothness",
    "average_value",
    "average_gradient",
    "Average",
]

OBJECTIVE_KINDS = ("quadratic", "exponential", "logistic", "quartic", "double_well")


def _softplus(t):
    # log(1 + e^t) without overflow
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def _sigmoid(t):
    out = np.empty_like(t, dtype=float)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class Objective:
    """Base class. Subclasses implement ``_value``, ``_gradient``, ``_hvp``."""

    kind = "abstract"
    convex = False
    dim: int

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise DimensionMismatch(f"expected vector of dim {self.dim}, got shape {x.shape}")
        return x

    def value(self, x):
        return float(self._value(self._check(x)))

    def gradient(self, x):
        return self._gradient(self._check(x))

    def hvp(self, x, v):
        return self._hvp(self._check(x), self._check(v))


@dataclass(frozen=True, eq=False)
class Quadratic(Objective):
    """``0.5 x^T A x - b^T x`` for symmetric PSD ``A``."""

    A: np.ndarray
    b: np.ndarray
    kind = "quadratic"
    convex = True

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if A.shape != (b.size, b.size):
            raise DimensionMismatch(f"A is {A.shape} but b has {b.size} entries")
        if not np.allclose(A, A.T):
            raise ValueError("A must be symmetric")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @classmethod
    def diagonal(cls, spectrum, b=None):
        spectrum = np.asarray(spectrum, dtype=float)
        return cls(np.diag(spectrum), np.zeros_like(spectrum) if b is None else b)

    @property
    def dim(self):
        return self.b.size

    def _value(self, x):
        return 0.5 * x @ self.A @ x - self.b @ x

    def _gradient(self, x):
        return self.A @ x - self.b

    def _hvp(self, x, v):
        return self.A @ v


@dataclass(frozen=True, eq=False)
class Exponential(Objective):
    """``exp(a^T x)``; Hessian norm equals ``||a|| * ||grad||`` exactly."""

    a: np.ndarray
    kind = "exponential"
    convex = True

    def __post_init__(self):
        object.__setattr__(self, "a", np.atleast_1d(np.asarray(self.a, dtype=float)))

    @property
    def dim(self):
        return self.a.size

    def _value(self, x):
        return np.exp(self.a @ x)

    def _gradient(self, x):
        return self.a * np.exp(self.a @ x)

    def _hvp(self, x, v):
        return self.a * ((self.a @ v) * np.exp(self.a @ x))


@dataclass(frozen=True, eq=False)
class Logistic(Objective):
    """Mean margin loss ``log(1 + exp(-y a^T x))`` plus ``(l2/2)||x||^2``.

    Labels must be +-1.
    """

    X: np.ndarray
    y: np.ndarray
    l2: float = 0.0
    kind = "logistic"
    convex = True

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] != y.size or y.size == 0:
            raise DimensionMismatch("X rows and labels differ or are empty")
        if not np.all(np.abs(y) == 1.0):
            raise ValueError("logistic labels must be +-1")
        if self.l2 < 0:
            raise ValueError("l2 must be nonnegative")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_samples(cls, samples, dim, l2=0.0):
        X = np.zeros((len(samples), dim))
        for r, s in enumerate(samples):
            for i, v in s.features.items():
                X[r, i - 1] = v
        return cls(X, np.array([s.label for s in samples]), l2)

    @property
    def dim(self):
        return self.X.shape[1]

    @property
    def num_samples(self):
        return self.X.shape[0]

    def _value(self, x):
        return np.mean(_softplus(-self.y * (self.X @ x))) + 0.5 * self.l2 * (x @ x)

    def _batch_gradient(self, x, idx):
        Xb, yb = self.X[idx], self.y[idx]
        s = _sigmoid(-yb * (Xb @ x))
        return -(Xb.T @ (yb * s)) / len(yb) + self.l2 * x

    def _gradient(self, x):
        return self._batch_gradient(x, slice(None))

    def sample_gradients(self, x):
        """Per-sample gradients (rows), each including the l2 term."""
        x = self._check(x)
        s = _sigmoid(-self.y * (self.X @ x))
        return -(self.y * s)[:, None] * self.X + self.l2 * x

    def _hvp(self, x, v):
        p = _sigmoid(self.X @ x)
        w = p * (1.0 - p)
        return self.X.T @ (w * (self.X @ v)) / self.num_samples + self.l2 * v

    def smoothness_bound(self):
        """Global Lipschitz constant of the gradient: ``lmax(X^T X)/(4m) + l2``."""
        top = np.linalg.eigvalsh(self.X.T @ self.X / self.num_samples)[-1]
        return 0.25 * float(top) + self.l2


@dataclass(frozen=True, eq=False)
class Quartic(Objective):
    """``sum_j c_j x_j^4 / 4``."""

    c: np.ndarray
    kind = "quartic"

    def __post_init__(self):
        object.__setattr__(self, "c", np.atleast_1d(np.asarray(self.c, dtype=float)))

    @property
    def convex(self):
        return bool(np.all(self.c >= 0))

    @property
    def dim(self):
        return self.c.size

    def _value(self, x):
        return float(np.sum(self.c * x**4) / 4.0)

    def _gradient(self, x):
        return self.c * x**3

    def _hvp(self, x, v):
        return 3.0 * self.c * x**2 * v


@dataclass(frozen=True, eq=False)
class DoubleWell(Objective):
    """Nonconvex ``sum_j (x_j^2 - 1)^2`` with minima at ``x_j = +-1``."""

    dim: int = 1
    kind = "double_well"
    convex = False

    def _value(self, x):
        return float(np.sum((x**2 - 1.0) ** 2))

    def _gradient(self, x):
        return 4.0 * x * (x**2 - 1.0)

    def _hvp(self, x, v):
        return (12.0 * x**2 - 4.0) * v


def average_value(objectives, x):
    return sum(f.value(x) for f in objectives) / len(objectives)


def average_gradient(objectives, x):
    return sum(f.gradient(x) for f in objectives) / len(objectives)


class Average(Objective):
    """The network objective ``F = (1/N) sum_i f_i``."""

    kind = "average"

    def __init__(self, objectives):
        self.parts = tuple(objectives)
        if not self.parts:
            raise ValueError("need at least one objective")
        dims = {f.dim for f in self.parts}
        if len(dims) != 1:
            raise DimensionMismatch(f"objectives disagree on dimension: {sorted(dims)}")
        self.dim = dims.pop()
        self.convex = all(f.convex for f in self.parts)

    def _value(self, x):
        return sum(f._value(x) for f in self.parts) / len(self.parts)

    def _gradient(self, x):
        return sum(f._gradient(x) for f in self.parts) / len(self.parts)

    def _hvp(self, x, v):
        return sum(f._hvp(x, v) for f in self.parts) / len(self.parts)


def hessian_norm(obj, x, tol=1e-10, max_iter=2000, seed=0):
    """Largest absolute Hessian eigenvalue at ``x`` by power iteration on ``hvp``.

    The estimate at step t is ``||H v_t||`` for unit ``v_t``, which converges to
    ``max |lambda|`` even for indefinite Hessians. Iteration stops once
    ``|est_{t+1} - est_t| <= tol * |est_t|``. One reseed is attempted before
    raising :class:`NoConvergence`.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    x = np.asarray(x, dtype=float)
    for attempt in range(2):
        rng = np.random.default_rng([seed, attempt])
        v = rng.standard_normal(x.size)
        v /= np.linalg.norm(v)
        prev_est = None
        for _ in range(max_iter):
            hv = obj.hvp(x, v)
            est = float(np.linalg.norm(hv))
            if est == 0.0:
                return 0.0
            if prev_est is not None and abs(est - prev_est) <= tol * prev_est:
                return est
            prev_est = est
            v = hv / est
    raise NoConvergence(max_iter, "power iteration on Hessian")


@dataclass(frozen=True)
class SmoothnessCertificate:
    L0: float
    L1: float
    verified_radius: float
    grid_points: int
    pairs_checked: int
    max_violation: float

    @property
    def passed(self):
        return self.max_violation <= 0.0


def _grid(box, grid_per_axis, dim):
    box = np.asarray(box, dtype=float)
    if box.ndim == 1:
        box = np.tile(box, (dim, 1))
    if box.shape != (dim, 2):
        raise DimensionMismatch(f"box must be (lo, hi) or {dim} such pairs")
    axes = [np.linspace(lo, hi, grid_per_axis) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def certify_smoothness(obj, L0, L1, box, grid_per_axis, max_pairs=10**6, sample=True, seed=0):
    """Brute-force check of the (L0, L1) gradient-Lipschitz inequality on a grid.

    Pairs of distinct grid points within distance ``1/L1`` (all pairs when
    ``L1 == 0``) are tested; above ``max_pairs`` ordered pairs a uniform
    sample of ``max_pairs`` pairs is used instead, or :class:`BudgetExceeded`
    is raised when ``sample`` is false.
    """
    if grid_per_axis < 2:
        raise ValueError("grid_per_axis must be >= 2")
    if L0 < 0 or L1 < 0:
        raise ValueError("L0 and L1 must be nonnegative")
    pts = _grid(box, grid_per_axis, obj.dim)
    P = len(pts)
    grads = np.array([obj.gradient(p) for p in pts])
    gnorm = np.linalg.norm(grads, axis=1)
    radius = math.inf if L1 == 0 else 1.0 / L1

    def violations(ix, iy):
        dist = np.linalg.norm(pts[iy] - pts[ix], axis=1)
        gdiff = np.linalg.norm(grads[iy] - grads[ix], axis=1)
        keep = (ix != iy) & (dist <= radius)
        viol = gdiff - (L0 + L1 * gnorm[ix]) * dist
        return viol[keep], int(keep.sum())

    worst = -math.inf
    checked = 0
    if P * P <= max_pairs:
        all_idx = np.arange(P)
        chunk = max(1, 200_000 // P)
        for start in range(0, P, chunk):
            ix = np.repeat(all_idx[start:start + chunk], P)
            iy = np.tile(all_idx, len(ix) // P)
            v, n = violations(ix, iy)
            checked += n
            if n:
                worst = max(worst, float(v.max()))
    else:
        if not sample:
            raise BudgetExceeded(f"{P * P} pairs exceed budget {max_pairs}")
        rng = np.random.default_rng(seed)
        remaining = max_pairs
        while remaining > 0:
            n_draw = min(remaining, 200_000)
            ix = rng.integers(0, P, n_draw)
            iy = rng.integers(0, P, n_draw)
            v, n = violations(ix, iy)
            checked += n
            if n:
                worst = max(worst, float(v.max()))
            remaining -= n_draw
    return SmoothnessCertificate(float(L0), float(L1), radius, P, checked, worst)


@dataclass(frozen=True)
class SmoothnessFit:
    L0_hat: float
    L1_hat: float
    pearson_r: float


def fit_smoothness(pairs):
    """Least-squares line ``hess ~ L0 + L1 * grad`` over (grad_norm, hess_norm) pairs.

    Both coefficients are clamped at zero; ``pearson_r`` is reported unclamped
    and is 0 when either coordinate has zero variance.
    """
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 2 or arr.shape[1] != 2:
        raise DegenerateInput("need at least two (grad_norm, hess_norm) pairs")
    g, h = arr[:, 0], arr[:, 1]
    gc, hc = g - g.mean(), h - h.mean()
    sgg = float(gc @ gc)
    if sgg == 0.0:
        raise DegenerateInput("all gradient norms are equal")
    slope = float(gc @ hc) / sgg
    intercept = float(h.mean() - slope * g.mean())
    shh = float(hc @ hc)
    r = 0.0 if shh == 0.0 else float(gc @ hc) / math.sqrt(sgg * shh)
    return SmoothnessFit(max(intercept, 0.0), max(slope, 0.0), r)


@dataclass(frozen=True, eq=False)
class StochasticOracle:
    """Minibatch gradients of a logistic objective.

    Batches are drawn without replacement from a Philox generator keyed on
    ``(rng_seed, agent_id, k)``, so any call is reproducible in isolation.
    """

    objective: Logistic
    batch_size: int
    rng_seed: int = 0
    agent_id: int = 0
    full_batch: bool = field(init=False)

    def __post_init__(self):
        if not isinstance(self.objective, Logistic):
            raise TypeError("stochastic gradients need a logistic objective")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        m = self.objective.num_samples
        object.__setattr__(self, "batch_size", min(self.batch_size, m))
        object.__setattr__(self, "full_batch", self.batch_size >= m)

    def draw(self, k):
        m = self.objective.num_samples
        if self.full_batch:
            return np.arange(m)
        key = np.random.SeedSequence([self.rng_seed, self.agent_id, k])
        rng = np.random.Generator(np.random.Philox(key))
        return np.sort(rng.choice(m, size=self.batch_size, replace=False))

    def gradient_on(self, x, batch):
        x = self.objective._check(x)
        if len(batch) == self.objective.num_samples and np.array_equal(batch, np.arange(len(batch))):
            return self.objective._gradient(x)
        return self.objective._batch_gradient(x, batch)

    def stochastic_gradient(self, x, k):
        batch = self.draw(k)
        return self.gradient_on(x, batch), batch

    def enumerate_batches(self):
        m = self.objective.num_samples
        return [np.array(c) for c in itertools.combinations(range(m), self.batch_size)]
