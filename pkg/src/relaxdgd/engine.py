"""Deterministic (DGD) and stochastic (DSGD) decentralized loops.

Each iteration every agent mixes its neighbours' iterates with the gossip
weights and then takes a local gradient step with a step size shared by the
whole network::

    x_i <- sum_j w_ij x_j - alpha_k * grad_i

``alpha_k`` comes from a :class:`~relaxdgd.stepsize.StepRule` evaluated on
gradient statistics gathered centrally; decentralized computation of those
maxima is outside the simulator's scope.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NoConvergence, NonFiniteIterate, NotConvex, NumericalFailure
from .objectives import Average, Logistic, Quadratic, StochasticOracle, hessian_norm
from .stepsize import GradStats, StepRule

__all__ = [
    "CSV_COLUMNS",
    "RunConfig",
    "Trajectory",
    "NetworkState",
    "Optimum",
    "run_dgd",
    "run_dsgd",
    "run_ensemble",
    "reference_optimum",
    "initial_iterates",
]

CSV_COLUMNS = (
    "k",
    "alpha",
    "F_avg",
    "grad_norm_avg",
    "max_local_grad",
    "max_avg_grad",
    "consensus_err",
    "hess_norm",
    "dist_opt",
)

AVERAGE_CHECK_TOL = 1e-10
FLAT_CURVATURE = 1e-8


@dataclass
class RunConfig:
    """Everything one run needs, already constructed.

    ``init`` is ``"zeros"``, ``"gaussian"`` (scaled by ``init_scale``) or an
    ``(N, d)`` array. ``curvature_every = 0`` disables Hessian sampling.
    ``batch_size = None`` makes DSGD use exact local gradients.
    """

    mixing: object
    objectives: list
    rule: StepRule
    K: int
    seed: int = 0
    init: object = "zeros"
    init_scale: float = 1.0
    curvature_every: int = 0
    x_star: np.ndarray | None = None
    F_star: float | None = None
    batch_size: int | None = None
    hess_tol: float = 1e-6

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if len(self.objectives) != self.mixing.n:
            raise ValueError(f"{len(self.objectives)} objectives for {self.mixing.n} agents")

    @property
    def num_agents(self):
        return self.mixing.n

    @property
    def dim(self):
        return self.objectives[0].dim


@dataclass
class NetworkState:
    iterates: np.ndarray
    iteration: int

    @property
    def avg(self):
        return self.iterates.mean(axis=0)

    @property
    def consensus_error(self):
        dev = self.iterates - self.avg
        return float(np.mean(np.sum(dev * dev, axis=1)))


@dataclass
class Trajectory:
    """Per-iteration metrics of one run plus the raw iterates.

    Row ``k`` describes the state *before* step ``k`` and the step size used
    for it; the last row is the terminal state (its ``alpha`` is the step the
    rule would take next).
    """

    algorithm: str
    rule_name: str
    rule_params: dict
    num_agents: int
    rows: list = field(default_factory=list)
    avg_iterates: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    agent_values_at_avg: list = field(default_factory=list)
    agent_grad_norms_at_avg: list = field(default_factory=list)
    batches: dict = field(default_factory=dict)
    batch_noise: list = field(default_factory=list)
    seed: int = 0
    x_star: np.ndarray | None = None
    F_star: float | None = None
    failure: str | None = None
    hess_failures: int = 0

    def __len__(self):
        return len(self.rows)

    @property
    def ks(self):
        return np.array([r["k"] for r in self.rows], dtype=int)

    def column(self, name):
        return np.array([np.nan if r.get(name) is None else r[name] for r in self.rows], dtype=float)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow(["" if r.get(c) is None else repr(r[c]) for c in CSV_COLUMNS])
        return buf.getvalue()

    def to_jsonl(self):
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.rows)


@dataclass(frozen=True)
class Optimum:
    x_star: np.ndarray
    F_star: float


def initial_iterates(cfg):
    n, d = cfg.num_agents, cfg.dim
    if isinstance(cfg.init, str):
        if cfg.init == "zeros":
            return np.zeros((n, d))
        if cfg.init == "gaussian":
            rng = np.random.default_rng([cfg.seed, 0x1D17])
            return cfg.init_scale * rng.standard_normal((n, d))
        raise ValueError(f"unknown init {cfg.init!r}")
    x0 = np.array(cfg.init, dtype=float)
    if x0.ndim == 1:
        x0 = np.tile(x0, (n, 1))
    if x0.shape != (n, d):
        raise ValueError(f"init must have shape ({n}, {d}), got {x0.shape}")
    return x0


def _first_nonfinite(arr):
    bad = ~np.all(np.isfinite(np.atleast_2d(arr)), axis=1)
    return int(np.argmax(bad)) if bad.any() else None


def _observe(cfg, F, X, k, traj):
    """Evaluate metrics at state ``X``; returns (local grads, stats, row)."""
    objs = cfg.objectives
    xbar = X.mean(axis=0)
    local = np.array([f.gradient(X[i]) for i, f in enumerate(objs)])
    at_avg = np.array([f.gradient(xbar) for f in objs])
    vals = np.array([f.value(xbar) for f in objs])
    for arr in (local, at_avg, vals[:, None]):
        bad = _first_nonfinite(arr)
        if bad is not None:
            raise NonFiniteIterate(k, bad)
    gF = at_avg.mean(axis=0)
    local_norms = np.linalg.norm(local, axis=1)
    avg_norms = np.linalg.norm(at_avg, axis=1)
    for norms in (local_norms, avg_norms):
        bad = _first_nonfinite(norms[:, None])
        if bad is not None:
            raise NonFiniteIterate(k, bad)
    stats = GradStats(float(local_norms.max()), float(avg_norms.max()), float(np.linalg.norm(gF)))
    alpha = cfg.rule.alpha(stats, k)
    dev = X - xbar
    row = {
        "k": k,
        "alpha": float(alpha),
        "F_avg": float(vals.mean()),
        "grad_norm_avg": stats.global_grad_norm,
        "max_local_grad": stats.max_local_grad_norm,
        "max_avg_grad": stats.max_avg_grad_norm,
        "consensus_err": float(np.mean(np.sum(dev * dev, axis=1))),
        "hess_norm": None,
        "dist_opt": None,
    }
    step = k - traj.rows[0]["k"] if traj.rows else 0
    if cfg.curvature_every and step % cfg.curvature_every == 0:
        try:
            row["hess_norm"] = hessian_norm(F, xbar, tol=cfg.hess_tol, seed=cfg.seed)
        except NoConvergence:
            # nearly tied top eigenvalues; leave the sample empty rather than guess
            traj.hess_failures += 1
    if cfg.x_star is not None:
        row["dist_opt"] = float(np.linalg.norm(xbar - cfg.x_star))
    traj.rows.append(row)
    traj.avg_iterates.append(xbar)
    traj.iterates.append(X.copy())
    traj.agent_values_at_avg.append(vals)
    traj.agent_grad_norms_at_avg.append(avg_norms)
    return local, alpha


def _run(cfg, algorithm, oracles, k0):
    F = Average(cfg.objectives)
    traj = Trajectory(
        algorithm=algorithm,
        rule_name=cfg.rule.name,
        rule_params=cfg.rule.params(),
        num_agents=cfg.num_agents,
        seed=cfg.seed,
        x_star=None if cfg.x_star is None else np.asarray(cfg.x_star, dtype=float),
        F_star=cfg.F_star,
    )
    W = cfg.mixing.weights
    X = initial_iterates(cfg)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(k0, k0 + cfg.K + 1):
            try:
                local, alpha = _observe(cfg, F, X, k, traj)
            except NonFiniteIterate as exc:
                traj.failure = str(exc)
                break
            if k == k0 + cfg.K:
                break
            if oracles is None:
                G = local
            else:
                G = np.empty_like(local)
                draws = []
                for i, orc in enumerate(oracles):
                    g, batch = orc.stochastic_gradient(X[i], k)
                    G[i] = g
                    draws.append(batch)
                traj.batches[k] = draws
                traj.batch_noise.append(float(np.linalg.norm(G - local, axis=1).max()))
            X_new = W @ X - alpha * G
            bad = _first_nonfinite(X_new)
            if bad is not None:
                traj.failure = str(NonFiniteIterate(k + 1, bad))
                break
            expected = X.mean(axis=0) - alpha * G.mean(axis=0)
            drift = np.linalg.norm(X_new.mean(axis=0) - expected)
            # rounding scales with the operands, not with their (possibly cancelling) sum
            scale = 1.0 + math.sqrt(X.shape[1]) * (np.abs(X).max() + abs(alpha) * np.abs(G).max())
            if drift > AVERAGE_CHECK_TOL * scale:
                raise NumericalFailure(f"average not preserved at k={k}: drift {drift:.3e}")
            X = X_new
    return traj


def run_dgd(cfg):
    """Deterministic loop for ``k = 0..K-1``; rows cover ``k = 0..K``."""
    if cfg.rule.stochastic:
        raise ValueError(f"DGD needs det_clip or constant, got {cfg.rule.name}")
    return _run(cfg, "dgd", None, 0)


def _oracles(cfg):
    if cfg.batch_size is None:
        return None
    out = []
    for i, f in enumerate(cfg.objectives):
        if not isinstance(f, Logistic):
            raise TypeError(f"agent {i}: minibatch gradients need a logistic objective, got {f.kind}")
        out.append(StochasticOracle(f, cfg.batch_size, cfg.seed, i))
    return out


def run_dsgd(cfg):
    """Stochastic loop for ``k = 1..K``; rows cover ``k = 1..K+1``.

    With ``batch_size=None`` or a full batch, the iterates coincide bit for
    bit with :func:`run_dgd` under the same rule.
    """
    if cfg.rule.name == "det_clip":
        raise ValueError("DSGD needs sto_convex, sto_nonconvex or constant")
    return _run(cfg, "dsgd", _oracles(cfg), 1)


def run_ensemble(cfg, seeds, threads=1, algorithm="dsgd"):
    """Run ``cfg`` once per seed; results keep the order of ``seeds``."""
    runner = run_dsgd if algorithm == "dsgd" else run_dgd
    cfgs = [replace(cfg, seed=int(s)) for s in seeds]
    if threads <= 1:
        return [runner(c) for c in cfgs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(runner, cfgs))


def reference_optimum(objectives, tol=1e-10, x0=None, max_iter=500):
    """Minimizer of the averaged objective.

    Quadratics are solved in closed form; other convex sums use damped Newton
    steps (Hessian assembled from ``hvp``) until ``||grad F|| <= tol``. Once
    ``F`` stops resolving the decrease, a step is accepted if it shrinks the
    gradient norm.
    """
    F = Average(objectives)
    if all(isinstance(f, Quadratic) for f in objectives):
        A = sum(f.A for f in objectives) / len(objectives)
        b = sum(f.b for f in objectives) / len(objectives)
        try:
            x = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            raise NoConvergence(0, "singular averaged quadratic") from None
        return Optimum(x, F.value(x))
    if not F.convex:
        raise NotConvex("reference optimum needs a convex average or a user-supplied x*")
    x = np.zeros(F.dim) if x0 is None else np.asarray(x0, dtype=float).copy()
    eye = np.eye(F.dim)
    fx, g = F.value(x), F.gradient(x)
    gnorm = float(np.linalg.norm(g))
    for _ in range(max_iter):
        H = np.array([F.hvp(x, e) for e in eye])
        H = 0.5 * (H + H.T)
        if gnorm <= tol:
            if np.linalg.eigvalsh(H)[0] <= FLAT_CURVATURE:
                # vanishing gradient on a flat direction: the infimum is at infinity
                raise NoConvergence(max_iter, "objective flattens out; no finite minimizer")
            return Optimum(x, fx)
        H = H + 1e-12 * max(1.0, np.abs(H).max()) * eye
        d = np.linalg.solve(H, g)
        slope = float(g @ d)
        if not slope > 0:
            d, slope = g, gnorm * gnorm
        t = 1.0
        while True:
            cand = x - t * d
            fc, gc = F.value(cand), F.gradient(cand)
            gcn = float(np.linalg.norm(gc))
            if fc <= fx - 1e-4 * t * slope or (fc <= fx + 1e-14 * abs(fx) and gcn < gnorm):
                break
            t *= 0.5
            if t < 1e-20:
                raise NoConvergence(max_iter, f"line search stalled at ||grad F|| = {gnorm:.3e}")
        x, fx, g, gnorm = cand, fc, gc, gcn
    raise NoConvergence(max_iter, f"||grad F|| = {gnorm:.3e} > {tol}")
