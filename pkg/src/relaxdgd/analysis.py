"""Post-hoc checks of descent inequalities and iteration-complexity bounds.

Complexity verdicts compare the number of iterations a run actually needed to
reach an epsilon-criterion (``K_achieved``) against the bound's lower limit
on ``K`` (``K_required``). The bounds are sufficient conditions, so a run
satisfying the assumptions must have ``K_achieved <= K_required``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InsufficientEnsemble, MissingOptimum, NotApplicable, TooFewSamples, WrongRule
from .objectives import StochasticOracle, fit_smoothness

__all__ = [
    "DEFAULT_SLACK",
    "MIN_ENSEMBLE",
    "StepCheck",
    "CheckReport",
    "BoundVerdict",
    "NoiseStats",
    "CurvatureStudy",
    "check_descent_lemma2",
    "check_lemma3_regimes",
    "check_lemma6",
    "check_convex_inequality",
    "k_required_theorem1",
    "k_required_theorem2",
    "k_required_theorem3",
    "k_required_theorem4",
    "k_required_corollary1",
    "k_required_corollary2",
    "consensus_constant",
    "verdict_theorem1",
    "verdict_theorem2",
    "verdict_theorem3",
    "verdict_theorem4",
    "verdict_corollary1",
    "verdict_corollary2",
    "estimate_noise",
    "curvature_study",
    "time_averaged_consensus",
    "verdicts_to_json",
]

DEFAULT_SLACK = 1e-9
MIN_ENSEMBLE = 20


@dataclass(frozen=True)
class StepCheck:
    k: int
    agent: int | None
    margin: float
    passed: bool
    regime: str | None = None


@dataclass
class CheckReport:
    name: str
    checks: list = field(default_factory=list)

    @property
    def checked(self):
        return [c for c in self.checks if c.regime != "mixed"]

    @property
    def passed(self):
        return all(c.passed for c in self.checked)

    @property
    def min_margin(self):
        margins = [c.margin for c in self.checked]
        return min(margins) if margins else math.inf

    def summary(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"{self.name}: {tag} (min margin {self.min_margin:.6g} over {len(self.checked)} checks)"


def _require_det_clip(traj):
    if traj.rule_name != "det_clip":
        raise WrongRule(f"check needs a det_clip trajectory, got {traj.rule_name}")


def check_descent_lemma2(traj, L0, L1, slack=DEFAULT_SLACK):
    """Per-agent descent at the average:
    ``f_i(xbar_k) - f_i(xbar_{k+1}) >= g^2 / (4 L0 + 6 L1 g)`` with
    ``g = ||grad f_i(xbar_k)||``.
    """
    _require_det_clip(traj)
    vals = np.asarray(traj.agent_values_at_avg)
    norms = np.asarray(traj.agent_grad_norms_at_avg)
    report = CheckReport("lemma2")
    for t in range(len(traj.rows) - 1):
        k = traj.rows[t]["k"]
        for i in range(vals.shape[1]):
            g = norms[t, i]
            margin = float((vals[t, i] - vals[t + 1, i]) - g * g / (4.0 * L0 + 6.0 * L1 * g))
            report.checks.append(StepCheck(k, i, margin, margin >= -slack))
    return report


def check_lemma3_regimes(traj, L0, L1, slack=DEFAULT_SLACK):
    """Global descent by gradient regime.

    All agents with ``||grad f_i(xbar_k)|| >= L0/L1``: drop ``>= ||grad F|| / (10 L1)``.
    All below: drop ``>= ||grad F||^2 / (10 L0)``. Mixed steps are reported only.
    """
    _require_det_clip(traj)
    norms = np.asarray(traj.agent_grad_norms_at_avg)
    F = traj.column("F_avg")
    gF = traj.column("grad_norm_avg")
    threshold = math.inf if L1 == 0 else L0 / L1
    report = CheckReport("lemma3")
    for t in range(len(traj.rows) - 1):
        k = traj.rows[t]["k"]
        drop = F[t] - F[t + 1]
        if np.all(norms[t] >= threshold):
            regime, bound = "high", gF[t] / (10.0 * L1)
        elif np.all(norms[t] < threshold):
            regime, bound = "low", gF[t] ** 2 / (10.0 * L0)
        else:
            report.checks.append(StepCheck(k, None, math.nan, True, "mixed"))
            continue
        margin = float(drop - bound)
        report.checks.append(StepCheck(k, None, margin, margin >= -slack, regime))
    return report


def check_lemma6(traj, slack=1e-10):
    """Distance of the average iterate to the optimum is nonincreasing."""
    dist = traj.column("dist_opt")
    if np.isnan(dist).all():
        raise MissingOptimum("trajectory has no dist_opt column (x* unknown)")
    report = CheckReport("lemma6")
    for t in range(len(dist) - 1):
        margin = float(dist[t] - dist[t + 1])
        report.checks.append(StepCheck(traj.rows[t]["k"], None, margin, margin >= -slack))
    return report


def check_convex_inequality(obj, L0, L1, xs, ys, slack=1e-10):
    """Co-coercivity-type inequality for convex (L0, L1)-smooth functions:

    ``||gy - gx||^2 / (2 (L0 + L1 ||gy||) + L1 ||gy - gx||) <= f(y) - f(x) - <gx, y - x>``.
    """
    report = CheckReport("convex_inequality")
    for n, (x, y) in enumerate(zip(xs, ys)):
        gx, gy = obj.gradient(x), obj.gradient(y)
        diff = float(np.linalg.norm(gy - gx))
        den = 2.0 * (L0 + L1 * float(np.linalg.norm(gy))) + L1 * diff
        lhs = diff * diff / den if den > 0 else (0.0 if diff == 0 else math.inf)
        rhs = obj.value(y) - obj.value(x) - float(gx @ (np.asarray(y) - np.asarray(x)))
        margin = rhs - lhs
        report.checks.append(StepCheck(n, None, margin, margin >= -slack))
    return report


# ---------------------------------------------------------------- bounds

def _ceil(v):
    return v if math.isinf(v) else int(math.ceil(v - 1e-12 * max(1.0, abs(v))))


def _pos_log(ratio):
    return max(math.log(ratio), 0.0) if ratio > 0 else 0.0


def k_required_theorem1(L0, L1, R, F0, epsilon):
    ln_term = L1 * R * _pos_log(F0 / epsilon) if L1 > 0 else 0.0
    return _ceil(10.0 * max(ln_term, L0 * R * R / epsilon))


def k_required_theorem2(L0, L1, F0, epsilon):
    # bound is stated on K + 1
    return _ceil(10.0 * max(L1 * F0 / epsilon, L0 * F0 / epsilon**2)) - 1


def k_required_theorem3(L0, L1, R, rho, sigma, delta, N, epsilon):
    gap = 1.0 - math.sqrt(rho)
    noise = sigma**2 + delta**2
    first = (
        3.0 * R**2 / epsilon
        + (288.0 * L1**2 + 216.0 * L1) * noise / (gap**2 * epsilon)
        + 6.0 * sigma**2 / (N * epsilon)
    )
    second = (
        64.0 * R**4 / epsilon**2
        + 53.0 * L0 ** (4.0 / 3.0) * noise ** (2.0 / 3.0) / (gap ** (4.0 / 3.0) * epsilon ** (2.0 / 3.0))
        + 288.0 * L0 * noise / (gap**2 * epsilon)
        + 64.0 * sigma**4 / (N**2 * epsilon**2)
    )
    return _ceil(2.0 * max(first, second))


def theorem4_constant(L0, L1, F1, rho, sigma, delta, N):
    gap = 1.0 - math.sqrt(rho)
    return F1 + 3.0 * (sigma**2 + delta**2) / (2.0 * gap**2) + (5.0 * L0 + 2.0 * L1 * sigma) * sigma**2 / N


def k_required_theorem4(L0, L1, F1, rho, sigma, delta, N, epsilon):
    C = theorem4_constant(L0, L1, F1, rho, sigma, delta, N)
    return _ceil(C * max(4.0 * C / epsilon**4, 144.0 * L1 * sigma / epsilon**2, 64.0 * L1 / epsilon))


def consensus_constant(L1, rho, max_init_dist):
    """``sqrt(1 / (9 (1 - sqrt(rho))^2 L1^2) + max_i ||x_i0 - x*||^2)``."""
    if L1 <= 0:
        raise NotApplicable("consensus constant undefined for L1 = 0")
    gap = 1.0 - math.sqrt(rho)
    if gap <= 0:
        return math.inf
    return math.sqrt(1.0 / (9.0 * gap**2 * L1**2) + max_init_dist**2)


def k_required_corollary1(L0, L1, rho, max_init_dist, F0, epsilon):
    C0 = consensus_constant(L1, rho, max_init_dist)
    return _ceil(10.0 * max(math.sqrt(2.0) * L1 * C0 * _pos_log(F0 / epsilon), L0 / epsilon * C0**2))


def k_required_corollary2(L0, L1, rho, max_init_dist, epsilon):
    C0 = consensus_constant(L1, rho, max_init_dist)
    return _ceil(15.0 * max(L0 * L1 * C0**2 / epsilon, L0**2 * C0**2 / epsilon**2))


@dataclass
class BoundVerdict:
    theorem: str
    K_required: float
    K_achieved: int | None
    epsilon: float
    inputs: dict

    @property
    def satisfied(self):
        return self.K_achieved is not None and self.K_achieved <= self.K_required

    def to_dict(self):
        d = asdict(self)
        if isinstance(self.K_required, float) and math.isinf(self.K_required):
            d["K_required"] = "inf"
        d["satisfied"] = self.satisfied
        return d


def verdicts_to_json(verdicts):
    return json.dumps([v.to_dict() for v in verdicts], indent=2, sort_keys=True)


def _first_k(ks, mask):
    hits = np.flatnonzero(mask)
    return int(ks[hits[0]]) if hits.size else None


def _optimum(traj, x_star, F_star):
    x_star = traj.x_star if x_star is None else np.asarray(x_star, dtype=float)
    F_star = traj.F_star if F_star is None else F_star
    return x_star, F_star


def verdict_theorem1(traj, L0, L1, epsilon, F_star=None, x_star=None, R=None, F0=None):
    """Convex deterministic bound; criterion ``F(xbar_k) - F* <= epsilon``."""
    x_star, F_star = _optimum(traj, x_star, F_star)
    if F_star is None or (R is None and x_star is None):
        raise MissingOptimum("convex deterministic bound needs F* and x*")
    F = traj.column("F_avg")
    R = float(np.linalg.norm(traj.avg_iterates[0] - x_star)) if R is None else R
    F0 = float(F[0] - F_star) if F0 is None else F0
    K_req = k_required_theorem1(L0, L1, R, F0, epsilon)
    K_ach = _first_k(traj.ks, F - F_star <= epsilon)
    return BoundVerdict("T1", K_req, K_ach, epsilon, dict(L0=L0, L1=L1, R=R, F0=F0, F_star=F_star))


def verdict_theorem2(traj, L0, L1, epsilon, F_star=None, F0=None):
    """Nonconvex deterministic bound; criterion ``min_k ||grad F(xbar_k)|| <= epsilon``."""
    F_star = traj.F_star if F_star is None else F_star
    if F0 is None:
        if F_star is None:
            raise MissingOptimum("nonconvex deterministic bound needs F* or F0")
        F0 = float(traj.rows[0]["F_avg"] - F_star)
    K_req = k_required_theorem2(L0, L1, F0, epsilon)
    K_ach = _first_k(traj.ks, traj.column("grad_norm_avg") <= epsilon)
    return BoundVerdict("T2", K_req, K_ach, epsilon, dict(L0=L0, L1=L1, F0=F0, F_star=F_star))


def _check_ensemble(ensemble):
    if len(ensemble) < MIN_ENSEMBLE:
        raise InsufficientEnsemble(f"need >= {MIN_ENSEMBLE} runs, got {len(ensemble)}")
    length = min(len(t) for t in ensemble)
    return length, ensemble[0].ks[:length]


def verdict_theorem3(ensemble, L0, L1, rho, sigma, delta, epsilon, F_star=None, x_star=None):
    """Convex stochastic bound on the running mean of ``E[F(xbar_k) - F*]``."""
    length, ks = _check_ensemble(ensemble)
    x_star, F_star = _optimum(ensemble[0], x_star, F_star)
    if F_star is None or x_star is None:
        raise MissingOptimum("convex stochastic bound needs F* and x*")
    N = ensemble[0].num_agents
    R = max(float(np.linalg.norm(t.avg_iterates[0] - x_star)) for t in ensemble)
    gaps = np.mean([t.column("F_avg")[:length] - F_star for t in ensemble], axis=0)
    running = np.cumsum(gaps) / np.arange(1, length + 1)
    K_req = k_required_theorem3(L0, L1, R, rho, sigma, delta, N, epsilon)
    hits = np.flatnonzero(running <= epsilon)
    K_ach = int(hits[0] + 1) if hits.size else None
    inputs = dict(L0=L0, L1=L1, R=R, rho=rho, sigma=sigma, delta=delta, N=N, runs=len(ensemble), F_star=F_star)
    return BoundVerdict("T3", K_req, K_ach, epsilon, inputs)


def verdict_theorem4(ensemble, L0, L1, rho, sigma, delta, epsilon, F_star=None, F1=None):
    """Nonconvex stochastic bound on ``min_k E[||grad F(xbar_k)||]``."""
    length, ks = _check_ensemble(ensemble)
    F_star = ensemble[0].F_star if F_star is None else F_star
    if F1 is None:
        if F_star is None:
            raise MissingOptimum("nonconvex stochastic bound needs F* or F1")
        F1 = float(np.mean([t.rows[0]["F_avg"] for t in ensemble]) - F_star)
    N = ensemble[0].num_agents
    mean_norm = np.mean([t.column("grad_norm_avg")[:length] for t in ensemble], axis=0)
    K_req = k_required_theorem4(L0, L1, F1, rho, sigma, delta, N, epsilon)
    K_ach = _first_k(ks, mean_norm <= epsilon)
    inputs = dict(L0=L0, L1=L1, F1=F1, rho=rho, sigma=sigma, delta=delta, N=N, runs=len(ensemble))
    return BoundVerdict("T4", K_req, K_ach, epsilon, inputs)


def _max_init_dist(traj, x_star):
    return float(np.max(np.linalg.norm(traj.iterates[0] - x_star, axis=1)))


def verdict_corollary1(traj, L0, L1, rho, epsilon, F_star=None, x_star=None):
    """Convex deterministic bound with the topology-dependent constant; same stopping criterion."""
    if L1 <= 0:
        raise NotApplicable("topology-dependent convex bound needs L1 > 0")
    x_star, F_star = _optimum(traj, x_star, F_star)
    if F_star is None or x_star is None:
        raise MissingOptimum("topology-dependent convex bound needs F* and x*")
    F = traj.column("F_avg")
    F0 = float(F[0] - F_star)
    dist0 = _max_init_dist(traj, x_star)
    K_req = k_required_corollary1(L0, L1, rho, dist0, F0, epsilon)
    K_ach = _first_k(traj.ks, F - F_star <= epsilon)
    inputs = dict(L0=L0, L1=L1, rho=rho, F0=F0, max_init_dist=dist0, C0=consensus_constant(L1, rho, dist0))
    return BoundVerdict("C1", K_req, K_ach, epsilon, inputs)


def verdict_corollary2(traj, L0, L1, rho, epsilon, x_star=None):
    """Nonconvex deterministic bound with the topology-dependent constant; same stopping criterion."""
    if L1 <= 0:
        raise NotApplicable("topology-dependent nonconvex bound needs L1 > 0")
    x_star = traj.x_star if x_star is None else np.asarray(x_star, dtype=float)
    if x_star is None:
        raise MissingOptimum("topology-dependent nonconvex bound needs x*")
    dist0 = _max_init_dist(traj, x_star)
    K_req = k_required_corollary2(L0, L1, rho, dist0, epsilon)
    K_ach = _first_k(traj.ks, traj.column("grad_norm_avg") <= epsilon)
    inputs = dict(L0=L0, L1=L1, rho=rho, max_init_dist=dist0, C0=consensus_constant(L1, rho, dist0))
    return BoundVerdict("C2", K_req, K_ach, epsilon, inputs)


@dataclass(frozen=True)
class NoiseStats:
    sigma_hat: float
    delta_hat: float


def estimate_noise(ensemble, objectives):
    """Empirical gradient-noise and heterogeneity bounds.

    ``sigma_hat`` is the largest deviation of a logged minibatch gradient from
    the full local gradient at the same iterate; ``delta_hat`` the largest
    root-mean-square spread of local gradients around ``grad F`` at the
    recorded averages.
    """
    sigma = 0.0
    delta = 0.0
    for traj in ensemble:
        index = {r["k"]: t for t, r in enumerate(traj.rows)}
        for k, draws in traj.batches.items():
            X = traj.iterates[index[k]]
            for i, batch in enumerate(draws):
                f = objectives[i]
                g = StochasticOracle(f, len(batch)).gradient_on(X[i], batch)
                sigma = max(sigma, float(np.linalg.norm(g - f.gradient(X[i]))))
        for xbar in traj.avg_iterates:
            G = np.array([f.gradient(xbar) for f in objectives])
            spread = G - G.mean(axis=0)
            delta = max(delta, math.sqrt(float(np.mean(np.sum(spread * spread, axis=1)))))
    return NoiseStats(sigma, delta)


@dataclass(frozen=True)
class CurvatureStudy:
    pairs: np.ndarray
    L0_hat: float
    L1_hat: float
    pearson_r: float

    def to_csv(self):
        lines = ["grad_norm,hess_norm"]
        lines += [f"{g!r},{h!r}" for g, h in self.pairs.tolist()]
        return "\n".join(lines) + "\n"


def curvature_study(traj, min_samples=10):
    """Fit Hessian norm against gradient norm of ``F`` along the run."""
    h = traj.column("hess_norm")
    g = traj.column("grad_norm_avg")
    keep = ~np.isnan(h)
    if keep.sum() < min_samples:
        raise TooFewSamples(f"{int(keep.sum())} curvature samples, need {min_samples}")
    pairs = np.stack([g[keep], h[keep]], axis=1)
    fit = fit_smoothness(pairs)
    return CurvatureStudy(pairs, fit.L0_hat, fit.L1_hat, fit.pearson_r)


def time_averaged_consensus(traj):
    return float(np.mean(traj.column("consensus_err")))
