"""Clipping step sizes evaluated from global gradient statistics.

Terms whose denominator vanishes (``L1 == 0`` or a zero gradient norm) are
treated as ``+inf`` and drop out of the minimum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidRule, InvalidStats, NonPositiveL0

__all__ = [
    "GradStats",
    "StepRule",
    "DetClip",
    "StoConvex",
    "StoNonconvex",
    "Constant",
    "RULE_NAMES",
    "det_clip_alpha",
    "sto_convex_alpha",
    "sto_convex_clip_terms",
    "sto_nonconvex_alpha",
    "convex_C1",
    "make_rule",
]

RULE_NAMES = ("det_clip", "sto_convex", "sto_nonconvex", "constant")


def _inv(den):
    return math.inf if den == 0 else 1.0 / den


@dataclass(frozen=True)
class GradStats:
    """Gradient-norm statistics of one iteration.

    max_local_grad_norm: ``max_i ||grad f_i(x_i)||``
    max_avg_grad_norm: ``max_i ||grad f_i(x_bar)||``
    global_grad_norm: ``||grad F(x_bar)||``
    """

    max_local_grad_norm: float
    max_avg_grad_norm: float
    global_grad_norm: float = 0.0

    def __post_init__(self):
        for name in ("max_local_grad_norm", "max_avg_grad_norm", "global_grad_norm"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise InvalidStats(f"{name} must be finite and nonnegative, got {v}")


def _check_L(L0, L1):
    if not L0 > 0:
        raise NonPositiveL0(f"L0 must be positive, got {L0}")
    if L1 < 0:
        raise InvalidRule(f"L1 must be nonnegative, got {L1}")


def det_clip_alpha(L0, L1, stats):
    """``min{1/(2 L0), 1/(3 L1 max_local), 1/(3 L1 max_avg)}``."""
    _check_L(L0, L1)
    return min(
        1.0 / (2.0 * L0),
        _inv(3.0 * L1 * stats.max_local_grad_norm),
        _inv(3.0 * L1 * stats.max_avg_grad_norm),
    )


def convex_C1(L1, rho):
    gap = 1.0 - math.sqrt(rho)
    return 1.0 - 5.0 * L1 - (240.0 * L1**3 + 180.0 * L1**2) / gap**2


def sto_convex_clip_terms(L1, stats):
    """The two gradient-dependent terms of the stochastic convex rule."""
    g = stats.max_avg_grad_norm
    return _inv(g), _inv(math.sqrt(24.0 * L1 * g))


def sto_convex_alpha(L0, L1, rho, K, stats):
    _check_L(L0, L1)
    C1 = convex_C1(L1, rho)
    if C1 <= 0:
        raise InvalidRule(f"C1 = {C1:.6g} <= 0; L1 too large for rho = {rho}")
    gap = 1.0 - math.sqrt(rho)
    alpha_hat = min(gap / max(20.0 * L0, math.sqrt(24.0 * L0)), 1.0 / (4.0 * C1), 1.0 / math.sqrt(K))
    return min(alpha_hat, *sto_convex_clip_terms(L1, stats))


def sto_nonconvex_alpha(L0, L1, rho, sigma, K, stats):
    _check_L(L0, L1)
    gap = 1.0 - math.sqrt(rho)
    alpha_hat = min(_inv(36.0 * L1 * sigma), 1.0 / math.sqrt(K + 1))
    middle = 1.0 / (2.0 * (3.0 / (2.0 * gap**2) + 5.0 * L0 + 4.0 * L1 * stats.global_grad_norm))
    last = 1.0 / (L0 + L1 * stats.max_avg_grad_norm) ** 2
    return min(alpha_hat, middle, last)


class StepRule:
    """A step-size schedule; ``alpha(stats, k)`` returns the step at iteration k."""

    name = "abstract"
    stochastic = False

    def alpha(self, stats, k):
        raise NotImplementedError

    def params(self):
        return dict(self.__dict__)


@dataclass(frozen=True)
class DetClip(StepRule):
    L0: float
    L1: float
    name = "det_clip"

    def __post_init__(self):
        _check_L(self.L0, self.L1)

    def alpha(self, stats, k):
        return det_clip_alpha(self.L0, self.L1, stats)


@dataclass(frozen=True)
class StoConvex(StepRule):
    L0: float
    L1: float
    rho: float
    K: int
    name = "sto_convex"
    stochastic = True

    def __post_init__(self):
        _check_L(self.L0, self.L1)
        _check_rho_K(self.rho, self.K)
        C1 = convex_C1(self.L1, self.rho)
        if C1 <= 0:
            raise InvalidRule(f"C1 = {C1:.6g} <= 0; L1 too large for rho = {self.rho}")

    @property
    def C1(self):
        return convex_C1(self.L1, self.rho)

    def alpha(self, stats, k):
        return sto_convex_alpha(self.L0, self.L1, self.rho, self.K, stats)


@dataclass(frozen=True)
class StoNonconvex(StepRule):
    L0: float
    L1: float
    rho: float
    sigma: float
    K: int
    name = "sto_nonconvex"
    stochastic = True

    def __post_init__(self):
        _check_L(self.L0, self.L1)
        _check_rho_K(self.rho, self.K)
        if self.sigma < 0:
            raise InvalidRule("sigma must be nonnegative")

    def alpha(self, stats, k):
        return sto_nonconvex_alpha(self.L0, self.L1, self.rho, self.sigma, self.K, stats)


@dataclass(frozen=True)
class Constant(StepRule):
    alpha_value: float
    name = "constant"

    def __post_init__(self):
        if not self.alpha_value > 0:
            raise InvalidRule("constant step must be positive")

    def alpha(self, stats, k):
        return self.alpha_value


def _check_rho_K(rho, K):
    if not 0 <= rho < 1:
        raise InvalidRule(f"rho must lie in [0, 1), got {rho}")
    if K < 1:
        raise InvalidRule(f"K must be >= 1, got {K}")


def make_rule(name, **params):
    """Build a rule from its config name and keyword parameters."""
    if name == "det_clip":
        return DetClip(float(params["L0"]), float(params.get("L1", 0.0)))
    if name == "sto_convex":
        return StoConvex(float(params["L0"]), float(params.get("L1", 0.0)), float(params["rho"]), int(params["K"]))
    if name == "sto_nonconvex":
        return StoNonconvex(
            float(params["L0"]),
            float(params.get("L1", 0.0)),
            float(params["rho"]),
            float(params.get("sigma", 0.0)),
            int(params["K"]),
        )
    if name == "constant":
        return Constant(float(params["alpha"]))
    raise InvalidRule(f"unknown step rule {name!r}; expected one of {RULE_NAMES}")
