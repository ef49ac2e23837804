"""Decentralized gradient descent under (L0, L1)-smoothness.

Simulator for clipped decentralized (stochastic) gradient descent over gossip
networks, with tools to check descent inequalities and complexity bounds on
the recorded trajectories.
"""

from .analysis import (
    BoundVerdict,
    NoiseStats,
    check_descent_lemma2,
    check_lemma3_regimes,
    check_lemma6,
    curvature_study,
    estimate_noise,
    verdict_corollary1,
    verdict_corollary2,
    verdict_theorem1,
    verdict_theorem2,
    verdict_theorem3,
    verdict_theorem4,
)
from .dataio import Dataset, Sample, Shard, parse_libsvm, serialize_libsvm, shard_uniform, synth_blobs
from .engine import RunConfig, Trajectory, reference_optimum, run_dgd, run_dsgd, run_ensemble
from .objectives import (
    DoubleWell,
    Exponential,
    Logistic,
    Quadratic,
    Quartic,
    StochasticOracle,
    certify_smoothness,
    fit_smoothness,
    hessian_norm,
)
from .stepsize import Constant, DetClip, GradStats, StoConvex, StoNonconvex, make_rule
from .topology import (
    Graph,
    MixingMatrix,
    build_graph,
    gossip,
    lazy_ring_weights,
    metropolis_weights,
    mixing_from_preset,
    spectral_stats,
    uniform_weights,
)

__version__ = "0.1.0"
