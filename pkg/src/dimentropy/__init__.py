"""Dimensional preimage entropy, Lyapunov spectra and graph transforms.

Quick start::

    from dimentropy import get_system, estimate_htop
    est = estimate_htop(get_system("doubling"), [0.2, 0.1], [2, 4, 6, 8])
    est.extrapolated   # close to log 2
"""

from .cocycle import (
    LyapunovSpectrum,
    OrbitSegment,
    is_tempered,
    lyapunov_qr,
    normalized_local_map,
    oseledets_frames,
    sample_orbit,
    temper_sequence,
)
from .config import RunConfig, parse_config, serialize_config
from .entropy import (
    EntropyEstimate,
    SeparatedFamily,
    enumerate_preimage_graphs,
    estimate_dimensional_entropy,
    estimate_htop,
    estimate_metric_entropy,
    estimate_pointwise_preimage_entropy,
    greedy_separated,
)
from .estimators import EntropyEstimator, LyapunovEstimator
from .exceptions import *  # noqa: F401,F403
from .graphs import (
    GraphPatch,
    check_local_injectivity,
    extend_graph,
    graph_transform,
    graph_volume,
    make_patch,
    pullback_graph,
    pushforward_volume,
    slice_graph,
)
from .systems import REGISTRY_NAMES, MapSystem, get_system
from .verify import (
    ExperimentReport,
    check_monotonicity,
    check_prop_equality,
    check_theorem_inequality,
    proof_pipeline,
)

__version__ = "0.1.0"
