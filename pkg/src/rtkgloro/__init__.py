"""Relaxed top-K and affinity robustness certification for min-max networks."""

from .certify import (
    AffinityCollection,
    CertificationRefused,
    CertificationResult,
    GuaranteeConfig,
    certified_radius,
    certify_batch,
    certify_point,
    margin_affinity,
    margin_mk,
    margin_rtk,
    margins_mkj,
)
from .lipschitz import LipschitzBounds, PowerState, pair_bounds, spectral_norm
from .netcore import Network, dense_network, forward, load_network, predict_topk, save_network

__version__ = "0.1.0"
