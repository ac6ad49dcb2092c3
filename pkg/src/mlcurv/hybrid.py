"""Hybrid mean-curvature solver: baseline numerics with neural error correction."""
import logging
from dataclasses import dataclass

import numpy as np

from . import preprocess
from .levelset import interface_geometry
from .neuralnet import check_fingerprint, forward
from .packets import N_FEATURES, DataPacket, generate_std_packets, negative_normalize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverParams:
    hk_min_low: float = 0.004
    hk_min_up: float = 0.007
    h2kg_ns_min: float = -7e-6

    def __post_init__(self):
        if not 0 < self.hk_min_low < self.hk_min_up:
            raise ValueError("need 0 < hk_min_low < hk_min_up")
        if not self.h2kg_ns_min < 0:
            raise ValueError("the non-saddle threshold must be negative")


@dataclass
class Corrector:
    """A trained network with the preprocessing statistics it was fitted against."""

    model: object
    stats: object

    def __post_init__(self):
        check_fingerprint(self.model, self.stats)

    def predict(self, features, h):
        """Corrected hk_F for standard-formed feature rows (..., 110)."""
        f = np.asarray(features, dtype=np.float64)
        lead = f.shape[:-1]
        r, hk = preprocess.apply(self.stats, f.reshape(-1, N_FEATURES), h)
        return forward(self.model, r.astype(np.float32), hk.astype(np.float32)).reshape(lead)


def six_form_mean(corrector, packets, h):
    """Average of the corrector over each packet's six standard forms (f64 accumulation)."""
    std = generate_std_packets(packets)
    pred = corrector.predict(std.features(), h).astype(np.float64)
    return pred.sum(axis=1) / 6.0


def ml_curvature(phi, normals, hk, h2kg, h, ns, sd, params=None):
    """hk* per node from stencil data (m, 27), (m, 27, 3) and interpolated hk, h2kg.

    Returns (hk_star, saddle, early) where ``early`` marks non-saddle nodes
    left at the baseline because |hk| is below hk_min_low.
    """
    params = params or SolverParams()
    phi = np.atleast_2d(np.asarray(phi, dtype=np.float64))
    normals = np.asarray(normals, dtype=np.float64).reshape(phi.shape[0], 27, 3)
    hk = np.atleast_1d(np.asarray(hk, dtype=np.float64))
    h2kg = np.atleast_1d(np.asarray(h2kg, dtype=np.float64))
    out = hk.copy()
    non_saddle = h2kg >= params.h2kg_ns_min
    early = non_saddle & (np.abs(hk) < params.hk_min_low)
    nsr = np.flatnonzero(non_saddle & ~early)
    if nsr.size:
        p = negative_normalize(DataPacket(phi[nsr], normals[nsr], hk[nsr], h2kg[nsr]))
        hkf = six_form_mean(ns, p, h)
        a = np.abs(hk[nsr])
        lam = (params.hk_min_up - np.abs(p.hk)) / (params.hk_min_up - params.hk_min_low)
        blend = a <= params.hk_min_up
        hkf = np.where(blend, (1.0 - lam) * hkf + lam * p.hk, hkf)
        out[nsr] = np.sign(hk[nsr]) * np.abs(hkf)
    sdr = np.flatnonzero(~non_saddle)
    if sdr.size:
        p = DataPacket(phi[sdr], normals[sdr], hk[sdr], h2kg[sdr])
        out[sdr] = six_form_mean(sd, p, h)
    return out, ~non_saddle, early


@dataclass
class InterfaceResult:
    rows: np.ndarray
    x: np.ndarray
    hk: np.ndarray
    hk_star: np.ndarray
    h2kg: np.ndarray
    saddle: np.ndarray
    early: np.ndarray
    fallback: np.ndarray


def solve_interface(grid, phi, ns, sd, params=None, rows=None):
    """Hybrid hk* at every interface node with a complete stencil, in row order."""
    geo = interface_geometry(grid, phi, rows)
    use = np.flatnonzero(geo.ok)
    skipped = geo.rows.size - use.size
    if skipped:
        log.info("%d interface nodes lack a complete stencil or normals; left out", skipped)
    if geo.fallback.any():
        log.info("%d nodes use nodal curvature (projection left the band)", int(geo.fallback.sum()))
    hk_star, saddle, early = ml_curvature(geo.phi[use], geo.normals[use], geo.hk[use], geo.h2kg[use],
                                          grid.h, ns, sd, params)
    return InterfaceResult(geo.rows[use], geo.x[use], geo.hk[use], hk_star, geo.h2kg[use], saddle, early,
                           geo.fallback[use])
