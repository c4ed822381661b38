"""SINR link-capacity model with analytic power gradients.

Capacity of link l in packets/s:

    c_l = (W / packet_bits) * log2(1 + SINR_l)
    SINR_l = p_l * G[l, l] / (noise + sum_k p_k * G[k, l])

where the interference sum runs over links k != l sharing l's band, p
is per-link transmit power in mW and G[k, l] is the path gain from link
k's transmitter to link l's receiver. Other-band transmitters
contribute nothing. Transmit power maps from the normalized gain knob
as p_mw = 10 ** (gain_db / 10) relative to a 1 mW reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LN2 = math.log(2.0)
DB_TO_LN = math.log(10.0) / 10.0  # d(p)/d(dB) = p * ln10/10


@dataclass(frozen=True)
class ChannelModel:
    path_loss_exponent: float = 3.0
    reference_gain: float = 1e-2   # gain at 1 m
    noise_floor_mw: float = 1e-7
    high_snr_approx: bool = False

    def __post_init__(self):
        if not (2.0 <= self.path_loss_exponent <= 6.0):
            raise ValueError("path loss exponent out of the supported range [2, 6]")
        if self.noise_floor_mw <= 0:
            raise ValueError("noise floor must be positive")

    def gain(self, distance_m: float) -> float:
        return self.reference_gain * max(distance_m, 1.0) ** (-self.path_loss_exponent)


def gain_db_to_mw(gain_db) -> float:
    return 10.0 ** (np.asarray(gain_db, dtype=float) / 10.0)


@dataclass(frozen=True)
class LinkLayout:
    """Static propagation geometry for a set of links.

    gains[k, l] is the path gain from link k's transmitter to link l's
    receiver; same_band[k, l] is True when the links share a spectrum
    band (diagonal True).
    """

    gains: np.ndarray
    same_band: np.ndarray
    channel: ChannelModel
    bandwidth_hz: float
    packet_bits: float

    @property
    def n_links(self) -> int:
        return self.gains.shape[0]

    @property
    def pps_scale(self) -> float:
        return self.bandwidth_hz / self.packet_bits


def make_layout(positions, links, bands, channel: ChannelModel,
                bandwidth_hz: float, packet_bits: float) -> LinkLayout:
    """positions: node id -> (x, y); links: [(tx, rx)]; bands: per link."""
    n = len(links)
    gains = np.zeros((n, n))
    same = np.zeros((n, n), dtype=bool)
    for k, (tx_k, _) in enumerate(links):
        for l, (_, rx_l) in enumerate(links):
            xk, yk = positions[tx_k]
            xl, yl = positions[rx_l]
            d = math.hypot(xk - xl, yk - yl)
            gains[k, l] = channel.gain(d)
            same[k, l] = bands[k] == bands[l]
    return LinkLayout(gains=gains, same_band=same, channel=channel,
                      bandwidth_hz=bandwidth_hz, packet_bits=packet_bits)


def interference_mw(layout: LinkLayout, powers_mw: np.ndarray, active=None) -> np.ndarray:
    """Aggregate same-band interference at each link's receiver (noise excluded).

    ``active`` scales each transmitter by its airtime share in [0, 1]
    (0 masks a silent link entirely).
    """
    p = np.asarray(powers_mw, dtype=float)
    if active is not None:
        p = p * np.asarray(active, dtype=float)
    mask = layout.same_band & ~np.eye(layout.n_links, dtype=bool)
    return (p[:, None] * layout.gains * mask).sum(axis=0)


def sinr(layout: LinkLayout, powers_mw: np.ndarray, active=None) -> np.ndarray:
    p = np.asarray(powers_mw, dtype=float)
    signal = p * np.diag(layout.gains)
    denom = layout.channel.noise_floor_mw + interference_mw(layout, p, active)
    return signal / denom


def capacities_pps(layout: LinkLayout, powers_mw: np.ndarray, active=None) -> np.ndarray:
    s = sinr(layout, powers_mw, active)
    if layout.channel.high_snr_approx:
        rate = np.log2(np.maximum(s, 1e-12))
        return layout.pps_scale * np.maximum(rate, 0.0)
    return layout.pps_scale * np.log2(1.0 + s)


def weighted_capacity(layout: LinkLayout, powers_mw: np.ndarray, weights) -> float:
    return float(np.dot(np.asarray(weights, dtype=float), capacities_pps(layout, powers_mw)))


def weighted_capacity_grad_mw(layout: LinkLayout, powers_mw: np.ndarray, weights) -> np.ndarray:
    """d/dp_m of sum_l w_l c_l(p), in (packets/s) per mW.

    Own-link term raises capacity; same-band victim terms lower it.
    With the high-SNR approximation a link below unit SINR contributes
    no gradient (its capacity is clamped at zero).
    """
    p = np.asarray(powers_mw, dtype=float)
    w = np.asarray(weights, dtype=float)
    n = layout.n_links
    G = layout.gains
    diag = np.diag(G)
    denom = layout.channel.noise_floor_mw + interference_mw(layout, p)
    s = p * diag / denom
    scale = layout.pps_scale / LN2

    if layout.channel.high_snr_approx:
        active = s > 1.0
        own = np.where(active & (p > 0), scale * w / np.maximum(p, 1e-300), 0.0)
        victim_coeff = np.where(active, scale * w / denom, 0.0)
    else:
        own = scale * w / (1.0 + s) * diag / denom
        victim_coeff = scale * w / (1.0 + s) * s / denom

    grad = own.copy()
    mask = layout.same_band & ~np.eye(n, dtype=bool)
    # d sinr_l / d p_m = -s_l * G[m, l] / denom_l for same-band m != l
    grad -= (mask * G * victim_coeff[None, :]).sum(axis=1)
    return grad


def weighted_capacity_grad_db(layout: LinkLayout, gain_db, weights) -> np.ndarray:
    """Gradient in the normalized dB knob domain."""
    p = gain_db_to_mw(gain_db)
    return weighted_capacity_grad_mw(layout, p, weights) * p * DB_TO_LN


def grad_components_db(layout: LinkLayout, gain_db, weights, active=None,
                       surrogate: bool = False) -> np.ndarray:
    """Per-source breakdown M[k, l] = d(w_l c_l) / d gain_db(k).

    Column l holds what link l's receiver can compute from local
    measurements (own SINR, per-interferer received power); summing a
    row over l gives the full dB-domain gradient for knob k. Every
    quantity involved is observable at the receiver of link l. Silent
    transmitters (``active`` false) produce no victim terms.

    With ``surrogate`` the slopes are taken from the log-linear
    rate-versus-SINR surrogate log2(SINR): the own-link slope stays
    constant as the link degrades, which lets a congestion-priced link
    recover power instead of being captured by stronger neighbors. The
    objective landscape is concave in the dB domain under the surrogate.
    """
    p = gain_db_to_mw(gain_db)
    w = np.asarray(weights, dtype=float)
    n = layout.n_links
    G = layout.gains
    denom = layout.channel.noise_floor_mw + interference_mw(layout, p, active)
    s = p * np.diag(G) / denom
    scale = layout.pps_scale / LN2 * DB_TO_LN
    if surrogate:
        sens = w
    elif layout.channel.high_snr_approx:
        sens = np.where(s > 1.0, w, 0.0)
    else:
        sens = w * s / (1.0 + s)   # lambda_l * S_l / (1 + S_l) prefactor
    mask = layout.same_band & ~np.eye(n, dtype=bool)
    p_air = p if active is None else p * np.asarray(active, dtype=float)
    M = -scale * mask * (p_air[:, None] * G) * (sens / denom)[None, :]
    np.fill_diagonal(M, scale * sens)
    return M
