"""Per-packet phase sanitization: remove the common linear phase ramp.

STO and packet-detection delay add a phase ramp ``-2 pi f_delta k sigma``
across subcarriers that is shared by every tx/rx chain of a packet.  One
slope and one offset are fitted jointly over all chains by least squares on
the unwrapped phase, and the ramp is taken out.  Inter-chain phase at each
subcarrier (the angle information) is untouched.

Packets are arrays shaped ``(K, N, M_sub)``; traces add a leading packet axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


MAX_PASSES = 20
SLOPE_TOL_S = 1e-15


@dataclass(frozen=True)
class SanitizeReport:
    sigma: float  # seconds
    beta: float  # radians


def unwrap_subcarrier_phase(packet: np.ndarray, v: int, y: int) -> np.ndarray:
    return np.unwrap(np.angle(packet[v, y, :]))


def _fit(phase: np.ndarray, f_delta: float) -> tuple[float, float]:
    """Joint LS fit of ``phase[c, k] ~ -2 pi f_delta k sigma - beta``."""
    n_chain, m = phase.shape
    k = np.arange(m, dtype=float)
    k_mean = k.mean()
    kc = k - k_mean
    skk = n_chain * np.dot(kc, kc)
    slope = np.sum(phase * kc) / skk
    intercept = phase.mean() - slope * k_mean
    return -slope / (2.0 * np.pi * f_delta), -intercept


def fit_linear_offset(packet: np.ndarray, subcarrier_spacing_hz: float) -> SanitizeReport:
    packet = np.asarray(packet)
    if packet.ndim != 3:
        raise ValueError("packet must be shaped (K, N, M_sub)")
    if packet.shape[2] < 2:
        raise ValueError("need at least two subcarriers to fit a slope")
    phase = np.unwrap(np.angle(packet), axis=-1).reshape(-1, packet.shape[2])
    sigma, beta = _fit(phase, subcarrier_spacing_hz)
    return SanitizeReport(sigma=float(sigma), beta=float(beta))


def sanitize(packet: np.ndarray, subcarrier_spacing_hz: float) -> np.ndarray:
    """Return a copy of ``packet`` with the fitted delay ramp removed."""
    packet = np.asarray(packet)
    fit_linear_offset(packet, subcarrier_spacing_hz)  # shape checks
    return sanitize_trace(packet[None], subcarrier_spacing_hz)[0][0]


def _slopes(csi: np.ndarray, f_delta: float) -> np.ndarray:
    t, m = csi.shape[0], csi.shape[-1]
    phase = np.unwrap(np.angle(csi), axis=-1).reshape(t, -1, m)
    kc = np.arange(m) - (m - 1) / 2.0
    slope = np.einsum("tck,k->t", phase, kc) / (phase.shape[1] * np.dot(kc, kc))
    return -slope / (2.0 * np.pi * f_delta)


def sanitize_trace(csi: np.ndarray, subcarrier_spacing_hz: float) -> tuple[np.ndarray, np.ndarray]:
    """Sanitize every packet of a ``(T, K, N, M)`` array.

    Returns the cleaned array and the per-packet removed sigma.  Taking the
    ramp out can move where the unwrapped phase jumps, so the fit is repeated
    on the output until it finds no slope left.
    """
    csi = np.asarray(csi)
    if csi.ndim != 4:
        raise ValueError("trace must be shaped (T, K, N, M_sub)")
    t, _, _, m = csi.shape
    if t == 0:
        return csi.copy(), np.zeros(0)
    if m < 2:
        raise ValueError("need at least two subcarriers to fit a slope")
    k = np.arange(m, dtype=float)
    sigma = np.zeros(t)
    out = csi
    for _ in range(MAX_PASSES):
        step = _slopes(out, subcarrier_spacing_hz)
        if np.all(np.abs(step) <= SLOPE_TOL_S):
            break
        sigma += step
        out = csi * np.exp(2j * np.pi * subcarrier_spacing_hz * np.outer(sigma, k))[:, None, None, :]
    return out if out is not csi else csi.copy(), sigma
