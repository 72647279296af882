"""Received-pilot synthesis and independent SISO references.

``simulate`` produces the matrix observation Y = (Phi .* X) H + Z used by
the estimators.  ``siso_time_domain`` runs the discrete-time OFDM chain at
sample rate (ISFFT, CP insertion, per-sample delay/Doppler channel, CP
removal, SFFT) and serves as the oracle for the closed-form delay-Doppler
relation evaluated by ``siso_delay_doppler``.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError, DomainError, ShapeError
from .frame import OtfsGrid, isfft, quantize_taps, sfft


@dataclass
class Observation:
    """Received pilots with the noise level they were generated at."""

    y: np.ndarray                  # (M_tau*N, n_y*n_z)
    theta: float                   # noise precision; inf when noise-free
    snr_db: Optional[float] = None


def theta_for_snr(snr_db: float, grid: OtfsGrid) -> float:
    """Noise precision for a target SNR, defined as 10*log10(theta/(M*N))."""
    return grid.M * grid.N * 10.0 ** (snr_db / 10.0)


def snr_for_theta(theta: float, grid: OtfsGrid) -> float:
    return 10.0 * math.log10(theta / (grid.M * grid.N))


def awgn(shape, theta: float, rng=None) -> np.ndarray:
    """i.i.d. circularly symmetric complex Gaussian noise CN(0, 1/theta)."""
    if theta <= 0:
        raise DomainError(f"noise precision must be positive, got {theta}")
    rng = np.random.default_rng(rng)
    sigma = math.sqrt(0.5 / theta)
    return sigma * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def simulate(X, H: np.ndarray, theta=None, rng=None, phase=None,
             grid: Optional[OtfsGrid] = None) -> Observation:
    """Generate Y = (Phi .* X) H + Z.

    ``theta=None`` selects noise-free operation.  ``phase=None`` uses the
    all-ones approximation (Y = X H + Z); otherwise ``phase`` must have
    the dense sensing-matrix shape and the product is formed explicitly.
    """
    H = np.asarray(H)
    if H.shape[0] != X.dim_in:
        raise ShapeError(f"H has {H.shape[0]} rows, operator expects {X.dim_in}")
    if phase is None:
        y0 = X.matmat(H)
    else:
        phase = np.asarray(phase)
        if phase.shape != (X.dim_out, X.dim_in):
            raise ShapeError("phase matrix shape mismatch")
        y0 = (phase * X.to_dense()) @ H
    if theta is None:
        return Observation(y=y0, theta=math.inf,
                           snr_db=math.inf if grid else None)
    if theta <= 0:
        raise DomainError(f"noise precision must be positive, got {theta}")
    y = y0 + awgn(y0.shape, theta, rng)
    return Observation(y=y, theta=theta,
                       snr_db=snr_for_theta(theta, grid) if grid else None)


# ---------------------------------------------------------------------------
# SISO references
# ---------------------------------------------------------------------------

def _check_paths(gains, delays_s, dopplers_hz, grid):
    gains = np.atleast_1d(np.asarray(gains, dtype=np.complex128))
    delays = np.atleast_1d(np.asarray(delays_s, dtype=float))
    dopplers = np.atleast_1d(np.asarray(dopplers_hz, dtype=float))
    if not (len(gains) == len(delays) == len(dopplers)):
        raise ShapeError("gains, delays and Dopplers must have equal length")
    taps = np.round(delays / grid.T_s).astype(int)
    if np.any(np.abs(delays / grid.T_s - taps) > 1e-6):
        raise ContractError("delays must lie on the sample grid")
    if np.any(taps < 0):
        raise DomainError("negative delay")
    if np.any(taps > grid.M_cp):
        raise ContractError(
            "path delay exceeds the CP length: inter-symbol interference "
            "regime is outside the model")
    return gains, delays, dopplers, taps


def siso_time_domain(x_dd: np.ndarray, gains, delays_s, dopplers_hz,
                     grid: OtfsGrid) -> np.ndarray:
    """Noise-free SISO link simulated sample-by-sample.

    ISFFT -> per-symbol IDFT with CP insertion at rate 1/T_s -> per-sample
    delay and Doppler phase ramp per path -> CP removal, DFT, SFFT.
    """
    x_dd = np.asarray(x_dd, dtype=np.complex128)
    if x_dd.shape != (grid.N, grid.M):
        raise ShapeError(f"expected ({grid.N}, {grid.M}) delay-Doppler grid")
    gains, delays, dopplers, taps = _check_paths(gains, delays_s, dopplers_hz, grid)

    m_sym = grid.M + grid.M_cp
    sqrt_t = math.sqrt(grid.T)

    tf = isfft(x_dd)                                     # (N, M), rows = symbols
    base = grid.M * np.fft.ifft(tf, axis=1)              # sum_m X e^{j2pi m q/M}
    idx = (np.arange(m_sym) - grid.M_cp) % grid.M        # CP replicates the tail
    s = (base[:, idx] / sqrt_t).reshape(-1)              # serialised frame

    n_samp = grid.N * m_sym
    rho = np.arange(n_samp)
    r = np.zeros(n_samp, dtype=np.complex128)
    for gain, nu, d in zip(gains, dopplers, taps):
        shifted = np.zeros(n_samp, dtype=np.complex128)
        shifted[d:] = s[:n_samp - d]
        r += gain * shifted * np.exp(2j * np.pi * nu * grid.T_s * (rho - d))

    blocks = r.reshape(grid.N, m_sym)[:, grid.M_cp:]     # CP removal
    y_tf = (grid.T_s / sqrt_t) * np.fft.fft(blocks, axis=1)
    return sfft(y_tf)


def siso_delay_doppler(x_dd: np.ndarray, gains, delays_s, dopplers_hz,
                       grid: OtfsGrid) -> np.ndarray:
    """Direct evaluation of the delay-Doppler input-output relation: the
    2-D twisted convolution of the transmitted grid with the per-tap
    channel response, including the outer-tap phase factors."""
    x_dd = np.asarray(x_dd, dtype=np.complex128)
    if x_dd.shape != (grid.N, grid.M):
        raise ShapeError(f"expected ({grid.N}, {grid.M}) delay-Doppler grid")
    gains, delays, dopplers, _ = _check_paths(gains, delays_s, dopplers_hz, grid)

    seen_l = {}
    x_kern = np.roll(x_dd, -(grid.N // 2), axis=0)
    j = np.arange(grid.N)
    ls = np.arange(grid.M)
    y = np.zeros_like(x_dd)
    for gain, tau, nu in zip(gains, delays, dopplers):
        tap = quantize_taps(tau, nu, grid)
        key = tap.k + tap.k_frac + tap.b * grid.N
        if tap.l in seen_l and abs(seen_l[tap.l] - key) > 1e-12:
            raise ContractError(
                f"two paths share delay tap {tap.l} with different Doppler; "
                "the per-tap phase factor is undefined")
        seen_l[tap.l] = key
        ramp = gain * np.exp(2j * np.pi * (grid.M_cp + j * (grid.M + grid.M_cp)
                                           - tap.l) * grid.T_s * nu)
        hvec = np.fft.fftshift(np.fft.fft(ramp)) / grid.N   # centred-row profile
        kern = np.fft.fft(np.roll(x_kern, tap.l, axis=1), axis=0)
        conv = np.fft.ifft(kern * np.fft.fft(hvec)[:, None], axis=0)
        phase = np.exp(2j * np.pi * key * (ls - tap.c * grid.M)
                       / ((grid.M + grid.M_cp) * grid.N))
        y += phase[None, :] * conv
    return y
