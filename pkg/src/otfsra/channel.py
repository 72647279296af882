"""LEO terrestrial-satellite multipath channels in the delay-Doppler-angle
domain, plus the per-device phase-compensation matrix."""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AmbiguityError, ContractError, DomainError, ShapeError
from .frame import OtfsGrid, TapIndex, quantize_taps


@dataclass(frozen=True)
class AntennaArray:
    """Uniform planar array with half-wavelength spacing."""

    n_y: int
    n_z: int

    def __post_init__(self):
        if self.n_y < 1 or self.n_z < 1:
            raise DomainError("antenna counts must be >= 1")

    @property
    def n_a(self) -> int:
        return self.n_y * self.n_z


@dataclass(frozen=True)
class ChannelConfig:
    """Sampling ranges for the multipath draw (defaults: S-band LEO link
    after downlink delay pre-compensation)."""

    delay_range_s: tuple = (0.0, 0.8e-6)
    doppler_range_hz: tuple = (-41e3, 41e3)
    n_nlos: int = 3
    rician_db: float = 5.0
    on_grid: bool = False   # snap Doppler and angles onto grid points


@dataclass(frozen=True)
class PathSet:
    """Multipath parameters of one device.  Index 0 is the LoS path."""

    device: int
    active: bool
    rician_k: float                  # linear
    gains: np.ndarray                # (P+1,) complex
    delays_s: np.ndarray             # (P+1,)
    dopplers_hz: np.ndarray          # (P+1,)
    omega_y: float                   # directional cosine, y axis
    omega_z: float                   # directional cosine, z axis
    taps: tuple = field(default=())  # TapIndex per path

    @property
    def n_paths(self) -> int:
        return len(self.gains)

    @property
    def elevation(self) -> float:
        return math.acos(self.omega_z)

    @property
    def azimuth(self) -> float:
        # Bookkeeping only: independent uniform cosines need not admit a
        # consistent (azimuth, elevation) pair, so the ratio is clipped.
        s = math.sin(self.elevation)
        if s < 1e-12:
            return 0.0
        return math.asin(min(1.0, max(-1.0, self.omega_y / s)))


def sample_paths(U, U_a, grid: OtfsGrid, array: AntennaArray,
                 config: ChannelConfig = ChannelConfig(), rng=None):
    """Draw multipath parameters for all U devices, U_a of them active.

    Delays are snapped to the sample grid and redrawn until every path of
    a device occupies a distinct delay tap (shared taps with different
    Doppler would leave the phase factor ambiguous).  Gains are
    power-normalised per device.
    """
    if not 0 <= U_a <= U:
        raise DomainError(f"need 0 <= U_a <= U, got U_a={U_a}, U={U}")
    rng = np.random.default_rng(rng)
    lo, hi = config.delay_range_s
    max_tap = int(round(hi / grid.T_s))
    if max_tap >= grid.M_tau:
        raise DomainError(
            f"delay range up to tap {max_tap} does not fit the pilot "
            f"window M_tau={grid.M_tau}")
    n_paths = config.n_nlos + 1
    if n_paths > max_tap + 1:
        raise DomainError("fewer distinct delay taps than paths")
    kappa = 10.0 ** (config.rician_db / 10.0)

    active = np.zeros(U, dtype=bool)
    active[rng.choice(U, size=U_a, replace=False)] = True

    out = []
    for u in range(U):
        while True:
            delays = rng.uniform(lo, hi, size=n_paths)
            taps_l = np.round(delays / grid.T_s).astype(int)
            if len(set(taps_l.tolist())) == n_paths:
                break
        delays = taps_l * grid.T_s

        dopplers = rng.uniform(*config.doppler_range_hz, size=n_paths)
        if config.on_grid:
            dopplers = np.round(dopplers * grid.N * grid.T_sym) / (grid.N * grid.T_sym)

        gains = np.empty(n_paths, dtype=np.complex128)
        gains[0] = math.sqrt(kappa / (kappa + 1.0)) * np.exp(2j * np.pi * rng.random())
        nlos = rng.standard_normal(config.n_nlos) + 1j * rng.standard_normal(config.n_nlos)
        nlos /= np.linalg.norm(nlos)
        gains[1:] = math.sqrt(1.0 / (kappa + 1.0)) * nlos

        if config.on_grid:
            ay = rng.integers(-(array.n_y // 2), (array.n_y + 1) // 2)
            az = rng.integers(-(array.n_z // 2), (array.n_z + 1) // 2)
            omega_y = 2.0 * ay / array.n_y
            omega_z = 2.0 * az / array.n_z
        else:
            omega_y = rng.uniform(-1.0, 1.0)
            omega_z = rng.uniform(-1.0, 1.0)

        taps = tuple(quantize_taps(t, nu, grid) for t, nu in zip(delays, dopplers))
        out.append(PathSet(device=u, active=bool(active[u]), rician_k=kappa,
                           gains=gains, delays_s=delays, dopplers_hz=dopplers,
                           omega_y=omega_y, omega_z=omega_z, taps=taps))
    return out


def dds_channel(paths: PathSet, grid: OtfsGrid, array: AntennaArray) -> np.ndarray:
    """Delay-Doppler-space channel tensor of one device, shape
    (N, M_tau, n_y, n_z) with centred-Doppler row storage.

    Requires on-grid delays inside the pilot window (Dirac-on-grid
    model); Doppler and angles may be off-grid and produce leakage.
    """
    h = np.zeros((grid.N, grid.M_tau, array.n_y, array.n_z), dtype=np.complex128)
    j = np.arange(grid.N)
    ny = np.arange(array.n_y)
    nz = np.arange(array.n_z)
    steer_y = np.exp(1j * np.pi * ny * paths.omega_y)
    steer_z = np.exp(1j * np.pi * nz * paths.omega_z)
    spatial = np.outer(steer_y, steer_z)
    for gain, tau, nu in zip(paths.gains, paths.delays_s, paths.dopplers_hz):
        d = tau / grid.T_s
        l = int(round(d))
        if abs(d - l) > 1e-6:
            raise ContractError(f"delay {tau} is off the sample grid")
        if not 0 <= l < grid.M_tau:
            raise ContractError(f"delay tap {l} outside the pilot window")
        ramp = np.exp(2j * np.pi * (grid.M_cp + j * (grid.M + grid.M_cp) - l)
                      * grid.T_s * nu)
        f = np.fft.fftshift(np.fft.fft(ramp)) / grid.N
        h[:, l, :, :] += gain * f[:, None, None] * spatial[None, :, :]
    return h


def dda_channel(dds: np.ndarray) -> np.ndarray:
    """Delay-Doppler-angle tensor: unitary 2D DFT across the antenna axes."""
    dds = np.asarray(dds)
    if dds.ndim != 4:
        raise ShapeError("expected (N, M_tau, n_y, n_z)")
    n_a = dds.shape[2] * dds.shape[3]
    return np.fft.fft2(dds, axes=(2, 3)) / math.sqrt(n_a)


@dataclass
class ChannelMatrix:
    """Stacked channel matrix H (U*M_tau*N, n_y*n_z) with activity vector
    and a ground-truth support mask for inspection."""

    H: np.ndarray
    lam: np.ndarray
    S_true: np.ndarray

    @property
    def U(self) -> int:
        return len(self.lam)


def assemble_channel_matrix(dda_list, lam) -> ChannelMatrix:
    """Stack per-device DDA tensors into the channel matrix.

    Row of entry (k, l) of device u is ``k + N//2 + l*N + u*M_tau*N``;
    column of angle bin (a_y, a_z) is ``a_z + n_z*a_y``.  Rows of
    inactive devices are zeroed.
    """
    lam = np.asarray(lam, dtype=int)
    if len(dda_list) != len(lam):
        raise ShapeError("one DDA tensor per device required")
    blocks = []
    for dda, lam_u in zip(dda_list, lam):
        n, mt, ny, nz = dda.shape
        flat = dda.transpose(0, 1, 3, 2).reshape(n * mt, nz * ny, order="F")
        blocks.append(lam_u * flat)
    H = np.concatenate(blocks, axis=0)
    mag = np.abs(H)
    peak = mag.max() if mag.size else 0.0
    s_true = mag > 1e-3 * peak if peak > 0 else np.zeros_like(mag, dtype=bool)
    return ChannelMatrix(H=H, lam=lam, S_true=s_true)


def build_channel(paths_list, grid: OtfsGrid, array: AntennaArray) -> ChannelMatrix:
    """Convenience: DDS -> DDA -> stacked matrix for a device population."""
    ddas = [dda_channel(dds_channel(p, grid, array)) for p in paths_list]
    lam = np.array([int(p.active) for p in paths_list])
    return assemble_channel_matrix(ddas, lam)


def phase_matrix(paths_list, grid: OtfsGrid) -> np.ndarray:
    """Phase-compensation matrix Phi (M_tau*N, U*M_tau*N), unit-modulus.

    Column block at delay tap l' of device u carries
    ``exp(j*2*pi*(k_i + k_frac_i)*l / ((M+M_cp)*N))`` on row block l when
    l' hosts path i, and 1 elsewhere (residual-delay regime: all outer
    taps must vanish).
    """
    n_pilot = grid.n_pilot
    U = len(paths_list)
    phi = np.ones((n_pilot, U * n_pilot), dtype=np.complex128)
    l_rows = np.repeat(np.arange(grid.M_tau), grid.N)   # delay bin per row
    for u, paths in enumerate(paths_list):
        seen = {}
        for tap in paths.taps:
            if tap.b != 0 or tap.c != 0:
                raise DomainError(
                    "outer delay/Doppler taps are outside the residual-delay "
                    "regime supported by the phase matrix")
            nu_idx = tap.k + tap.k_frac
            if tap.l in seen and abs(seen[tap.l] - nu_idx) > 1e-12:
                raise AmbiguityError(
                    f"device {u}: delay tap {tap.l} carries two different "
                    "Doppler shifts")
            seen[tap.l] = nu_idx
            if tap.l >= grid.M_tau:
                raise DomainError(f"delay tap {tap.l} outside pilot window")
            col0 = u * n_pilot + tap.l * grid.N
            phase = np.exp(2j * np.pi * nu_idx * l_rows
                           / ((grid.M + grid.M_cp) * grid.N))
            phi[:, col0:col0 + grid.N] = phase[:, None]
    return phi


def all_ones_phase(U: int, grid: OtfsGrid) -> np.ndarray:
    """The all-ones approximation of the phase matrix."""
    return np.ones((grid.n_pilot, U * grid.n_pilot), dtype=np.complex128)


class PhasedPilotOperator:
    """Sensing operator (Phi .* X) without materialising either factor.

    Phi deviates from all-ones only on the column blocks holding a path's
    delay tap, where it is constant along Doppler, so the product splits
    into the plain doubly circulant operator plus one rank-structured
    correction per (device, tap).  Since |Phi| = 1 the squared-magnitude
    products coincide with the base operator's.
    """

    def __init__(self, base, paths_list, grid: OtfsGrid):
        if len(paths_list) != base.U:
            raise ShapeError("one path set per device required")
        self.base = base
        self.grid = grid
        self.U, self.N, self.M_tau = base.U, base.N, base.M_tau
        kern = np.roll(base.pilots, -(self.N // 2), axis=1)
        l_rows = np.arange(grid.M_tau)
        corrections = []
        for u, paths in enumerate(paths_list):
            seen = {}
            for tap in paths.taps:
                if tap.b != 0 or tap.c != 0:
                    raise DomainError("outer taps outside the residual regime")
                nu_idx = tap.k + tap.k_frac
                if tap.l in seen:
                    if abs(seen[tap.l] - nu_idx) > 1e-12:
                        raise AmbiguityError(
                            f"device {u}: delay tap {tap.l} carries two "
                            "different Doppler shifts")
                    continue
                seen[tap.l] = nu_idx
                phase_l = np.exp(2j * np.pi * nu_idx * l_rows
                                 / ((grid.M + grid.M_cp) * grid.N))
                fk = np.fft.fft(np.roll(kern[u], tap.l, axis=1), axis=0)
                corrections.append((u, tap.l, phase_l - 1.0, fk))
        self._corr = corrections
        self._dense = self.to_dense() if getattr(base, "_prefer_dense", False) \
            else None

    @property
    def dim_out(self) -> int:
        return self.base.dim_out

    @property
    def dim_in(self) -> int:
        return self.base.dim_in

    @property
    def shape(self):
        return self.base.shape

    @property
    def pilots(self):
        return self.base.pilots

    def matmat(self, h):
        if self._dense is not None:
            return self._dense @ h
        h = np.asarray(h)
        single = h.ndim == 1
        H = h[:, None] if single else h
        y = self.base.matmat(H)
        n, mt, np_ = self.N, self.M_tau, self.N * self.M_tau
        for u, l_tap, dphase, fk in self._corr:
            hb = H[u * np_ + l_tap * n: u * np_ + (l_tap + 1) * n, :]
            contrib = np.fft.ifft(fk[:, :, None] * np.fft.fft(hb, axis=0)[:, None, :],
                                  axis=0)
            y += (dphase[None, :, None] * contrib).reshape(np_, -1, order="F")
        return y[:, 0] if single else y

    def rmatmat(self, y):
        if self._dense is not None:
            return self._dense.conj().T @ y
        y = np.asarray(y)
        single = y.ndim == 1
        Y = y[:, None] if single else y
        g = self.base.rmatmat(Y)
        n, mt, np_ = self.N, self.M_tau, self.N * self.M_tau
        grids = Y.reshape(n, mt, -1, order="F")
        for u, l_tap, dphase, fk in self._corr:
            w = np.conj(dphase)[None, :, None] * grids
            # correlation over Doppler, then pick the tap's delay column
            corr = np.fft.ifft(np.conj(fk)[:, :, None] * np.fft.fft(w, axis=0),
                               axis=0).sum(axis=1)
            g[u * np_ + l_tap * n: u * np_ + (l_tap + 1) * n, :] += corr
        return g[:, 0] if single else g

    def abs2_matmat(self, v):
        return self.base.abs2_matmat(v)

    def abs2_rmatmat(self, v):
        return self.base.abs2_rmatmat(v)

    def to_dense(self) -> np.ndarray:
        phi = np.ones((self.dim_out, self.dim_in), dtype=np.complex128)
        n, np_ = self.N, self.N * self.M_tau
        for u, l_tap, dphase, _ in self._corr:
            col0 = u * np_ + l_tap * n
            phi[:, col0:col0 + n] = np.repeat(1.0 + dphase, n)[:, None]
        return phi * self.base.to_dense()


def phased_pilot_operator(base, paths_list, grid: OtfsGrid) -> PhasedPilotOperator:
    """Wrap a pilot operator with the exact per-tap phase factors."""
    return PhasedPilotOperator(base, paths_list, grid)
