"""OTFS frame geometry, delay-Doppler transforms, tap quantization, and
the doubly circulant pilot operator.

Conventions
-----------
Delay-Doppler grids are stored as ``(N, L)`` complex arrays indexed
``[r, l]`` where ``r = k + floor(N/2)`` maps the centred Doppler index
``k in [ceil(-N/2), ceil(N/2)-1]`` to a 0-based row and ``l`` is the delay
bin.  Vectorisation of a grid is column-major (Doppler fastest), so entry
``(r, l)`` of device ``u`` lands at flat index ``r + N*l + N*L*u``.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError


@dataclass(frozen=True)
class OtfsGrid:
    """Frame geometry and timing.

    Parameters
    ----------
    M : int
        Number of delay bins (subcarriers).
    N : int
        Number of Doppler bins (symbols per frame).
    M_cp : int
        Cyclic-prefix length in samples.
    delta_f : float
        Subcarrier spacing in Hz.
    M_tau : int
        Pilot length along the delay axis (bins).  The pilot Doppler
        length is always ``N``.
    """

    M: int
    N: int
    M_cp: int
    delta_f: float
    M_tau: int

    def __post_init__(self):
        if min(self.M, self.N, self.M_cp, self.M_tau) < 1:
            raise DomainError("M, N, M_cp and M_tau must all be >= 1")
        if self.M_tau > self.M:
            raise DomainError(f"M_tau={self.M_tau} exceeds M={self.M}")
        if self.delta_f <= 0:
            raise DomainError("subcarrier spacing must be positive")

    @property
    def T_s(self) -> float:
        """Sample interval, 1/(M*delta_f)."""
        return 1.0 / (self.M * self.delta_f)

    @property
    def T(self) -> float:
        """Symbol duration without CP, M*T_s = 1/delta_f."""
        return self.M * self.T_s

    @property
    def T_sym(self) -> float:
        """Full symbol duration including CP, (M+M_cp)*T_s."""
        return (self.M + self.M_cp) * self.T_s

    @property
    def T_cp(self) -> float:
        return self.M_cp * self.T_s

    @property
    def N_nu(self) -> int:
        """Pilot length along the Doppler axis (all Doppler bins)."""
        return self.N

    @property
    def n_pilot(self) -> int:
        """Number of pilot resource elements, M_tau*N."""
        return self.M_tau * self.N

    @property
    def overhead(self) -> float:
        """Pilot fraction of the frame, M_tau*N_nu/(M*N)."""
        return self.M_tau * self.N_nu / (self.M * self.N)


def centered_doppler_bins(N: int) -> np.ndarray:
    """Centred Doppler indices k for stored rows 0..N-1."""
    return np.arange(N) - N // 2


def centered_mod(x, N: int):
    """Reduce x into the centred range [ceil(-N/2), ceil(N/2)-1]."""
    half = N // 2
    return (np.asarray(x) + half) % N - half


@dataclass(frozen=True)
class TapIndex:
    """Quantized delay/Doppler tap of one propagation path."""

    l: int       # delay bin in [0, M-1]
    c: int       # outer delay (whole symbol durations)
    k: int       # integer Doppler bin, centred range
    k_frac: float  # fractional Doppler in (-1/2, 1/2]
    b: int       # outer Doppler (whole subcarrier spacings)

    def delay_s(self, grid: OtfsGrid) -> float:
        return (self.l + self.c * grid.M) * grid.T_s

    def doppler_hz(self, grid: OtfsGrid) -> float:
        return (self.k + self.k_frac + self.b * grid.N) / (grid.N * grid.T_sym)


def quantize_taps(tau_s: float, doppler_hz: float, grid: OtfsGrid) -> TapIndex:
    """Split a physical (delay, Doppler) pair into grid taps.

    Delays are assumed on the sample grid; the Doppler index is rounded
    half-up so the fractional part lies in (-1/2, 1/2].
    """
    if tau_s < 0:
        raise DomainError(f"delay must be nonnegative, got {tau_s}")
    d = int(round(tau_s / grid.T_s))
    l = d % grid.M
    c = d // grid.M

    x = doppler_hz * grid.N * grid.T_sym
    n = math.ceil(x - 0.5)          # nearest integer, half rounds up
    k_frac = x - n
    k = int(centered_mod(n, grid.N))
    b = (n - k) // grid.N
    return TapIndex(l=l, c=c, k=k, k_frac=k_frac, b=b)


# ---------------------------------------------------------------------------
# ISFFT / SFFT
# ---------------------------------------------------------------------------

def isfft(dd: np.ndarray) -> np.ndarray:
    """Delay-Doppler grid -> time-frequency grid (unitary).

    X_tf[n, m] = (MN)^{-1/2} sum_{k,l} X_dd[k, l] exp(-j2pi(ml/M - nk/N))
    with the Doppler sum over the centred index range.
    """
    dd = np.asarray(dd, dtype=np.complex128)
    if dd.ndim != 2:
        raise ShapeError("expected a 2-D delay-Doppler grid")
    n, m = dd.shape
    z = np.fft.ifftshift(dd, axes=0)            # rows now plain 0..N-1 Doppler
    tf = np.fft.ifft(z, axis=0) * n             # sum_k x e^{+j2pi nk/N}
    tf = np.fft.fft(tf, axis=1)                 # sum_l x e^{-j2pi ml/M}
    return tf / math.sqrt(n * m)


def sfft(tf: np.ndarray) -> np.ndarray:
    """Time-frequency grid -> delay-Doppler grid; inverse of :func:`isfft`."""
    tf = np.asarray(tf, dtype=np.complex128)
    if tf.ndim != 2:
        raise ShapeError("expected a 2-D time-frequency grid")
    n, m = tf.shape
    dd = np.fft.fft(tf, axis=0)                 # sum_n y e^{-j2pi nk/N}
    dd = np.fft.ifft(dd, axis=1) * m            # sum_m y e^{+j2pi ml/M}
    dd = np.fft.fftshift(dd, axes=0)            # back to centred storage
    return dd / math.sqrt(n * m)


def isfft_direct(dd: np.ndarray) -> np.ndarray:
    """Literal double-sum ISFFT, kept as the testing reference."""
    dd = np.asarray(dd, dtype=np.complex128)
    n, m = dd.shape
    ks = centered_doppler_bins(n)
    tf = np.zeros((n, m), dtype=np.complex128)
    for nn in range(n):
        for mm in range(m):
            acc = 0.0 + 0.0j
            for ri, k in enumerate(ks):
                for l in range(m):
                    acc += dd[ri, l] * np.exp(-2j * np.pi * (mm * l / m - nn * k / n))
            tf[nn, mm] = acc
    return tf / math.sqrt(n * m)


def sfft_direct(tf: np.ndarray) -> np.ndarray:
    """Literal double-sum SFFT, kept as the testing reference."""
    tf = np.asarray(tf, dtype=np.complex128)
    n, m = tf.shape
    ks = centered_doppler_bins(n)
    dd = np.zeros((n, m), dtype=np.complex128)
    for ri, k in enumerate(ks):
        for l in range(m):
            acc = 0.0 + 0.0j
            for nn in range(n):
                for mm in range(m):
                    acc += tf[nn, mm] * np.exp(2j * np.pi * (mm * l / m - nn * k / n))
            dd[ri, l] = acc
    return dd / math.sqrt(n * m)


# ---------------------------------------------------------------------------
# pilots
# ---------------------------------------------------------------------------

def generate_pilots(u: int, grid: OtfsGrid, seed: int) -> np.ndarray:
    """Pilot grid of device ``u``: i.i.d. CN(0, 1/(M_tau*N)) entries on an
    (N, M_tau) delay-Doppler grid, deterministic given (seed, u)."""
    rng = np.random.default_rng([seed, u])
    scale = math.sqrt(0.5 / grid.n_pilot)
    shape = (grid.N, grid.M_tau)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


class PilotOperator:
    """Doubly circulant pilot matrix X = [X_0, ..., X_{U-1}].

    Each device block satisfies
    ``X_u[(k,l), (k',l')] = P_u[<k-k'>_N, (l-l')_{M_tau}]`` where ``P_u``
    is the device's pilot grid, so products with X and X^H are 2-D
    circular convolutions evaluated with FFTs; the dense matrix is never
    formed unless :meth:`to_dense` is called.
    """

    # below this many dense entries, cached BLAS products beat the FFT path
    DENSE_LIMIT = 4_000_000

    def __init__(self, pilots: np.ndarray, prefer_dense=None):
        pilots = np.asarray(pilots, dtype=np.complex128)
        if pilots.ndim != 3:
            raise ShapeError("pilots must be (U, N, M_tau)")
        self.U, self.N, self.M_tau = pilots.shape
        self.pilots = pilots
        # kernel with the centred-Doppler offset folded in:
        # kern[s, l] = P[(s + N//2) % N, l]
        kern = np.roll(pilots, -(self.N // 2), axis=1)
        self._fk = np.fft.fft2(kern, axes=(1, 2))
        self._fk2 = np.fft.fft2(np.abs(kern) ** 2, axes=(1, 2))
        if prefer_dense is None:
            prefer_dense = self.dim_out * self.dim_in <= self.DENSE_LIMIT
        self._prefer_dense = bool(prefer_dense)
        self._dense = None
        self._dense_abs2 = None

    def _cached_dense(self):
        if self._dense is None:
            self._dense = self.to_dense()
            self._dense_abs2 = np.abs(self._dense) ** 2
        return self._dense, self._dense_abs2

    @property
    def dim_out(self) -> int:
        return self.N * self.M_tau

    @property
    def dim_in(self) -> int:
        return self.U * self.N * self.M_tau

    @property
    def shape(self):
        return (self.dim_out, self.dim_in)

    # -- internal reshapes --------------------------------------------------

    def _grids_in(self, h):
        h = np.asarray(h)
        cols = 1 if h.ndim == 1 else h.shape[1]
        if h.shape[0] != self.dim_in:
            raise ShapeError(f"expected {self.dim_in} rows, got {h.shape[0]}")
        return h.reshape(self.N, self.M_tau, self.U, cols, order="F")

    def _grids_out(self, y):
        y = np.asarray(y)
        cols = 1 if y.ndim == 1 else y.shape[1]
        if y.shape[0] != self.dim_out:
            raise ShapeError(f"expected {self.dim_out} rows, got {y.shape[0]}")
        return y.reshape(self.N, self.M_tau, cols, order="F")

    @staticmethod
    def _restore(out, like):
        return out[:, 0] if like.ndim == 1 else out

    # -- products -----------------------------------------------------------

    def matmat(self, h: np.ndarray) -> np.ndarray:
        """y = X h for a vector or a matrix of column vectors."""
        if self._prefer_dense:
            return self._cached_dense()[0] @ h
        g = self._grids_in(h)                       # (N, M_tau, U, cols)
        fh = np.fft.fft2(g, axes=(0, 1))
        acc = np.einsum("unm,nmuc->nmc", self._fk, fh)
        out = np.fft.ifft2(acc, axes=(0, 1)).reshape(self.dim_out, -1, order="F")
        return self._restore(out, np.asarray(h))

    def rmatmat(self, y: np.ndarray) -> np.ndarray:
        """X^H y."""
        if self._prefer_dense:
            return self._cached_dense()[0].conj().T @ y
        g = self._grids_out(y)                      # (N, M_tau, cols)
        fy = np.fft.fft2(g, axes=(0, 1))
        prod = np.conj(self._fk)[:, :, :, None].transpose(1, 2, 0, 3) * fy[:, :, None, :]
        out = np.fft.ifft2(prod, axes=(0, 1)).reshape(self.dim_in, -1, order="F")
        return self._restore(out, np.asarray(y))

    def abs2_matmat(self, v: np.ndarray) -> np.ndarray:
        """|X|^2 v (elementwise squared magnitudes), for real v."""
        if self._prefer_dense:
            return self._cached_dense()[1] @ v
        g = self._grids_in(v).astype(np.complex128)
        fh = np.fft.fft2(g, axes=(0, 1))
        acc = np.einsum("unm,nmuc->nmc", self._fk2, fh)
        out = np.fft.ifft2(acc, axes=(0, 1)).real.reshape(self.dim_out, -1, order="F")
        return self._restore(out, np.asarray(v))

    def abs2_rmatmat(self, v: np.ndarray) -> np.ndarray:
        """(|X|^2)^T v for real v."""
        if self._prefer_dense:
            return self._cached_dense()[1].T @ v
        g = self._grids_out(v).astype(np.complex128)
        fy = np.fft.fft2(g, axes=(0, 1))
        prod = np.conj(self._fk2)[:, :, :, None].transpose(1, 2, 0, 3) * fy[:, :, None, :]
        out = np.fft.ifft2(prod, axes=(0, 1)).real.reshape(self.dim_in, -1, order="F")
        return self._restore(out, np.asarray(v))

    def to_dense(self) -> np.ndarray:
        """Materialise X. Intended for tests and desk-scale problems."""
        n, mt = self.N, self.M_tau
        kern = np.roll(self.pilots, -(n // 2), axis=1)
        rows = np.arange(n)
        cols = np.arange(n)
        dop = (rows[:, None] - cols[None, :]) % n        # (r - r') mod N
        dl = (np.arange(mt)[:, None] - np.arange(mt)[None, :]) % mt
        blocks = np.empty((self.U, n * mt, n * mt), dtype=np.complex128)
        for u in range(self.U):
            ku = kern[u]
            # block (l, l') is the N x N circulant ku[dop, (l-l') mod M_tau]
            big = ku[dop[None, None, :, :], dl[:, :, None, None]]
            blocks[u] = big.transpose(0, 2, 1, 3).reshape(n * mt, n * mt)
        return np.concatenate(list(blocks), axis=1)


def build_pilot_operator(pilots) -> PilotOperator:
    """Assemble the pilot operator from per-device (N, M_tau) grids."""
    pilots = np.asarray(pilots, dtype=np.complex128)
    if pilots.ndim != 3 or pilots.shape[0] < 1:
        raise ShapeError("need at least one (N, M_tau) pilot grid")
    return PilotOperator(pilots)


class DenseOperator:
    """Explicit sensing matrix behind the same interface as
    :class:`PilotOperator`; used when the phase-compensated matrix
    ``Phi (.) X`` is the effective operator."""

    def __init__(self, matrix: np.ndarray, U: int, N: int, M_tau: int):
        matrix = np.asarray(matrix, dtype=np.complex128)
        if matrix.shape != (N * M_tau, U * N * M_tau):
            raise ShapeError("matrix shape does not match (U, N, M_tau)")
        self.A = matrix
        self.U, self.N, self.M_tau = U, N, M_tau
        self._abs2 = np.abs(matrix) ** 2

    @property
    def dim_out(self) -> int:
        return self.A.shape[0]

    @property
    def dim_in(self) -> int:
        return self.A.shape[1]

    @property
    def shape(self):
        return self.A.shape

    def matmat(self, h):
        return self.A @ h

    def rmatmat(self, y):
        return self.A.conj().T @ y

    def abs2_matmat(self, v):
        return self._abs2 @ v

    def abs2_rmatmat(self, v):
        return self._abs2.T @ v

    def to_dense(self):
        return self.A
