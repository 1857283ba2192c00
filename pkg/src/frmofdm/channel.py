"""Frequency-selective channel generation for the user-BS, user-RIS and RIS-BS links.

Tap delays are integer multiples of the sample period ``T/K`` with the l-th
tap at delay ``l`` (0-based), so the per-subcarrier response of a link is an
exact K-point DFT of its taps.

All array shapes use 0-based subcarrier indices ``k = 0 .. K-1``; subcarrier
``k`` here is the ``(k+1)``-th subcarrier in one-based notation.
"""
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

SPEED_OF_LIGHT = 3e8


def db2pow(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


def pow2db(x):
    return 10.0 * np.log10(x)


def crandn(rng, size=(), var=1.0):
    """Circularly-symmetric complex Gaussian samples with variance ``var``."""
    scale = np.sqrt(np.asarray(var, dtype=float) / 2.0)
    return scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


@dataclass(frozen=True)
class GeometryConfig:
    """Deployment geometry and propagation constants.

    Positions are in meters. The RIS sits at ``(50 * ris_x_fraction, 30, 50)``
    and its array lies in the global x-z plane, facing the ``-y`` half space
    where the BS and the user are.
    """

    lx: int = 8
    ly: int = 1
    bs_position: tuple = (0.0, 0.0, 50.0)
    user_position: tuple = (50.0, 0.0, 0.0)
    ris_x_fraction: float = 0.5
    carrier_freq: float = 915e6
    element_dx: float = None
    element_dy: float = None
    gain_user_dbi: float = 0.0
    gain_ris_dbi: float = 5.0
    gain_bs_dbi: float = 0.0
    pathloss_ref_db: float = -30.0
    pathloss_exp: float = 2.2
    kappa_ur_db: float = 3.0
    kappa_rb_db: float = 10.0

    def __post_init__(self):
        if self.lx < 1 or self.ly < 1:
            raise ValueError("array dimensions must be positive")
        if not 0.0 <= self.ris_x_fraction <= 1.0:
            raise ValueError("ris_x_fraction must lie in [0, 1]")
        if self.element_dx is None:
            object.__setattr__(self, "element_dx", 3e7 / self.carrier_freq)
        if self.element_dy is None:
            object.__setattr__(self, "element_dy", 3e7 / self.carrier_freq)

    @classmethod
    def for_elements(cls, n_elements, **kwargs):
        """Geometry with ``lx = min(8, N)`` columns and ``ly = N / lx`` rows."""
        lx = min(8, n_elements)
        if n_elements % lx:
            raise ValueError(f"N={n_elements} is not a multiple of {lx}")
        return cls(lx=lx, ly=n_elements // lx, **kwargs)

    @property
    def n_elements(self):
        return self.lx * self.ly

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.carrier_freq

    @property
    def ris_position(self):
        return (50.0 * self.ris_x_fraction, 30.0, 50.0)

    @property
    def d_ub(self):
        return float(np.linalg.norm(np.subtract(self.user_position, self.bs_position)))

    @property
    def d_ur(self):
        return float(np.linalg.norm(np.subtract(self.ris_position, self.user_position)))

    @property
    def d_rb(self):
        return float(np.linalg.norm(np.subtract(self.ris_position, self.bs_position)))


@dataclass(frozen=True)
class SystemConfig:
    n_antennas: int
    n_subcarriers: int
    n_elements: int
    taps_ub: int = 8
    taps_ur: int = 8
    taps_rb: int = 6

    def __post_init__(self):
        if self.n_subcarriers < 2 or self.n_subcarriers % 2:
            raise ValueError("the number of subcarriers must be an even integer >= 2")
        if min(self.n_antennas, self.n_elements) < 1:
            raise ValueError("M and N must be positive")


def ris_angles(geometry, target):
    """Azimuth and elevation of ``target`` seen from the RIS array.

    Elevation is measured from the array normal and azimuth inside the array
    plane from the horizontal (x) axis, so ``sin(psi)cos(theta)`` and
    ``sin(psi)sin(theta)`` are the direction cosines along the two array axes.
    """
    u = np.subtract(target, geometry.ris_position)
    u = u / np.linalg.norm(u)
    along_x, along_z, normal = u[0], u[2], -u[1]
    elevation = np.arccos(np.clip(normal, -1.0, 1.0))
    azimuth = np.arctan2(along_z, along_x)
    return azimuth, elevation


def steering_vector(azimuth, elevation, geometry):
    """URA response ``a_az (x) a_el`` of length ``lx * ly``.

    The azimuth factor carries a negative exponent and the elevation factor a
    positive one.
    """
    rho = geometry.wavelength
    nx = np.arange(geometry.lx)
    ny = np.arange(geometry.ly)
    a_az = np.exp(-2j * np.pi * geometry.element_dx * nx / rho
                  * np.cos(azimuth) * np.sin(elevation))
    a_el = np.exp(2j * np.pi * geometry.element_dy * ny / rho
                  * np.sin(azimuth) * np.sin(elevation))
    return np.kron(a_az, a_el)


def bs_steering_vector(n_antennas, geometry, target):
    """Half-wavelength ULA along the global x axis at the BS."""
    u = np.subtract(target, geometry.bs_position)
    cos_angle = u[0] / np.linalg.norm(u)
    return np.exp(-1j * np.pi * np.arange(n_antennas) * cos_angle)


def path_loss_cascaded(geometry):
    """Free-space power gain of the user-RIS-BS cascade (linear)."""
    d_ur, d_rb = geometry.d_ur, geometry.d_rb
    if d_ur <= 0 or d_rb <= 0:
        raise ValueError("degenerate geometry: zero RIS distance")
    gains = db2pow(geometry.gain_user_dbi + geometry.gain_ris_dbi + geometry.gain_bs_dbi)
    return float(gains * geometry.lx * geometry.ly * geometry.element_dx * geometry.element_dy
                 * geometry.wavelength ** 2 / (64 * np.pi ** 3 * d_ur * d_rb))


def path_loss_direct(d, beta0_db=-30.0, exponent=2.2):
    if d <= 0:
        raise ValueError("link distance must be positive")
    return float(db2pow(beta0_db) * d ** (-exponent))


def gen_taps(tap_count, rng, size=(), kappa_db=None, los=None):
    """Draw tap coefficients with unit expected total power.

    Returns an array of shape ``size + (tap_count,)``. With a Rician factor,
    the first tap is the deterministic ``los`` component scaled by
    ``sqrt(kappa / (1 + kappa))`` and the remaining taps share the NLoS power
    ``1 / (1 + kappa)`` equally. Without one, all taps are i.i.d. Rayleigh.
    ``kappa_db = inf`` gives a pure LoS first tap. A finite Rician factor needs
    at least one NLoS tap.
    """
    size = (size,) if np.isscalar(size) else tuple(size)
    if tap_count < 1:
        raise ValueError("tap_count must be >= 1")
    if kappa_db is None:
        return crandn(rng, size + (tap_count,), var=1.0 / tap_count)
    if los is None:
        raise ValueError("a LoS steering component is required with a Rician factor")
    kappa = np.inf if np.isposinf(kappa_db) else float(db2pow(kappa_db))
    if tap_count == 1 and np.isfinite(kappa):
        raise ValueError("a single tap leaves no room for the NLoS power")
    los_amp = 1.0 if np.isinf(kappa) else np.sqrt(kappa / (1.0 + kappa))
    nlos_power = 0.0 if np.isinf(kappa) else 1.0 / (1.0 + kappa)
    taps = np.zeros(size + (tap_count,), dtype=complex)
    taps[..., 0] = los_amp * np.broadcast_to(los, size)
    if tap_count > 1:
        taps[..., 1:] = crandn(rng, size + (tap_count - 1,), var=nlos_power / (tap_count - 1))
    return taps


def freq_response(taps, n_subcarriers, shift=0, delays=None):
    """Per-subcarrier response ``sum_l g_l exp(-j 2 pi (k + shift) tau_l / K)``.

    ``taps`` holds coefficients on its last axis; the result replaces that axis
    with K subcarriers. ``shift=-1`` evaluates the response one subcarrier below.
    """
    taps = np.asarray(taps)
    n_taps = taps.shape[-1]
    delays = np.arange(n_taps) if delays is None else np.asarray(delays)
    if delays.shape != (n_taps,):
        raise ValueError("one delay per tap is required")
    if np.any(np.diff(delays) <= 0) or np.any(delays < 0):
        raise ValueError("delays must be nonnegative and strictly increasing")
    if delays.max() >= n_subcarriers:
        raise ValueError(f"tap delay {delays.max()} does not fit in K={n_subcarriers}")
    k = np.arange(n_subcarriers) + shift
    kernel = np.exp(-2j * np.pi * np.outer(delays, k) / n_subcarriers)
    return taps @ kernel


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """Frequency-domain links on K subcarriers plus the taps behind them.

    ``h_ub`` is (K, M), ``h_ur`` is (K, N) and ``h_rb`` is (K, M, N). Tap
    arrays are (M, Ld), (N, L1) and (M, N, L2) when present.
    """

    h_ub: np.ndarray
    h_ur: np.ndarray
    h_rb: np.ndarray
    taps_ub: np.ndarray = field(default=None, repr=False)
    taps_ur: np.ndarray = field(default=None, repr=False)
    taps_rb: np.ndarray = field(default=None, repr=False)

    @classmethod
    def from_taps(cls, taps_ub, taps_ur, taps_rb, n_subcarriers):
        taps_ub, taps_ur, taps_rb = (np.asarray(t, dtype=complex)
                                     for t in (taps_ub, taps_ur, taps_rb))
        k = n_subcarriers
        return cls(
            h_ub=freq_response(taps_ub, k).T,
            h_ur=freq_response(taps_ur, k).T,
            h_rb=np.moveaxis(freq_response(taps_rb, k), -1, 0),
            taps_ub=taps_ub, taps_ur=taps_ur, taps_rb=taps_rb,
        )

    @property
    def K(self):
        return self.h_ub.shape[0]

    @property
    def M(self):
        return self.h_ub.shape[1]

    @property
    def N(self):
        return self.h_ur.shape[1]

    @cached_property
    def H(self):
        """Same-subcarrier cascades ``H_k = H_rb_k diag(h_ur_k)``; the last slot is zero."""
        H = self.h_rb * self.h_ur[:, None, :]
        H[-1] = 0.0
        return H

    @cached_property
    def H_tilde(self):
        """Hopped cascades ``H~_k = H_rb_k diag(h_ur_{k-1})``; the first slot is zero."""
        Ht = np.zeros_like(self.h_rb)
        Ht[1:] = self.h_rb[1:] * self.h_ur[:-1, None, :]
        return Ht

    @cached_property
    def h_direct(self):
        """Direct link with the blank last subcarrier zeroed (its symbol is always 0)."""
        h = self.h_ub.copy()
        h[-1] = 0.0
        return h

    def scaled(self, ub=1.0, ur=1.0, rb=1.0):
        """Copy with each link multiplied by a constant."""
        def _s(a, c):
            return None if a is None else a * c
        return replace(self, h_ub=self.h_ub * ub, h_ur=self.h_ur * ur, h_rb=self.h_rb * rb,
                       taps_ub=_s(self.taps_ub, ub), taps_ur=_s(self.taps_ur, ur),
                       taps_rb=_s(self.taps_rb, rb))


def random_geometry(rng, n_elements, **kwargs):
    """Geometry with the RIS x position drawn uniformly on its segment."""
    return GeometryConfig.for_elements(n_elements, ris_x_fraction=float(rng.uniform()), **kwargs)


def gen_channel_realization(geometry, system, rng):
    """Draw all three links for one deployment.

    The user-BS link is pure Rayleigh with distance path loss. The user-RIS
    and RIS-BS links are Rician with LoS first taps; the cascaded path loss is
    applied to the user-RIS taps so every element's cascade carries it.
    """
    M, N = system.n_antennas, system.n_elements
    if geometry.n_elements != N:
        raise ValueError("geometry array size does not match N")
    az_u, el_u = ris_angles(geometry, geometry.user_position)
    az_b, el_b = ris_angles(geometry, geometry.bs_position)
    a_ris_user = steering_vector(az_u, el_u, geometry)
    a_ris_bs = steering_vector(az_b, el_b, geometry)
    a_bs = bs_steering_vector(M, geometry, geometry.ris_position)

    beta = path_loss_direct(geometry.d_ub, geometry.pathloss_ref_db, geometry.pathloss_exp)
    pl = path_loss_cascaded(geometry)
    taps_ub = np.sqrt(beta) * gen_taps(system.taps_ub, rng, size=(M,))
    taps_ur = np.sqrt(pl) * gen_taps(system.taps_ur, rng, size=(N,),
                                     kappa_db=geometry.kappa_ur_db, los=a_ris_user)
    taps_rb = gen_taps(system.taps_rb, rng, size=(M, N), kappa_db=geometry.kappa_rb_db,
                       los=np.outer(a_bs, a_ris_bs))
    return ChannelRealization.from_taps(taps_ub, taps_ur, taps_rb, system.n_subcarriers)


def rayleigh_realization(M, K, N, rng, taps=(2, 2, 2), scale=(1.0, 1.0, 1.0)):
    """Unit-scale i.i.d. Rayleigh links, handy for numerical checks."""
    ld, l1, l2 = taps
    return ChannelRealization.from_taps(
        scale[0] * gen_taps(ld, rng, size=(M,)),
        scale[1] * gen_taps(l1, rng, size=(N,)),
        scale[2] * gen_taps(l2, rng, size=(M, N)),
        K,
    )
