"""FRM-OFDM signal model.

Each OFDM symbol carries ``x_1 .. x_{K-1}`` on the first ``K-1`` subcarriers;
the last one is left blank so the frequency-hopped copy of ``x_{K-1}`` stays
in band. Element ``n`` of the RIS either keeps its phase ``theta_n``
(``s_n = 1``) or additionally rotates it at ``1/T`` (``s_n = 0``), which moves
its reflection of ``x_k`` to subcarrier ``k + 1``:

    y_k = x_k (h_k + H_k diag(theta) s) + x_{k-1} H~_k diag(theta) (1 - s) + w_k

Schemes
-------
``frm``       the model above.
``orm``       on-off reflection; hopped elements reflect nothing.
``ris-ofdm``  conventional RIS-aided OFDM, every element static (``s = 1``).
``no-ris``    direct link only.
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .channel import crandn

SCHEMES = ("frm", "orm", "ris-ofdm", "no-ris")


@dataclass(frozen=True)
class Constellation:
    """Unit-energy symbol alphabet with its bit labels."""

    name: str
    points: np.ndarray
    labels: np.ndarray

    @property
    def order(self):
        return len(self.points)

    @property
    def bits_per_symbol(self):
        return self.labels.shape[1]

    def scaled(self, power):
        return np.sqrt(power) * self.points


def qpsk():
    """Gray-mapped QPSK: bit 0 drives the real part, bit 1 the imaginary part."""
    labels = np.array([[0, 0], [0, 1], [1, 0], [1, 1]])
    points = ((1 - 2 * labels[:, 0]) + 1j * (1 - 2 * labels[:, 1])) / np.sqrt(2)
    return Constellation("qpsk", points, labels)


def bpsk():
    return Constellation("bpsk", np.array([1.0 + 0j, -1.0 + 0j]), np.array([[0], [1]]))


def get_constellation(name):
    try:
        return {"qpsk": qpsk, "bpsk": bpsk}[name.lower()]()
    except KeyError:
        raise ValueError(f"unknown constellation {name!r}") from None


def random_phases(n_elements, rng):
    return np.exp(2j * np.pi * rng.uniform(size=n_elements))


def check_unit_modulus(theta, tol=1e-12):
    theta = np.asarray(theta)
    err = np.max(np.abs(np.abs(theta) - 1.0)) if theta.size else 0.0
    if err > tol:
        raise ValueError(f"phase vector is not unit-modulus (max deviation {err:.3e})")
    return theta


def group_expand(c, group_size):
    """Per-element states ``s = c (x) 1_L``."""
    if group_size < 1:
        raise ValueError("group size must be >= 1")
    return np.repeat(np.asarray(c), group_size)


@dataclass(frozen=True)
class RisMessage:
    bits: np.ndarray
    group_size: int

    @classmethod
    def random(cls, n_blocks, group_size, rng):
        return cls(rng.integers(0, 2, size=n_blocks), group_size)

    @property
    def n_blocks(self):
        return len(self.bits)

    @property
    def states(self):
        return group_expand(self.bits, self.group_size)


@dataclass(frozen=True)
class OfdmFrame:
    """User symbols on the K-1 active subcarriers (already scaled by sqrt(P))."""

    indices: np.ndarray
    symbols: np.ndarray

    @classmethod
    def random(cls, n_subcarriers, power, rng, constellation=None):
        constellation = constellation or qpsk()
        idx = rng.integers(0, constellation.order, size=n_subcarriers - 1)
        return cls(idx, constellation.scaled(power)[idx])

    @property
    def padded(self):
        """``[x_0, x_1, .., x_K]`` with the two zero guards."""
        return np.concatenate(([0.0], self.symbols, [0.0]))


def _as_symbols(x):
    return x.symbols if isinstance(x, OfdmFrame) else np.asarray(x)


def _as_states(s, n_elements):
    if isinstance(s, RisMessage):
        s = s.states
    s = np.asarray(s, dtype=float)
    if s.shape != (n_elements,):
        raise ValueError(f"expected {n_elements} element states, got shape {s.shape}")
    return s


def noiseless_rx(x, s, theta, realization, scheme="frm"):
    """Noiseless received blocks, shape (K, M)."""
    ch = realization
    x = _as_symbols(x)
    K = ch.K
    if x.shape != (K - 1,):
        raise ValueError(f"expected {K - 1} symbols, got {x.shape}")
    s = _as_states(s, ch.N)
    xk = np.append(x, 0.0)
    xprev = np.insert(x, 0, 0.0)
    if scheme == "no-ris":
        return xk[:, None] * ch.h_ub
    if scheme == "ris-ofdm":
        s = np.ones_like(s)
    y = xk[:, None] * (ch.h_ub + ch.H @ (theta * s))
    if scheme == "frm":
        y += xprev[:, None] * (ch.H_tilde @ (theta * (1.0 - s)))
    elif scheme not in ("orm", "ris-ofdm"):
        raise ValueError(f"unknown scheme {scheme!r}")
    return y


def simulate_rx(x, s, theta, realization, sigma2, rng, scheme="frm"):
    """One received FRM-OFDM symbol, shape (K, M); ``y.ravel()`` stacks the blocks."""
    y = noiseless_rx(x, s, theta, realization, scheme)
    if sigma2 > 0:
        y = y + crandn(rng, y.shape, var=sigma2)
    return y


def simulate_rx_orm(x, s, theta, realization, sigma2, rng):
    return simulate_rx(x, s, theta, realization, sigma2, rng, scheme="orm")


def simulate_time_domain(x, s, theta, realization, oversample=8, scheme="frm"):
    """Noiseless observation computed by explicit time-domain processing.

    Synthesizes the CP-free OFDM waveform on ``oversample * K`` samples per
    symbol, convolves it (circularly, as after CP removal) with the tap
    channels, applies each element's phase trajectory in between, and projects
    the result onto every subcarrier. Returns (K, M) like ``simulate_rx``.
    """
    ch = realization
    if ch.taps_ub is None:
        raise ValueError("the realization carries no taps")
    if int(oversample) != oversample or oversample < 1:
        raise ValueError("oversample must be a positive integer")
    K, N = ch.K, ch.N
    x = _as_symbols(x)
    s = _as_states(s, N)
    n_samp = oversample * K
    t = np.arange(n_samp)

    carriers = np.exp(2j * np.pi * np.outer(np.arange(K - 1), t) / n_samp)
    waveform = x @ carriers

    def delay_line(signal, taps):
        # circular convolution with taps at integer-sample delays 0, 1, ..
        out = np.zeros(taps.shape[:-1] + signal.shape[-1:], dtype=complex)
        for lag in range(taps.shape[-1]):
            out += taps[..., lag, None] * np.roll(signal, lag * oversample, axis=-1)
        return out

    rx = np.zeros((ch.M, n_samp), dtype=complex)
    rx += delay_line(waveform, ch.taps_ub)
    if scheme != "no-ris":
        if scheme == "ris-ofdm":
            s = np.ones(N)
        incident = delay_line(waveform, ch.taps_ur)  # (N, n_samp)
        hop = np.exp(2j * np.pi * t / n_samp)
        if scheme == "frm":
            trajectory = np.where(s[:, None] > 0.5, 1.0, hop[None, :])
        elif scheme in ("orm", "ris-ofdm"):
            trajectory = np.where(s[:, None] > 0.5, 1.0, 0.0) * np.ones(n_samp)
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        reflected = theta[:, None] * trajectory * incident
        for m in range(ch.M):
            rx[m] += delay_line(reflected, ch.taps_rb[m]).sum(axis=0)

    demod = np.exp(-2j * np.pi * np.outer(t, np.arange(K)) / n_samp) / n_samp
    return (rx @ demod).T


@dataclass(frozen=True, eq=False)
class EquivalentChannel:
    """Gaussian-approximation view ``y = H(theta) x + w_equ`` of one scheme.

    Column ``k`` of ``H(theta)`` is ``h_k + g_d H_k theta`` in block ``k`` and
    ``g_s H~_{k+1} theta`` in block ``k+1``; ``w_equ`` has the
    theta-independent covariance ``Qn`` (shape (K, K, M, M) as blocks). The
    covariance treats every element state as an independent fair bit.
    """

    h: np.ndarray
    H: np.ndarray
    Ht: np.ndarray
    gain_diag: float
    gain_sub: float
    power: float
    sigma2: float
    scheme: str = "frm"

    @classmethod
    def build(cls, realization, power, sigma2, scheme="frm"):
        ch = realization
        H, Ht = ch.H, ch.H_tilde
        if scheme == "frm":
            gd, gs = 0.5, 0.5
        elif scheme == "orm":
            gd, gs, Ht = 0.5, 0.0, np.zeros_like(Ht)
        elif scheme == "ris-ofdm":
            gd, gs, Ht = 1.0, 0.0, np.zeros_like(Ht)
        elif scheme == "no-ris":
            gd, gs, H, Ht = 1.0, 0.0, np.zeros_like(H), np.zeros_like(Ht)
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        return cls(ch.h_direct, H, Ht, gd, gs, float(power), float(sigma2), scheme)

    @property
    def K(self):
        return self.h.shape[0]

    @property
    def M(self):
        return self.h.shape[1]

    @property
    def N(self):
        return self.H.shape[2]

    def columns(self, theta):
        """Diagonal and sub-diagonal blocks of ``H(theta)``: two (K-1, M) arrays."""
        diag = self.h[:-1] + self.gain_diag * (self.H[:-1] @ theta)
        sub = self.gain_sub * (self.Ht[1:] @ theta)
        return diag, sub

    def H_theta(self, theta):
        K, M = self.K, self.M
        diag, sub = self.columns(theta)
        out = np.zeros((K, M, K - 1), dtype=complex)
        idx = np.arange(K - 1)
        out[idx, :, idx] = diag
        out[idx + 1, :, idx] = sub
        return out.reshape(K * M, K - 1)

    @cached_property
    def Qn_diag(self):
        """Diagonal blocks of the theta-independent covariance, (K, M, M)."""
        P = self.power
        diag = np.broadcast_to(self.sigma2 * np.eye(self.M, dtype=complex),
                               (self.K, self.M, self.M)).copy()
        if self.scheme in ("frm", "orm"):
            diag += 0.25 * P * np.einsum("kmn,kpn->kmp", self.H, self.H.conj())
            diag += 0.25 * P * np.einsum("kmn,kpn->kmp", self.Ht, self.Ht.conj())
        return diag

    @cached_property
    def Qn_blocks(self):
        """Blocks of the theta-independent covariance, (K, K, M, M) with only the
        three central block diagonals populated."""
        K, M = self.K, self.M
        blocks = np.zeros((K, K, M, M), dtype=complex)
        idx = np.arange(K)
        blocks[idx, idx] = self.Qn_diag
        if self.scheme == "frm":
            # block (k, k-1): the same element either stays or hops
            cross = -0.25 * self.power * np.einsum("kmn,kpn->kmp", self.Ht[1:], self.H[:-1].conj())
            blocks[idx[1:], idx[:-1]] = cross
            blocks[idx[:-1], idx[1:]] = cross.conj().transpose(0, 2, 1)
        return blocks

    @cached_property
    def Qn(self):
        K, M = self.K, self.M
        return self.Qn_blocks.transpose(0, 2, 1, 3).reshape(K * M, K * M)

    def covariance(self, theta):
        Ht = self.H_theta(theta)
        return self.power * Ht @ Ht.conj().T + self.Qn
