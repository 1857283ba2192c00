"""Rates of the FRM-OFDM multiplicative multiple-access channel.

The sum rate uses a Gaussian approximation of the received vector,
``I(x, s; y) ~ log det(Q) - MK log(sigma2)``, where ``Q = E[y y^H]``. The
conditional rates ``I(x; y | s)`` and ``I(s; y | x)`` that bound the two
single-user rates are estimated by Monte-Carlo. Every rate is reported in
bits per channel use per subcarrier (divided by K).
"""
import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .channel import crandn
from .frm import EquivalentChannel, get_constellation, group_expand, noiseless_rx

log = logging.getLogger(__name__)

LN2 = np.log(2.0)


class CovarianceMismatchError(RuntimeError):
    """The two assemblies of the received covariance disagree."""


@dataclass(frozen=True)
class CovarianceModel:
    Q: np.ndarray
    Q_theta: np.ndarray
    Q_no_theta: np.ndarray
    H_theta: np.ndarray


def block_select(A, block, which):
    """Keep the main (``"diag"``), upper (``"diag+"``) or lower (``"diag-"``)
    block diagonal of ``A`` with square blocks of size ``block``."""
    nb = A.shape[0] // block
    rows = np.arange(A.shape[0]) // block
    offset = {"diag": 0, "diag+": 1, "diag-": -1}[which]
    mask = rows[None, :] - rows[:, None] == offset
    assert A.shape[0] == nb * block
    return np.where(mask, A, 0.0)


def logdet_psd(Q):
    """Natural-log determinant of a Hermitian positive definite matrix.

    Falls back to a small diagonal loading when the Cholesky factorization
    fails; returns ``(logdet, jitter)``.
    """
    jitter = 0.0
    try:
        L = np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * np.real(np.trace(Q)) / Q.shape[0]
        log.warning("Cholesky failed, loading diagonal with %.3e", jitter)
        L = np.linalg.cholesky(Q + jitter * np.eye(Q.shape[0]))
    value = 2.0 * np.sum(np.log(np.real(np.diag(L))))
    if not np.isfinite(value):
        raise FloatingPointError("non-finite log-determinant")
    return value, jitter


def _element_cov(n_elements, group_size):
    """``E[s s^T]`` for blocks of ``group_size`` elements sharing a fair bit."""
    T = np.kron(np.eye(n_elements // group_size), np.ones((group_size, 1)))
    return 0.25 * np.ones((n_elements, n_elements)) + 0.25 * T @ T.T


def covariance_full(theta, realization, power, sigma2, group_size=1, rtol=1e-10):
    """Received covariance ``Q`` term by term, plus its theta split.

    ``Q`` is assembled from the block-diagonal, upper and lower block
    off-diagonal expectations of the FRM model. ``Q_theta = P H(theta) H(theta)^H``
    and ``Q_no_theta`` collects the rest; with ``group_size = 1`` the latter
    does not depend on theta. Raises ``CovarianceMismatchError`` when
    ``Q != Q_theta + Q_no_theta``.
    """
    ch = realization
    K, M, N = ch.K, ch.M, ch.N
    if N % group_size:
        raise ValueError("N must be a multiple of the group size")
    P = power
    h = ch.h_direct.reshape(K * M)
    H = ch.H.reshape(K * M, N)
    Ht = ch.H_tilde.reshape(K * M, N)
    Th = np.diag(theta)
    Es = 0.5 * np.ones(N)
    Css = _element_cov(N, group_size)

    HT = H @ Th
    HtT = Ht @ Th
    Hmean = HT @ Es
    Htmean = HtT @ Es
    Ht_theta = Ht @ theta
    Ht_off = HtT @ (1.0 - Es)
    HCH = HT @ Css @ HT.conj().T
    HtCHt = HtT @ Css @ HtT.conj().T
    HCHt = HT @ Css @ HtT.conj().T
    outer = np.outer

    diag_a = outer(h, h.conj()) + HCH + outer(h, Hmean.conj()) + outer(Hmean, h.conj())
    diag_b = (outer(Ht_theta, Ht_theta.conj()) + HtCHt
              - outer(Ht_theta, Htmean.conj()) - outer(Htmean, Ht_theta.conj()))
    upper = outer(h, Ht_off.conj()) + outer(Hmean, Ht_theta.conj()) - HCHt
    lower = outer(Ht_off, h.conj()) + outer(Ht_theta, Hmean.conj()) - HCHt.conj().T
    Q = P * (block_select(diag_a, M, "diag") + block_select(diag_b, M, "diag")
             + block_select(upper, M, "diag+") + block_select(lower, M, "diag-"))
    Q += sigma2 * np.eye(K * M)

    eq = EquivalentChannel.build(ch, P, sigma2, "frm")
    H_theta = eq.H_theta(theta)
    Q_theta = P * H_theta @ H_theta.conj().T
    # grouping leaves a theta-dependent residual spread Theta (Css - 1/4) Theta^H
    G = Th @ (Css - 0.25) @ Th.conj().T
    Q_no_theta = P * (block_select(H @ G @ H.conj().T + Ht @ G @ Ht.conj().T, M, "diag")
                      - block_select(H @ G @ Ht.conj().T, M, "diag+")
                      - block_select(Ht @ G @ H.conj().T, M, "diag-"))
    Q_no_theta += sigma2 * np.eye(K * M)

    err = np.max(np.abs(Q - Q_theta - Q_no_theta))
    if err > rtol * max(np.max(np.abs(Q)), 1e-300):
        raise CovarianceMismatchError(f"Q split off by {err:.3e}")
    return CovarianceModel(Q, Q_theta, Q_no_theta, H_theta)


def sum_rate(theta, realization, power, sigma2, scheme="frm"):
    """Gaussian-approximation ``I(x, s; y)`` in bpcu."""
    eq = EquivalentChannel.build(realization, power, sigma2, scheme)
    return sum_rate_eq(theta, eq)


def sum_rate_eq(theta, eq):
    ld, _ = logdet_psd(eq.covariance(theta))
    return (ld - eq.K * eq.M * np.log(eq.sigma2)) / (eq.K * LN2)


def _conditional_map(s, theta, realization, scheme):
    """Diagonal and sub-diagonal blocks of the x -> y map at fixed states."""
    ch = realization
    diag = ch.h_direct[:-1] + ch.H[:-1] @ (theta * s)
    if scheme == "frm":
        sub = ch.H_tilde[1:] @ (theta * (1.0 - s))
    elif scheme == "orm":
        sub = np.zeros_like(diag)
    else:
        raise ValueError(f"conditional rates are defined for frm/orm, not {scheme!r}")
    return diag, sub


def _gauss_rate_given_states(s, theta, realization, snr, scheme):
    ch = realization
    K, M = ch.K, ch.M
    diag, sub = _conditional_map(s, theta, realization, scheme)
    G = np.zeros((K, M, K - 1), dtype=complex)
    idx = np.arange(K - 1)
    G[idx, :, idx] = diag
    G[idx + 1, :, idx] = sub
    G = G.reshape(K * M, K - 1)
    ld, _ = logdet_psd(np.eye(K - 1) + snr * G.conj().T @ G)
    return ld / (K * LN2)


def conditional_rate_user(theta, realization, power, sigma2, n_samples, rng,
                          n_blocks=None, scheme="frm"):
    """Monte-Carlo ``I(x; y | s)`` with Gaussian inputs, in bpcu.

    ``n_blocks`` defaults to one bit per element; ``n_blocks = 0`` pins every
    element to the static state.
    """
    ch = realization
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    snr = power / sigma2
    B = ch.N if n_blocks is None else n_blocks
    if ch.N == 0 or B == 0:
        return _gauss_rate_given_states(np.ones(ch.N), theta, ch, snr, scheme)
    L = ch.N // B
    rates = [_gauss_rate_given_states(group_expand(rng.integers(0, 2, B), L), theta, ch, snr, scheme)
             for _ in range(n_samples)]
    return float(np.mean(rates))


def _state_means(x, theta, realization, n_blocks, scheme):
    """Noiseless outputs for every RIS bit pattern: (2^B, K*M)."""
    ch = realization
    L = ch.N // n_blocks
    patterns = np.array(list(itertools.product((0, 1), repeat=n_blocks)))
    return np.stack([noiseless_rx(x, group_expand(c, L), theta, ch, scheme).ravel()
                     for c in patterns])


def _mixture_information(means, sigma2, n_draws, rng):
    """``I(h; y)`` in bits for ``y = means[h] + w`` with ``h`` uniform."""
    n_hyp, dim = means.shape
    pick = rng.integers(0, n_hyp, size=n_draws)
    w = crandn(rng, (n_draws, dim), var=sigma2)
    y = means[pick] + w
    d2 = np.sum(np.abs(y[:, None, :] - means[None, :, :]) ** 2, axis=-1)
    expo = -(d2 - np.sum(np.abs(w) ** 2, axis=-1)[:, None]) / sigma2
    return np.log2(n_hyp) - np.mean(logsumexp(expo, axis=1)) / LN2


def conditional_rate_ris(theta, realization, power, sigma2, n_samples, rng, n_blocks=None,
                         n_noise=64, constellation="qpsk", scheme="frm"):
    """Monte-Carlo ``I(s; y | x)`` in bpcu via 2^B-component mixture entropies.

    The outer loop draws ``n_samples`` symbol vectors; each conditional
    mixture entropy is estimated with ``n_noise`` draws of ``(c, w)``.
    """
    ch = realization
    B = ch.N if n_blocks is None else n_blocks
    if B > 12:
        raise ValueError(f"B={B} is too large to enumerate; use the bound B/K={B / ch.K:.3g} instead")
    if B == 0:
        return 0.0
    const = get_constellation(constellation) if isinstance(constellation, str) else constellation
    pts = const.scaled(power)
    vals = []
    for _ in range(n_samples):
        x = pts[rng.integers(0, const.order, size=ch.K - 1)]
        means = _state_means(x, theta, ch, B, scheme)
        vals.append(_mixture_information(means, sigma2, n_noise, rng))
    # the plug-in estimate can stray outside [0, B] by Monte-Carlo error
    return float(np.clip(np.mean(vals), 0.0, B)) / ch.K


def exact_mutual_info_oracle(theta, realization, power, sigma2, n_samples, rng, n_blocks=None,
                             constellation="qpsk", scheme="frm"):
    """Enumeration-based ``(I(x,s;y), I(x;y|s), I(s;y|x))`` in bpcu for tiny instances.

    Uses the actual finite alphabet for x; the expectations over y are
    Monte-Carlo with ``n_samples`` draws.
    """
    ch = realization
    B = ch.N if n_blocks is None else n_blocks
    const = get_constellation(constellation) if isinstance(constellation, str) else constellation
    n_x = const.order ** (ch.K - 1)
    if n_x * 2 ** B > 2 ** 16:
        raise ValueError("instance too large for exhaustive enumeration")
    pts = const.scaled(power)
    L = ch.N // B if B else 1
    xs = np.array(list(itertools.product(range(const.order), repeat=ch.K - 1)))
    cs = np.array(list(itertools.product((0, 1), repeat=B)))
    means = np.empty((n_x, len(cs), ch.K * ch.M), dtype=complex)
    for i, xi in enumerate(xs):
        for j, c in enumerate(cs):
            s = group_expand(c, L) if B else np.ones(ch.N)
            means[i, j] = noiseless_rx(pts[xi], s, theta, ch, scheme).ravel()

    joint = _mixture_information(means.reshape(-1, ch.K * ch.M), sigma2, n_samples, rng)
    per_state = n_samples // len(cs) + 1
    user = np.mean([_mixture_information(means[:, j], sigma2, per_state, rng)
                    for j in range(len(cs))])
    per_x = n_samples // n_x + 1
    ris = np.mean([_mixture_information(means[i], sigma2, per_x, rng) for i in range(n_x)])
    return joint / ch.K, user / ch.K, ris / ch.K
