"""Joint detection of user symbols and RIS bits (bilinear message passing).

Given the RIS-bit beliefs, the composite channels ``xi_k = h_k + H_k Theta s``
and ``xi~_k = H~_k Theta (1 - s)`` are treated as Gaussian, so that

    y_k = x_k xi_k + x_{k-1} xi~_k + w_k

is a hidden Markov chain in ``x``. Each ``y_k`` is compressed twice by MRC
(once matched to ``xi_k`` for the forward recursion, once to ``xi~_k`` for
the backward one), giving exact sum-product recursions over the finite
alphabet. The symbol beliefs then linearize the model in ``c`` and GAMP
updates the bit beliefs. The two steps alternate until the residual settles.

Indexing is 0-based: symbol ``i`` sits on subcarrier ``i`` and hops to
subcarrier ``i + 1``; the guards ``x_{-1}`` and ``x_{K-1}`` are zero.
"""
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from .frm import get_constellation, group_expand

log = logging.getLogger(__name__)

_GUARD = 1e-12


@dataclass(frozen=True)
class GaussStat:
    """Mean and variance of complex Gaussian beliefs (arrays broadcast together)."""

    mean: np.ndarray
    var: np.ndarray


@dataclass(frozen=True)
class XiStats:
    xi: GaussStat
    xi_hop: GaussStat


@dataclass(frozen=True)
class MrcStats:
    """Scalar observations after forward (``f_``) and backward (``b_``) MRC.

    Forward model: ``y_f = x_own h_f + x_prev h~_f + n`` with ``E h_f = 1``.
    Backward model: ``y_b = x_own h_b + x_prev h~_b + n`` with ``E h~_b = 1``.
    ``*_valid`` marks subcarriers whose combiner norm passed the guard.
    """

    f_y: np.ndarray
    f_noise: np.ndarray
    f_own: GaussStat
    f_prev: GaussStat
    f_valid: np.ndarray
    b_y: np.ndarray
    b_noise: np.ndarray
    b_own: GaussStat
    b_prev: GaussStat
    b_valid: np.ndarray


@dataclass(frozen=True)
class MessageTable:
    forward: np.ndarray
    backward: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    posterior: np.ndarray


@dataclass(frozen=True)
class CBelief:
    mean: np.ndarray
    var: np.ndarray
    fallback: bool = False

    @classmethod
    def prior(cls, n_blocks):
        return cls(np.full(n_blocks, 0.5), np.full(n_blocks, 0.25))

    @classmethod
    def known(cls, bits):
        bits = np.asarray(bits, dtype=float)
        return cls(bits, np.zeros_like(bits))

    def expand(self, group_size):
        return group_expand(self.mean, group_size), group_expand(self.var, group_size)


@dataclass(frozen=True)
class GampConfig:
    """GAMP settings; ``damping`` is the fraction of the previous iterate kept."""

    iters: int = 30
    damping: float = 0.7
    clamp: float = 1e-9


@dataclass(frozen=True)
class BmpConfig:
    """Detector settings.

    ``stop_rule="relative"`` stops when the residual statistic changes by at
    most ``tol`` relative to the previous iteration; ``"absolute"`` compares
    the statistic itself with ``tol``. ``pairing="model"`` pairs ``H~_k`` with
    ``x_{k-1}`` in the linear model for ``c``; ``"literal"`` uses ``x_k`` for
    both terms.
    """

    max_iter: int = 10
    tol: float = 1e-3
    stop_rule: str = "relative"
    pairing: str = "model"
    gamp: GampConfig = field(default_factory=GampConfig)


@dataclass
class BmpResult:
    x_index: np.ndarray
    x_symbols: np.ndarray
    c_bits: np.ndarray
    x_mean: np.ndarray
    x_var: np.ndarray
    c_belief: CBelief
    residuals: list
    iterations: int
    converged: bool
    messages: MessageTable = None
    gamp_fallbacks: int = 0


# --------------------------------------------------------------------------
# Channel bookkeeping
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class _Model:
    h: np.ndarray      # (K, M)
    G: np.ndarray      # H_k diag(theta), (K, M, N)
    Gt: np.ndarray     # H~_k diag(theta), (K, M, N)

    @classmethod
    def build(cls, theta, realization, scheme="frm"):
        ch = realization
        G = ch.H * theta
        Gt = ch.H_tilde * theta
        if scheme == "orm":
            Gt = np.zeros_like(Gt)
        elif scheme != "frm":
            raise ValueError(f"detection is defined for frm/orm, not {scheme!r}")
        return cls(ch.h_direct, G, Gt)

    @property
    def K(self):
        return self.h.shape[0]

    def grouped(self, group_size):
        K, M, N = self.G.shape
        B = N // group_size
        return (self.G.reshape(K, M, B, group_size).sum(-1),
                self.Gt.reshape(K, M, B, group_size).sum(-1))


def update_xi_stats(s_mean, s_var, theta, realization, scheme="frm"):
    """Gaussian statistics of the composite channels for per-element beliefs."""
    model = realization if isinstance(realization, _Model) else _Model.build(theta, realization, scheme)
    s_mean = np.asarray(s_mean, dtype=float)
    s_var = np.asarray(s_var, dtype=float)
    mu = model.h + model.G @ s_mean
    nu = (np.abs(model.G) ** 2) @ s_var
    mu_t = model.Gt @ (1.0 - s_mean)
    nu_t = (np.abs(model.Gt) ** 2) @ s_var
    return XiStats(GaussStat(mu, nu), GaussStat(mu_t, nu_t))


def mrc_stats(xi_stats, y, sigma2):
    """Forward and backward MRC compression of every ``y_k``."""
    mu, nu = xi_stats.xi.mean, xi_stats.xi.var
    mt, nt = xi_stats.xi_hop.mean, xi_stats.xi_hop.var
    e = np.sum(np.abs(mu) ** 2, axis=1)
    et = np.sum(np.abs(mt) ** 2, axis=1)
    f_valid = (e > 0) & (e >= _GUARD * et)
    b_valid = (et > 0) & (et >= _GUARD * e)
    ef = np.where(f_valid, e, 1.0)
    eb = np.where(b_valid, et, 1.0)
    a2, at2 = np.abs(mu) ** 2, np.abs(mt) ** 2
    cross = np.sum(mu.conj() * mt, axis=1)

    f_y = np.sum(mu.conj() * y, axis=1) / ef
    f_own = GaussStat(np.ones(len(e), dtype=complex), np.sum(a2 * nu, axis=1) / ef ** 2)
    f_prev = GaussStat(cross / ef, np.sum(a2 * nt, axis=1) / ef ** 2)
    b_y = np.sum(mt.conj() * y, axis=1) / eb
    b_own = GaussStat(cross.conj() / eb, np.sum(at2 * nu, axis=1) / eb ** 2)
    b_prev = GaussStat(np.ones(len(e), dtype=complex), np.sum(at2 * nt, axis=1) / eb ** 2)
    return MrcStats(f_y, sigma2 / ef, f_own, f_prev, f_valid,
                    b_y, sigma2 / eb, b_own, b_prev, b_valid)


def _log_cn(y, mean, var):
    return -np.log(np.pi * var) - np.abs(y - mean) ** 2 / var


def _normalize_log(logm, what):
    # -inf entries are legitimate zero masses; NaN means a whole row vanished
    logm = logm - logsumexp(logm, axis=-1, keepdims=True)
    if np.any(np.isnan(logm)) or np.any(np.isposinf(logm)):
        raise FloatingPointError(f"degenerate {what} message")
    return logm


def _kernel(y, noise, own, prev, pts_own, pts_prev):
    """log CN(y; a own.mean + b prev.mean, noise + |a|^2 own.var + |b|^2 prev.var) on a grid (a, b)."""
    a = pts_own[:, None]
    b = pts_prev[None, :]
    mean = a * own.mean + b * prev.mean
    var = noise + np.abs(a) ** 2 * own.var + np.abs(b) ** 2 * prev.var
    return _log_cn(y, mean, var)


def forward_recursion(mrc, points, log_prior=None, return_log=False):
    """Messages from ``y_i`` into ``x_i`` for every symbol, (K-1, |X|), rows sum to 1.

    ``return_log=True`` returns the normalized log-messages instead.
    """
    K = len(mrc.f_y)
    Q = len(points)
    log_prior = np.full(Q, -np.log(Q)) if log_prior is None else log_prior
    zero = np.zeros(1, dtype=complex)
    logf = np.zeros((K - 1, Q))
    for i in range(K - 1):
        if not mrc.f_valid[i]:
            logf[i] = -np.log(Q)
            continue
        fo, fp = GaussStat(mrc.f_own.mean[i], mrc.f_own.var[i]), GaussStat(mrc.f_prev.mean[i], mrc.f_prev.var[i])
        if i == 0:
            m = _kernel(mrc.f_y[i], mrc.f_noise[i], fo, fp, points, zero)[:, 0]
        else:
            ker = _kernel(mrc.f_y[i], mrc.f_noise[i], fo, fp, points, points)
            m = logsumexp(ker + (log_prior + logf[i - 1])[None, :], axis=1)
        logf[i] = _normalize_log(m, "forward")
    return logf if return_log else np.exp(logf)


def backward_recursion(mrc, points, log_prior=None, return_log=False):
    """Messages from ``y_{i+1}`` into ``x_i`` for every symbol, (K-1, |X|), rows sum to 1.

    ``return_log=True`` returns the normalized log-messages instead.
    """
    K = len(mrc.b_y)
    Q = len(points)
    log_prior = np.full(Q, -np.log(Q)) if log_prior is None else log_prior
    zero = np.zeros(1, dtype=complex)
    logb = np.zeros((K - 1, Q))
    for k in range(K - 1, 0, -1):
        # subcarrier k carries x_k (own) and x_{k-1} (prev); message goes to x_{k-1}
        if not mrc.b_valid[k]:
            logb[k - 1] = -np.log(Q)
            continue
        bo, bp = GaussStat(mrc.b_own.mean[k], mrc.b_own.var[k]), GaussStat(mrc.b_prev.mean[k], mrc.b_prev.var[k])
        if k == K - 1:
            m = _kernel(mrc.b_y[k], mrc.b_noise[k], bo, bp, zero, points)[0]
        else:
            ker = _kernel(mrc.b_y[k], mrc.b_noise[k], bo, bp, points, points)
            m = logsumexp(ker + (log_prior + logb[k])[:, None], axis=0)
        logb[k - 1] = _normalize_log(m, "backward")
    return logb if return_log else np.exp(logb)


def posterior_x(forward, backward, points, prior=None, log_domain=False):
    """Posterior means, variances, masses and hard decisions (lowest index on ties).

    With ``log_domain=True`` the messages are log-messages; the returned table
    always holds probabilities.
    """
    Q = len(points)
    prior = np.full(Q, 1.0 / Q) if prior is None else prior
    with np.errstate(divide="ignore"):
        if log_domain:
            lf, lb = forward, backward
            forward, backward = np.exp(lf), np.exp(lb)
        else:
            lf, lb = np.log(forward), np.log(backward)
        logp = np.log(prior) + lf + lb
    logp = _normalize_log(logp, "posterior")
    post = np.exp(logp)
    mean = post @ points
    var = np.sum(post * np.abs(points[None, :] - mean[:, None]) ** 2, axis=1)
    decision = np.argmax(logp, axis=1)
    return MessageTable(forward, backward, mean, var, post), decision


# --------------------------------------------------------------------------
# Bits
# --------------------------------------------------------------------------

def _linear_model_c(y, x_mean, x_var, belief, model, group_size, sigma2, pairing):
    """Observation, measurement matrix and per-row noise variance for ``c``."""
    GT, GtT = model.grouped(group_size)
    own = np.append(x_mean, 0.0)
    own_var = np.append(x_var, 0.0)
    if pairing == "model":
        prev = np.insert(x_mean, 0, 0.0)
        prev_var = np.insert(x_var, 0, 0.0)
    elif pairing == "literal":
        prev, prev_var = own, np.zeros_like(own_var)
    else:
        raise ValueError(f"unknown pairing {pairing!r}")
    hop_full = model.Gt.sum(axis=2)                         # H~_k theta
    r = y - own[:, None] * model.h - prev[:, None] * hop_full
    A = own[:, None, None] * GT - prev[:, None, None] * GtT
    s_mean, _ = belief.expand(group_size)
    if pairing == "model":
        own_gain = model.h + model.G @ s_mean
        hop_gain = model.Gt @ (1.0 - s_mean)
        noise = (own_var[:, None] * np.abs(own_gain) ** 2
                 + prev_var[:, None] * np.abs(hop_gain) ** 2 + sigma2)
    else:
        gain = (GT - GtT) @ belief.mean + model.h + hop_full
        noise = own_var[:, None] * np.abs(gain) ** 2 + sigma2
    return r.ravel(), A.reshape(-1, A.shape[-1]), noise.ravel()


def gamp_binary(r, A, noise_var, cfg=GampConfig(), init=None):
    """Sum-product GAMP for ``r = A c + n`` with complex ``r, A``, real ``c`` in {0, 1}.

    Real and imaginary parts are stacked into a real-valued model. Each ``c_b``
    has a Bernoulli(1/2) prior. Returns a ``CBelief``; on NaN or a blown-up
    residual the initial belief is returned with ``fallback=True``.
    """
    B = A.shape[1]
    start = init if init is not None else CBelief.prior(B)
    Ar = np.concatenate([A.real, A.imag])
    rr = np.concatenate([r.real, r.imag])
    vr = np.concatenate([noise_var, noise_var]) / 2.0
    with np.errstate(over="ignore", invalid="ignore"):
        A2 = Ar ** 2
        col = A2.sum(axis=0)
        # largest residual any c in [0, 1]^B could leave
        res_scale = np.linalg.norm(rr) + np.sqrt(np.sum(col))
    informative = col > 0
    c, vc = start.mean.copy(), start.var.copy()
    s_hat = np.zeros_like(rr)
    beta = 1.0 - cfg.damping   # weight of the fresh update; damping is the share kept
    lo, hi = cfg.clamp, 1.0 - cfg.clamp
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for _ in range(cfg.iters):
            vp = A2 @ vc
            p = Ar @ c - vp * s_hat
            vs = 1.0 / (vp + vr)
            s_new = (rr - p) * vs
            s_hat = beta * s_new + (1 - beta) * s_hat
            tau = 1.0 / (A2.T @ vs)
            q = c + tau * (Ar.T @ s_hat)
            p1 = np.where(informative, expit((q - 0.5) / tau), 0.5)
            p1 = np.clip(p1, lo, hi)
            c = beta * p1 + (1 - beta) * c
            vc = beta * p1 * (1 - p1) + (1 - beta) * vc
            resid = np.linalg.norm(rr - Ar @ c)
            if not (np.all(np.isfinite(c)) and np.all(np.isfinite(vc))) or not resid <= 1e6 * max(res_scale, 1e-300):
                log.warning("GAMP diverged; keeping the previous bit belief")
                return CBelief(start.mean, start.var, fallback=True)
    c = np.where(informative, np.clip(c, lo, hi), 0.5)
    vc = np.where(informative, np.minimum(vc, c * (1 - c)), 0.25)
    return CBelief(c, vc)


def gamp_detect_c(x_mean, x_var, theta, realization, y, sigma2, group_size=1, cfg=BmpConfig(),
                  scheme="frm", init=None):
    """Bit beliefs from the symbol beliefs via the linearized model."""
    model = realization if isinstance(realization, _Model) else _Model.build(theta, realization, scheme)
    belief = init if init is not None else CBelief.prior(model.G.shape[2] // group_size)
    r, A, nv = _linear_model_c(y, x_mean, x_var, belief, model, group_size, sigma2, cfg.pairing)
    return gamp_binary(r, A, nv, cfg.gamp)


# --------------------------------------------------------------------------
# Full detector
# --------------------------------------------------------------------------

def residual_statistic(y, x_mean, xi_stats, sigma2):
    """Mean over (k, m) of ``| |y - x_k mu_xi - x_{k-1} mu_xi~|^2 - sigma2 |``."""
    own = np.append(x_mean, 0.0)
    prev = np.insert(x_mean, 0, 0.0)
    e = y - own[:, None] * xi_stats.xi.mean - prev[:, None] * xi_stats.xi_hop.mean
    return float(np.mean(np.abs(np.abs(e) ** 2 - sigma2)))


def bmp_detect(y, theta, realization, sigma2, power, group_size=1, constellation="qpsk",
               cfg=BmpConfig(), scheme="frm", genie_c=None, genie_x=None):
    """Alternate symbol recursions and GAMP until the residual settles.

    ``genie_c`` (true bits) pins the bit beliefs, giving the symbol lower
    bound; ``genie_x`` (true symbol indices) pins the symbol beliefs, giving
    the bit lower bound. Both run a single pass.
    """
    y = np.asarray(y).reshape(realization.K, realization.M)
    const = get_constellation(constellation) if isinstance(constellation, str) else constellation
    points = const.scaled(power)
    model = _Model.build(theta, realization, scheme)
    N = model.G.shape[2]
    if N % group_size:
        raise ValueError("N must be a multiple of the group size")
    belief = CBelief.known(genie_c) if genie_c is not None else CBelief.prior(N // group_size)
    max_iter = 1 if (genie_c is not None or genie_x is not None) else cfg.max_iter
    residuals = []
    fallbacks = 0
    converged = False
    table = None
    for it in range(max_iter):
        s_mean, s_var = belief.expand(group_size)
        xi = update_xi_stats(s_mean, s_var, theta, model)
        if genie_x is not None:
            idx = np.asarray(genie_x)
            x_mean, x_var = points[idx], np.zeros(len(idx))
        else:
            mrc = mrc_stats(xi, y, sigma2)
            fwd = forward_recursion(mrc, points, return_log=True)
            bwd = backward_recursion(mrc, points, return_log=True)
            table, idx = posterior_x(fwd, bwd, points, log_domain=True)
            x_mean, x_var = table.mean, table.var
        if genie_c is None:
            r, A, nv = _linear_model_c(y, x_mean, x_var, belief, model, group_size, sigma2, cfg.pairing)
            new = gamp_binary(r, A, nv, cfg.gamp)
            fallbacks += new.fallback
            belief = new
        s_mean, s_var = belief.expand(group_size)
        rho = residual_statistic(y, x_mean, update_xi_stats(s_mean, s_var, theta, model), sigma2)
        residuals.append(rho)
        if cfg.stop_rule == "absolute":
            done = rho <= cfg.tol
        elif cfg.stop_rule == "relative":
            done = it > 0 and abs(residuals[-2] - rho) <= cfg.tol * residuals[-2]
        else:
            raise ValueError(f"unknown stop rule {cfg.stop_rule!r}")
        if done:
            converged = True
            break
    c_bits = (belief.mean > 0.5).astype(int)
    return BmpResult(idx, points[idx], c_bits, x_mean, x_var, belief, residuals,
                     len(residuals), converged, table, fallbacks)


def map_oracle(y, theta, realization, sigma2, power, group_size=1, constellation="qpsk",
               scheme="frm", max_hypotheses=2 ** 20):
    """Exact joint MAP ``(x, c)`` by enumeration; returns symbol indices and bits."""
    ch = realization
    const = get_constellation(constellation) if isinstance(constellation, str) else constellation
    points = const.scaled(power)
    K, M, N = ch.K, ch.M, ch.N
    B = N // group_size
    n_x = const.order ** (K - 1)
    if n_x * 2 ** B > max_hypotheses:
        raise ValueError(f"{n_x * 2 ** B} hypotheses exceed the limit {max_hypotheses}")
    model = _Model.build(theta, ch, scheme)
    y = np.asarray(y).reshape(K, M)
    xs = np.array(list(itertools.product(range(const.order), repeat=K - 1)))
    X = points[xs]
    own = np.concatenate([X, np.zeros((n_x, 1))], axis=1)          # (n_x, K)
    prev = np.concatenate([np.zeros((n_x, 1)), X], axis=1)
    best = (np.inf, None, None)
    for bits in itertools.product((0, 1), repeat=B):
        s = group_expand(np.array(bits, dtype=float), group_size)
        a = model.h + model.G @ s
        b = model.Gt @ (1.0 - s)
        d = np.sum(np.abs(y[None] - own[:, :, None] * a[None] - prev[:, :, None] * b[None]) ** 2,
                   axis=(1, 2))
        j = int(np.argmin(d))
        if d[j] < best[0]:
            best = (d[j], xs[j], np.array(bits))
    return best[1], best[2]
