"""RIS phase optimization for the Gaussian-approximation sum rate.

Three pieces:

* ``mm_solve`` minimizes ``theta^H Lam theta + 2 Re(theta^H alpha)`` over
  unit-modulus vectors by majorization-minimization.
* ``ao_optimize`` runs WMMSE alternating optimization on the equivalent MIMO
  channel ``y = H(theta) x + w_equ``, whose log-det rate equals the sum rate.
* ``rao_optimize`` replaces the full MMSE receiver with one per subcarrier
  observing ``(y_k, y_{k+1})``, which avoids any MK x MK inversion.

The weighted-MSE algebra works in nats; traces report bits.
"""
import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .frm import EquivalentChannel, random_phases
from .rates import LN2

log = logging.getLogger(__name__)


class MonotonicityError(RuntimeError):
    """An alternating-optimization surrogate decreased beyond tolerance."""


DENSE_EIG_MAX = 256


def lambda_max(A, v0=None, tol=1e-9, max_iter=500, dense_max=DENSE_EIG_MAX):
    """Upper estimate of the largest eigenvalue of a Hermitian matrix.

    Up to ``dense_max`` rows a dense eigensolver is used, padded by a
    round-off margin. Larger matrices use power iteration (shifted when the
    dominant eigenvalue is negative); the Rayleigh quotient is inflated by the
    residual norm so the result never falls below the true maximum. Falls
    back to ``eigvalsh`` when the iteration does not settle within
    ``max_iter`` steps.
    """
    n = A.shape[0]
    if n <= dense_max:
        w, V = np.linalg.eigh(A)
        margin = 4 * n * np.finfo(float).eps * np.abs(w).max()
        return float(w[-1] + margin), V[:, -1]
    if v0 is None:
        # fixed generic start, unlikely to be orthogonal to the top eigenvector
        v0 = np.random.default_rng(0).standard_normal((n, 2)) @ np.array([1.0, 1j])
    start = v0 / np.linalg.norm(v0)
    shift = 0.0
    for _ in range(2):
        v = start
        B = A + shift * np.eye(n) if shift else A
        lam_old = None
        converged = False
        for _ in range(max_iter):
            w = B @ v
            norm = np.linalg.norm(w)
            if norm == 0.0:
                return 0.0 if shift == 0.0 else -shift, v
            lam = np.real(np.vdot(v, w))
            v = w / norm
            if lam_old is not None and abs(lam - lam_old) <= tol * abs(lam):
                converged = True
                break
            lam_old = lam
        if lam - shift < 0 and shift == 0.0:
            shift = 2.0 * norm
            continue
        break
    if not converged:
        return float(np.linalg.eigvalsh(A)[-1]), v
    mu = np.real(np.vdot(v, A @ v))
    residual = np.linalg.norm(A @ v - mu * v)
    return float(mu + residual), v


def quad_objective(Lam, alpha, theta):
    return float(np.real(np.vdot(theta, Lam @ theta)) + 2.0 * np.real(np.vdot(theta, alpha)))


def mm_solve(Lam, alpha, theta0, iters=100, lam=None, return_trace=False, tol=None):
    """Unit-modulus minimizer of ``theta^H Lam theta + 2 Re(theta^H alpha)``.

    Each step maximizes the linear minorizer built from ``lam_max I - Lam``,
    so the objective never increases. Entries where the update direction
    vanishes keep their previous phase.
    """
    Lam = np.asarray(Lam)
    scale = max(np.max(np.abs(Lam)), 1e-300)
    if np.max(np.abs(Lam - Lam.conj().T)) > 1e-10 * scale:
        raise ValueError("Lambda must be Hermitian")
    Lam = 0.5 * (Lam + Lam.conj().T)
    if lam is None:
        lam, _ = lambda_max(Lam)
    theta = np.asarray(theta0, dtype=complex)
    alpha = np.asarray(alpha, dtype=complex)
    B = lam * np.eye(len(theta)) - Lam
    trace = [quad_objective(Lam, alpha, theta)] if return_trace or tol else None
    for _ in range(iters):
        q = B @ theta
        q -= alpha
        mag = np.abs(q)
        if mag.all():
            theta = q / mag
        else:
            theta = np.where(mag > 0, q / np.where(mag > 0, mag, 1.0), theta)
        if trace is not None:
            trace.append(quad_objective(Lam, alpha, theta))
            if tol and abs(trace[-2] - trace[-1]) <= tol * max(abs(trace[-2]), 1e-300):
                break
    return (theta, np.array(trace)) if return_trace else theta


@dataclass
class OptimizationResult:
    theta: np.ndarray
    surrogate: list = field(default_factory=list)
    sum_rate: list = field(default_factory=list)

    @property
    def iterations(self):
        return len(self.surrogate) - 1

    def write_trace(self, fh, algorithm=""):
        """Write ``iteration,surrogate,sum_rate`` rows (bits) to a text stream."""
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["algorithm", "iteration", "surrogate", "sum_rate"])
        rates = self.sum_rate or [float("nan")] * len(self.surrogate)
        for i, (f, r) in enumerate(zip(self.surrogate, rates)):
            writer.writerow([algorithm, i, f"{f:.12g}", f"{r:.12g}"])


def _check_increase(prev, new, what, rtol=1e-8):
    if prev is not None and new < prev - rtol * max(abs(prev), 1.0):
        raise MonotonicityError(f"{what} decreased from {prev:.12g} to {new:.12g}")


def _init_theta(theta0, n, rng):
    if theta0 is not None:
        return np.asarray(theta0, dtype=complex)
    rng = rng if rng is not None else np.random.default_rng()
    return random_phases(n, rng)


# --------------------------------------------------------------------------
# Full alternating optimization
# --------------------------------------------------------------------------

@dataclass
class WmmseState:
    Sigma: np.ndarray
    Phi: np.ndarray
    Lambda: np.ndarray = None
    alpha: np.ndarray = None


def _equivalent(realization, power, sigma2, scheme):
    if isinstance(realization, EquivalentChannel):
        return realization
    if power is None or sigma2 is None:
        raise ValueError("power and sigma2 are required with a channel realization")
    return EquivalentChannel.build(realization, power, sigma2, scheme)


def ao_update_sigma_phi(theta, realization, power=None, sigma2=None, scheme="frm",
                        return_logdet=False):
    """MMSE receiver ``Phi = C_xy C_yy^-1`` and weight ``Sigma = E^-1`` for given theta.

    ``realization`` may also be a prebuilt ``EquivalentChannel``.
    """
    eq = _equivalent(realization, power, sigma2, scheme)
    P = eq.power
    Hth = eq.H_theta(theta)
    Q = eq.covariance(theta)
    try:
        cho = cho_factor(Q, lower=True)
    except LinAlgError as exc:
        raise LinAlgError("received covariance is singular") from exc
    Phi = P * cho_solve(cho, Hth).conj().T
    E = P * np.eye(Hth.shape[1]) - P * Phi @ Hth
    E = 0.5 * (E + E.conj().T)
    Sigma = np.linalg.inv(E)
    Sigma = 0.5 * (Sigma + Sigma.conj().T)
    if return_logdet:
        return Sigma, Phi, 2.0 * np.sum(np.log(np.abs(np.diag(cho[0]))))
    return Sigma, Phi


def _blocks(A, K, M):
    return A.reshape(K, M, K, M).transpose(0, 2, 1, 3)


def ao_build_lambda_alpha(Sigma, Phi, realization, power=None, sigma2=None, scheme="frm"):
    """Quadratic model of the weighted MSE in theta.

    With ``W = Phi^H Sigma Phi``, only the main and first off block diagonals
    of ``W`` and the matching blocks of ``Sigma Phi`` enter.
    """
    eq = _equivalent(realization, power, sigma2, scheme)
    K, M, P = eq.K, eq.M, eq.power
    gd, gs = eq.gain_diag, eq.gain_sub
    W = _blocks(Phi.conj().T @ Sigma @ Phi, K, M)
    G = (Sigma @ Phi).reshape(K - 1, K, M)
    k = np.arange(K - 1)
    Hk, Htn, hk = eq.H[:-1], eq.Ht[1:], eq.h[:-1]
    W_kk, W_nn = W[k, k], W[k + 1, k + 1]
    W_kn, W_nk = W[k, k + 1], W[k + 1, k]

    Lam = (gd ** 2 * np.einsum("kmi,kmp,kpj->ij", Hk.conj(), W_kk, Hk)
           + gs ** 2 * np.einsum("kmi,kmp,kpj->ij", Htn.conj(), W_nn, Htn))
    cross = gd * gs * np.einsum("kmi,kmp,kpj->ij", Hk.conj(), W_kn, Htn)
    Lam = P * (Lam + cross + cross.conj().T)

    g_own = G[k, k].conj()
    g_next = G[k, k + 1].conj()
    alpha = (gd * np.einsum("kmi,kmp,kp->i", Hk.conj(), W_kk, hk)
             + gs * np.einsum("kmi,kmp,kp->i", Htn.conj(), W_nk, hk)
             - gd * np.einsum("kmi,km->i", Hk.conj(), g_own)
             - gs * np.einsum("kmi,km->i", Htn.conj(), g_next))
    return 0.5 * (Lam + Lam.conj().T), P * alpha


def weighted_mse(theta, Sigma, Phi, eq):
    """``tr(Sigma E[(x - Phi y)(x - Phi y)^H])`` in the equivalent model."""
    P = eq.power
    Hth = eq.H_theta(theta)
    Q = eq.covariance(theta)
    PH = P * Phi @ Hth
    E = P * np.eye(Hth.shape[1]) - PH - PH.conj().T + Phi @ Q @ Phi.conj().T
    return float(np.real(np.trace(Sigma @ E)))


def wmmse_surrogate(theta, Sigma, Phi, eq):
    """``log det Sigma - tr(Sigma E)`` in nats."""
    _, ld = np.linalg.slogdet(Sigma)
    return float(ld) - weighted_mse(theta, Sigma, Phi, eq)


def _sum_rate_from_logdet(logdet_q, eq):
    return (logdet_q - eq.K * eq.M * np.log(eq.sigma2)) / (eq.K * LN2)


def ao_optimize(realization, power=None, sigma2=None, outer_iters=200, rng=None, scheme="frm",
                theta0=None, mm_iters=100, tol=None):
    """Alternate the MMSE receiver update, the quadratic model and MM.

    Starts from uniform random phases drawn from ``rng`` unless ``theta0`` is
    given. The surrogate is non-decreasing across outer iterations; a drop
    beyond 1e-8 relative raises ``MonotonicityError``. ``tol`` enables an
    early stop on the relative surrogate change.
    """
    eq = _equivalent(realization, power, sigma2, scheme)
    theta = _init_theta(theta0, eq.N, rng)
    result = OptimizationResult(theta)
    prev = None
    for it in range(outer_iters + 1):
        Sigma, Phi, logdet_q = ao_update_sigma_phi(theta, eq, return_logdet=True)
        f = wmmse_surrogate(theta, Sigma, Phi, eq) / LN2
        _check_increase(prev, f, "AO surrogate")
        result.surrogate.append(f)
        result.sum_rate.append(_sum_rate_from_logdet(logdet_q, eq))
        result.theta = theta
        if it == outer_iters or (tol and prev is not None
                                 and abs(f - prev) <= tol * max(abs(prev), 1e-300)):
            break
        prev = f
        Lam, alpha = ao_build_lambda_alpha(Sigma, Phi, eq)
        theta = mm_solve(Lam, alpha, theta, iters=mm_iters)
    return result


# --------------------------------------------------------------------------
# Recursive (per-subcarrier) alternating optimization
# --------------------------------------------------------------------------

@dataclass
class RaoState:
    """Per-subcarrier weights and receivers plus the accumulated quadratic model.

    ``sigma[k]`` and ``phi[k]`` belong to symbol ``k`` (0-based, ``K-1`` of
    them); ``phi`` stacks the combiners for ``y_k`` and ``y_{k+1}``.
    """

    sigma: np.ndarray
    phi: np.ndarray
    Lambda: np.ndarray
    alpha: np.ndarray
    noise_blocks: np.ndarray


def _per_subcarrier_terms(theta, eq, k):
    """Observation gain ``a``, interference gain ``c`` and the two noise blocks."""
    gd, gs = eq.gain_diag, eq.gain_sub
    own = eq.h[k] + gd * (eq.H[k] @ theta)
    hop = gs * (eq.Ht[k + 1] @ theta)
    interf = eq.h[k + 1] + gd * (eq.H[k + 1] @ theta)
    return np.concatenate([own, hop]), interf


def rao_update(theta, realization, power=None, sigma2=None, scheme="frm"):
    """Per-subcarrier MMSE weights plus the summed quadratic model in theta.

    Symbol ``x_k`` is observed through ``[y_k; y_{k+1}]`` with the known
    ``x_{k-1}`` term removed; ``x_{k+1}`` acts as extra noise on ``y_{k+1}`` and
    the off-diagonal noise blocks are dropped. Costs O(K M^3 + K M N + K N^2).
    """
    eq = _equivalent(realization, power, sigma2, scheme)
    K, M, N, P = eq.K, eq.M, eq.N, eq.power
    gd, gs = eq.gain_diag, eq.gain_sub
    sqrtP = np.sqrt(P)
    noise = eq.Qn_diag
    sigma = np.empty(K - 1)
    phi = np.empty((K - 1, 2 * M), dtype=complex)
    Lam = np.zeros((N, N), dtype=complex)
    alpha = np.zeros(N, dtype=complex)
    for k in range(K - 1):
        a, c = _per_subcarrier_terms(theta, eq, k)
        C = P * np.outer(a, a.conj())
        C[:M, :M] += noise[k]
        C[M:, M:] += noise[k + 1] + P * np.outer(c, c.conj())
        try:
            z = np.linalg.solve(C, a)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"per-subcarrier covariance {k} is singular") from exc
        q = np.real(np.vdot(a, z))
        sigma[k] = 1.0 / (1.0 - P * q)
        phi[k] = sqrtP * z

        f1, f2 = phi[k, :M], phi[k, M:]
        v = gd * (eq.H[k].conj().T @ f1) + gs * (eq.Ht[k + 1].conj().T @ f2)
        u = gd * (eq.H[k + 1].conj().T @ f2)
        Lam += sigma[k] * P * (np.outer(v, v.conj()) + np.outer(u, u.conj()))
        alpha += sigma[k] * (P * v * np.vdot(f1, eq.h[k]) - sqrtP * v
                             + P * u * np.vdot(f2, eq.h[k + 1]))
    Lam = 0.5 * (Lam + Lam.conj().T)
    return RaoState(sigma, phi, Lam, alpha, noise)


def rao_weighted_mse(theta, state, eq):
    """``sum_k Sigma_k E|x_k / sqrt(P) - phi_k^H [y_k; y_{k+1}]|^2`` at fixed receivers."""
    K, M, P = eq.K, eq.M, eq.power
    total = 0.0
    for k in range(K - 1):
        a, c = _per_subcarrier_terms(theta, eq, k)
        f = state.phi[k]
        mse = (abs(1.0 - np.sqrt(P) * np.vdot(f, a)) ** 2
               + P * abs(np.vdot(f[M:], c)) ** 2
               + np.real(np.vdot(f[:M], state.noise_blocks[k] @ f[:M]))
               + np.real(np.vdot(f[M:], state.noise_blocks[k + 1] @ f[M:])))
        total += state.sigma[k] * mse
    return float(total)


def rao_surrogate(state):
    """Per-subcarrier rate sum ``sum_k log2 Sigma_k`` divided by K."""
    return float(np.sum(np.log2(state.sigma))) / (len(state.sigma) + 1)


def rao_optimize(realization, power=None, sigma2=None, outer_iters=200, rng=None, scheme="frm",
                 theta0=None, mm_iters=100, tol=None, track_rate=True):
    """Recursive alternating optimization; same contract as ``ao_optimize``.

    ``track_rate=False`` skips the full log-det evaluation used for the
    trace, keeping each iteration free of MK x MK work.
    """
    from .rates import sum_rate_eq

    eq = _equivalent(realization, power, sigma2, scheme)
    theta = _init_theta(theta0, eq.N, rng)
    result = OptimizationResult(theta)
    prev = None
    for it in range(outer_iters + 1):
        state = rao_update(theta, eq)
        f = rao_surrogate(state)
        _check_increase(prev, f, "RAO surrogate")
        result.surrogate.append(f)
        if track_rate:
            result.sum_rate.append(sum_rate_eq(theta, eq))
        result.theta = theta
        if it == outer_iters or (tol and prev is not None
                                 and abs(f - prev) <= tol * max(abs(prev), 1e-300)):
            break
        prev = f
        theta = mm_solve(state.Lambda, state.alpha, theta, iters=mm_iters)
    return result
