"""Invariant suite behind ``frmofdm selftest``.

Each check returns ``(name, passed, detail)``. The instances are tiny and
seeded so the whole suite runs in seconds.
"""
import numpy as np

from .channel import rayleigh_realization
from .detector import (BmpConfig, CBelief, backward_recursion, bmp_detect, forward_recursion,
                       gamp_detect_c, mrc_stats, posterior_x, update_xi_stats)
from .frm import EquivalentChannel, bpsk, check_unit_modulus, group_expand, random_phases, simulate_rx
from .optimizer import (ao_build_lambda_alpha, ao_optimize, ao_update_sigma_phi, mm_solve,
                        rao_optimize, rao_update, rao_weighted_mse, weighted_mse)
from .rates import block_select, covariance_full

FD_STEP = 1e-5
FD_RTOL = 1e-6


def _instance(seed, M=2, K=4, N=4):
    rng = np.random.default_rng(seed)
    return rayleigh_realization(M, K, N, rng), random_phases(N, rng), rng


def fd_gradient(fun, theta, step=FD_STEP):
    """Central differences of a real function of ``theta`` packed as ``d/dRe + j d/dIm``."""
    grad = np.empty(len(theta), dtype=complex)
    for n in range(len(theta)):
        e = np.zeros(len(theta))
        e[n] = step
        d_re = (fun(theta + e) - fun(theta - e)) / (2 * step)
        d_im = (fun(theta + 1j * e) - fun(theta - 1j * e)) / (2 * step)
        grad[n] = d_re + 1j * d_im
    return grad


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def check_unit_modulus_preserved():
    ch, theta, rng = _instance(1)
    out = [mm_solve(np.eye(4) + 0.1 * np.ones((4, 4)), rng.standard_normal(4) + 0j, theta, iters=10),
           ao_optimize(ch, 1.0, 0.1, outer_iters=3, theta0=theta, mm_iters=10).theta,
           rao_optimize(ch, 1.0, 0.1, outer_iters=3, theta0=theta, mm_iters=10).theta]
    err = max(np.max(np.abs(np.abs(t) - 1.0)) for t in out)
    for t in out:
        check_unit_modulus(t)
    return "unit modulus", err <= 1e-12, f"max deviation {err:.2e}"


def check_covariance_structure():
    ch, theta, _ = _instance(2)
    cov = covariance_full(theta, ch, 1.0, 0.1)
    Q, M = cov.Q, ch.M
    herm = np.max(np.abs(Q - Q.conj().T))
    eig = np.linalg.eigvalsh(Q - 0.1 * np.eye(len(Q)))
    floor = eig.min() / np.linalg.norm(Q, 2)
    band = sum(block_select(Q, M, w) for w in ("diag", "diag+", "diag-"))
    outside = np.max(np.abs(Q - band))
    ok = herm <= 1e-12 * np.max(np.abs(Q)) and floor >= -1e-9 and outside == 0.0
    return "Q Hermitian/PSD/tri-diagonal", ok, f"herm {herm:.1e}, eig floor {floor:.1e}, off-band {outside:.1e}"


def check_detector_beliefs():
    ch, theta, rng = _instance(3, M=2, K=6, N=4)
    const = bpsk()
    P, sigma2, L = 1.0, 0.05, 2
    worst_norm, worst_var, c_box = 0.0, 0.0, True
    for _ in range(5):
        xi_idx = rng.integers(0, 2, size=ch.K - 1)
        bits = rng.integers(0, 2, size=ch.N // L)
        y = simulate_rx(const.scaled(P)[xi_idx], group_expand(bits, L), theta, ch, sigma2, rng)
        belief = CBelief.prior(ch.N // L)
        s_mean, s_var = belief.expand(L)
        xi = update_xi_stats(s_mean, s_var, theta, ch)
        mrc = mrc_stats(xi, y, sigma2)
        pts = const.scaled(P)
        fwd = forward_recursion(mrc, pts)
        bwd = backward_recursion(mrc, pts)
        table, _ = posterior_x(fwd, bwd, pts)
        for msg in (fwd, bwd, table.posterior):
            worst_norm = max(worst_norm, np.max(np.abs(msg.sum(axis=1) - 1.0)))
        new = gamp_detect_c(table.mean, table.var, theta, ch, y, sigma2, group_size=L)
        variances = [xi.xi.var, xi.xi_hop.var, table.var, new.var]
        worst_var = min(worst_var, min(np.min(v) for v in variances))
        res = bmp_detect(y, theta, ch, sigma2, P, L, const, BmpConfig(max_iter=4))
        for b in (new, res.c_belief):
            c_box &= bool(np.all((b.mean >= 0) & (b.mean <= 1)))
            c_box &= bool(np.all(b.var <= b.mean * (1 - b.mean) + 1e-9))
    return [("message normalization", worst_norm <= 1e-12, f"max row error {worst_norm:.1e}"),
            ("variances nonnegative", worst_var >= 0.0, f"min variance {worst_var:.1e}"),
            ("c beliefs in box", c_box, "c in [0,1], var <= c(1-c)")]


def check_ao_gradient():
    ch, theta, _ = _instance(4, M=2, K=4, N=3)
    eq = EquivalentChannel.build(ch, 1.0, 0.1)
    Sigma, Phi = ao_update_sigma_phi(theta, eq)
    Lam, alpha = ao_build_lambda_alpha(Sigma, Phi, eq)
    g = fd_gradient(lambda t: weighted_mse(t, Sigma, Phi, eq), theta)
    rel = _rel(g, 2 * (Lam @ theta + alpha))
    return "AO objective gradient", rel <= FD_RTOL, f"relative error {rel:.1e}"


def check_rao_gradient():
    ch, theta, _ = _instance(5, M=2, K=4, N=3)
    eq = EquivalentChannel.build(ch, 1.0, 0.1)
    state = rao_update(theta, eq)
    g = fd_gradient(lambda t: rao_weighted_mse(t, state, eq), theta)
    rel = _rel(g, 2 * (state.Lambda @ theta + state.alpha))
    return "RAO objective gradient", rel <= FD_RTOL, f"relative error {rel:.1e}"


def check_lambda_hermitian_psd():
    ch, theta, _ = _instance(6, M=2, K=6, N=5)
    eq = EquivalentChannel.build(ch, 1.0, 0.1)
    Lam, _ = ao_build_lambda_alpha(*ao_update_sigma_phi(theta, eq), eq)
    Lr = rao_update(theta, eq).Lambda
    ok, worst = True, np.inf
    for A in (Lam, Lr):
        ok &= bool(np.array_equal(A, A.conj().T))
        worst = min(worst, np.linalg.eigvalsh(A).min() / max(np.linalg.norm(A, 2), 1e-300))
    return "Lambda Hermitian PSD", ok and worst >= -1e-9, f"eig floor {worst:.1e}"


CHECKS = (check_unit_modulus_preserved, check_covariance_structure, check_detector_beliefs,
          check_ao_gradient, check_rao_gradient, check_lambda_hermitian_psd)


def run_selftest():
    results = []
    for check in CHECKS:
        try:
            out = check()
        except Exception as exc:  # a crashing check is a failed check
            out = (check.__name__, False, f"{type(exc).__name__}: {exc}")
        results.extend(out if isinstance(out, list) else [out])
    return results
