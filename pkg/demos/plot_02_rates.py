"""
Sum rate and rate region of the multiplicative MAC
==================================================

The received covariance ``Q`` drives a Gaussian-approximation sum rate.
The two single-user rates come from Monte-Carlo estimators and bound the
rate-region pentagon.
"""
import numpy as np

from frmofdm import SCHEMES, conditional_rate_ris, conditional_rate_user, covariance_full, sum_rate
from frmofdm.channel import rayleigh_realization
from frmofdm.frm import random_phases

rng = np.random.default_rng(1)
ch = rayleigh_realization(M=2, K=8, N=8, rng=rng)
theta = random_phases(8, rng)
P, sigma2 = 1.0, 2.0

# %%
# ``Q`` is block tri-diagonal: the hopped echo only couples neighbouring
# subcarriers. It splits into a theta-shaped part and a fixed part.
cov = covariance_full(theta, ch, P, sigma2)
blocks = np.abs(cov.Q).reshape(8, 2, 8, 2).sum(axis=(1, 3))
print("nonzero block pattern of Q:")
print((blocks > 1e-12).astype(int))

# %%
# Sum rate per scheme for the same channel and phases.
for scheme in SCHEMES:
    print(f"{scheme:>9}: {sum_rate(theta, ch, P, sigma2, scheme):.3f} bpcu")

# %%
# Single-user rates with four RIS blocks of two elements. The pentagon has
# corners (0, R_x), (R_sum - R_x, R_x), (R_s, R_sum - R_s) and (R_s, 0).
# When the Gaussian sum rate exceeds R_x + R_s it is capped there and the
# pentagon collapses to a rectangle.
r_x = conditional_rate_user(theta, ch, P, sigma2, n_samples=64, rng=rng, n_blocks=4)
r_s = conditional_rate_ris(theta, ch, P, sigma2, n_samples=16, rng=rng, n_blocks=4, n_noise=32)
r_sum = min(sum_rate(theta, ch, P, sigma2), r_x + r_s)
print(f"user rate {r_x:.3f}, RIS rate {r_s:.3f}, sum rate {r_sum:.3f} bpcu")
print("corners:", [(0.0, round(r_x, 3)), (round(r_sum - r_x, 3), round(r_x, 3)),
                   (round(r_s, 3), round(r_sum - r_s, 3)), (round(r_s, 3), 0.0)])
