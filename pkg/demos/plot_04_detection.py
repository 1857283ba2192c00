"""
Joint detection of user symbols and RIS bits
============================================

BMP alternates forward/backward recursions over the symbols with GAMP over
the RIS bits. On a tiny system it can be checked against exhaustive MAP.
"""
import numpy as np

from frmofdm import BmpConfig, bmp_detect, map_oracle, rayleigh_realization
from frmofdm.frm import bpsk, group_expand, random_phases, simulate_rx

rng = np.random.default_rng(3)
const = bpsk()
M, K, N, L = 2, 4, 4, 2

# %%
# One frame at 10 dB: residual statistic per iteration and the decisions.
ch = rayleigh_realization(M, K, N, rng)
theta = random_phases(N, rng)
xi, bits = rng.integers(0, 2, K - 1), rng.integers(0, 2, N // L)
y = simulate_rx(const.points[xi], group_expand(bits, L), theta, ch, 0.1, rng)
res = bmp_detect(y, theta, ch, 0.1, 1.0, L, const, BmpConfig())
print("residuals:", np.round(res.residuals, 4), "iterations:", res.iterations)
print("x true/BMP:", xi, res.x_index, " c true/BMP:", bits, res.c_bits)

# %%
# BMP against MAP and the genie bound (c revealed) on fresh frames.
for snr_db in (0, 5, 10):
    s2 = 10 ** (-snr_db / 10)
    err = np.zeros(3)
    for _ in range(300):
        ch = rayleigh_realization(M, K, N, rng)
        theta = random_phases(N, rng)
        xi, bits = rng.integers(0, 2, K - 1), rng.integers(0, 2, N // L)
        y = simulate_rx(const.points[xi], group_expand(bits, L), theta, ch, s2, rng)
        x_b = bmp_detect(y, theta, ch, s2, 1.0, L, const).x_index
        x_m, _ = map_oracle(y, theta, ch, s2, 1.0, L, const)
        x_g = bmp_detect(y, theta, ch, s2, 1.0, L, const, genie_c=bits).x_index
        err += [np.sum(x_b != xi), np.sum(x_m != xi), np.sum(x_g != xi)]
    ber = err / (300 * (K - 1))
    print(f"{snr_db:>2} dB  x-BER  BMP {ber[0]:.4f}  MAP {ber[1]:.4f}  genie-c {ber[2]:.4f}")
