"""
Channels and the FRM-OFDM signal model
======================================

Draw one deployment, look at its path loss, then send a frame through the
frequency-domain model and check it against explicit time-domain processing.
"""
import numpy as np

from frmofdm import (ChannelRealization, GeometryConfig, SystemConfig, gen_channel_realization,
                     path_loss_cascaded, random_phases, rayleigh_realization, simulate_rx,
                     simulate_time_domain)
from frmofdm.frm import OfdmFrame, RisMessage, noiseless_rx

rng = np.random.default_rng(0)

# %%
# A 32-element RIS (8 x 4) halfway along the user-BS line. The cascaded
# user-RIS-BS loss is tiny, which is why the receiver noise in the
# experiments sits at -60 dBW.
geometry = GeometryConfig.for_elements(32, ris_x_fraction=0.5)
print(f"user-BS {geometry.d_ub:.1f} m, user-RIS {geometry.d_ur:.1f} m, RIS-BS {geometry.d_rb:.1f} m")
print(f"cascaded path loss {path_loss_cascaded(geometry):.3e}")

ch = gen_channel_realization(geometry, SystemConfig(n_antennas=4, n_subcarriers=8, n_elements=32), rng)
# the last subcarrier carries no symbol, so its direct-link row is zero
energy = np.sum(np.abs(ch.h_direct) ** 2, axis=1)
print("direct link energy per SC:", " ".join(f"{e:.2e}" for e in energy))

# %%
# One frame: K-1 QPSK symbols, one bit per RIS element. Elements with
# ``s = 0`` rotate their phase once per symbol, which lifts their echo of
# ``x_k`` to subcarrier ``k + 1``; the last SC is kept free for it.
small = rayleigh_realization(M=2, K=8, N=8, rng=rng, taps=(3, 3, 2))
theta = random_phases(8, rng)
frame = OfdmFrame.random(8, power=1.0, rng=rng)
message = RisMessage.random(n_blocks=4, group_size=2, rng=rng)
y = simulate_rx(frame, message, theta, small, sigma2=0.0, rng=rng)
print("received blocks, shape", y.shape)

# %%
# The same frame built sample by sample: OFDM synthesis, tap convolution,
# per-element phase trajectories, DFT. The two agree to round-off.
y_time = simulate_time_domain(frame.symbols, message.states, theta, small, oversample=8)
print(f"time vs frequency domain, relative error {np.linalg.norm(y_time - y) / np.linalg.norm(y):.1e}")

# %%
# With the direct link removed and every element hopping, subcarrier 0
# receives nothing and each SC carries the echo of its lower neighbour.
bare = ChannelRealization.from_taps(np.zeros_like(small.taps_ub), small.taps_ur, small.taps_rb, 8)
x = np.zeros(7, dtype=complex)
x[2] = 1.0
energy = np.sum(np.abs(noiseless_rx(x, np.zeros(8), theta, bare)) ** 2, axis=1)
print("energy per SC for a lone symbol on SC 2:", np.round(energy, 4))
