import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from frmofdm.channel import ChannelRealization, rayleigh_realization
from frmofdm.frm import (EquivalentChannel, OfdmFrame, RisMessage, bpsk, check_unit_modulus,
                         get_constellation, group_expand, noiseless_rx, qpsk, random_phases,
                         simulate_rx, simulate_rx_orm, simulate_time_domain)


class TestGrouping:
    @pytest.mark.parametrize("c, L, s", [
        ([1, 0], 2, [1, 1, 0, 0]),
        ([1, 0, 1], 3, [1, 1, 1, 0, 0, 0, 1, 1, 1]),
        ([0, 1, 1], 1, [0, 1, 1]),
    ])
    def test_expand(self, c, L, s):
        np.testing.assert_array_equal(group_expand(c, L), s)

    @given(st.lists(st.integers(0, 1), min_size=1, max_size=10), st.integers(1, 5))
    def test_regroup_idempotent(self, c, L):
        s = group_expand(c, L)
        np.testing.assert_array_equal(group_expand(s, 1), s)
        np.testing.assert_array_equal(s[::L], c)

    def test_bad_group(self):
        with pytest.raises(ValueError):
            group_expand([1], 0)

    def test_message(self):
        msg = RisMessage(np.array([1, 0]), 3)
        assert msg.n_blocks == 2
        np.testing.assert_array_equal(msg.states, [1, 1, 1, 0, 0, 0])


class TestConstellation:
    def test_qpsk_gray_unit_energy(self):
        c = qpsk()
        assert np.mean(np.abs(c.points) ** 2) == pytest.approx(1.0)
        # neighbours differ in exactly one bit
        for i in range(4):
            for j in range(4):
                if np.isclose(abs(c.points[i] - c.points[j]), np.sqrt(2)):
                    assert np.sum(c.labels[i] != c.labels[j]) == 1

    def test_lookup(self):
        assert get_constellation("BPSK").order == 2
        with pytest.raises(ValueError):
            get_constellation("16qam")

    def test_frame_scaling(self, rng):
        f = OfdmFrame.random(8, 4.0, rng)
        np.testing.assert_allclose(np.abs(f.symbols), 2.0)
        assert f.padded[0] == 0 and f.padded[-1] == 0 and len(f.padded) == 9

    def test_unit_modulus_check(self):
        check_unit_modulus(np.exp(1j * np.arange(4)))
        with pytest.raises(ValueError):
            check_unit_modulus(np.array([1.0, 1.01]))


class TestSimulateRx:
    def test_all_static(self, small, rng):
        ch, theta = small
        x = qpsk().points[rng.integers(0, 4, 3)]
        y = simulate_rx(x, np.ones(4), theta, ch, 0.0, rng)
        xk = np.append(x, 0)
        np.testing.assert_allclose(y, xk[:, None] * (ch.h_ub + ch.H @ theta))

    def test_all_hopping(self, small, rng):
        ch, theta = small
        x = qpsk().points[rng.integers(0, 4, 3)]
        y = simulate_rx(x, np.zeros(4), theta, ch, 0.0, rng)
        for k in range(ch.K):
            expected = (x[k] * ch.h_ub[k] if k < 3 else 0) + (x[k - 1] * ch.H_tilde[k] @ theta if k else 0)
            np.testing.assert_allclose(y[k], expected)

    def test_guards(self, small, rng):
        ch, theta = small
        x = np.ones(3)
        y0 = noiseless_rx(x, np.zeros(4), theta, ch.scaled(ub=0.0))
        np.testing.assert_array_equal(y0[0], 0)  # x_0 = 0 leaves nothing to hop into SC 0
        y1 = noiseless_rx(x, np.ones(4), theta, ch)
        np.testing.assert_array_equal(y1[-1], 0)

    def test_first_subcarrier_is_pure_noise(self, small):
        ch, theta = small
        ch0 = ch.scaled(ub=0.0)
        x = np.ones(3)
        a = simulate_rx(x, np.zeros(4), theta, ch0, 0.5, np.random.default_rng(9))
        w = simulate_rx(np.zeros(3), np.zeros(4), theta, ch0, 0.5, np.random.default_rng(9))
        np.testing.assert_array_equal(a[0], w[0])

    def test_linear_in_x(self, small, rng):
        ch, theta = small
        s = rng.integers(0, 2, 4)
        x1, x2 = rng.standard_normal((2, 3)) + 0j
        y = lambda x: noiseless_rx(x, s, theta, ch)
        np.testing.assert_allclose(y(2 * x1 - 3j * x2), 2 * y(x1) - 3j * y(x2), atol=1e-12)

    def test_shape_checks(self, small, rng):
        ch, theta = small
        with pytest.raises(ValueError):
            noiseless_rx(np.ones(4), np.ones(4), theta, ch)
        with pytest.raises(ValueError):
            noiseless_rx(np.ones(3), np.ones(5), theta, ch)
        with pytest.raises(ValueError):
            noiseless_rx(np.ones(3), np.ones(4), theta, ch, scheme="bogus")

    def test_noise_variance(self, small):
        ch, theta = small
        y = simulate_rx(np.zeros(3), np.ones(4), theta, ch, 0.3, np.random.default_rng(0))
        ys = [simulate_rx(np.zeros(3), np.ones(4), theta, ch, 0.3, np.random.default_rng(i))
              for i in range(2000)]
        assert np.mean(np.abs(np.array(ys)) ** 2) == pytest.approx(0.3, rel=0.05)
        assert y.shape == (4, 2)


class TestOrm:
    def test_all_on_matches_frm(self, small, rng):
        ch, theta = small
        x = rng.standard_normal(3) + 0j
        np.testing.assert_allclose(noiseless_rx(x, np.ones(4), theta, ch, "orm"),
                                   noiseless_rx(x, np.ones(4), theta, ch, "frm"))

    def test_all_off_direct_only(self, small, rng):
        ch, theta = small
        x = rng.standard_normal(3) + 0j
        y = simulate_rx_orm(x, np.zeros(4), theta, ch, 0.0, rng)
        np.testing.assert_allclose(y, np.append(x, 0)[:, None] * ch.h_ub)

    def test_less_power_than_frm(self, rng):
        ch = rayleigh_realization(2, 8, 16, rng)
        theta = random_phases(16, rng)
        frm = orm = 0.0
        for _ in range(200):
            x = qpsk().points[rng.integers(0, 4, 7)]
            s = rng.integers(0, 2, 16)
            frm += np.sum(np.abs(noiseless_rx(x, s, theta, ch, "frm")) ** 2)
            orm += np.sum(np.abs(noiseless_rx(x, s, theta, ch, "orm")) ** 2)
        assert orm < frm


class TestTimeDomain:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_frequency_model(self, seed):
        rng = np.random.default_rng(seed)
        ch = rayleigh_realization(2, 8, 8, rng, taps=(3, 3, 2))
        theta = random_phases(8, rng)
        x = qpsk().points[rng.integers(0, 4, 7)]
        s = rng.integers(0, 2, 8)
        for scheme in ("frm", "orm", "ris-ofdm", "no-ris"):
            y = noiseless_rx(x, s, theta, ch, scheme)
            yt = simulate_time_domain(x, s, theta, ch, scheme=scheme)
            assert np.linalg.norm(yt - y) <= 1e-8 * np.linalg.norm(y)

    def test_single_element_hop(self):
        rng = np.random.default_rng(0)
        ch = ChannelRealization.from_taps(np.zeros((1, 1)), np.ones((1, 1)), np.ones((1, 1, 1)), 8)
        x = np.zeros(7, dtype=complex)
        x[2] = 1.0
        y = simulate_time_domain(x, np.zeros(1), np.ones(1), ch)
        energy = np.abs(y[:, 0]) ** 2
        assert energy[3] == pytest.approx(1.0)
        assert np.sum(energy) - energy[3] < 1e-20

    def test_requires_taps(self, small):
        ch, theta = small
        bare = ChannelRealization(ch.h_ub, ch.h_ur, ch.h_rb)
        with pytest.raises(ValueError):
            simulate_time_domain(np.ones(3), np.ones(4), theta, bare)
        with pytest.raises(ValueError):
            simulate_time_domain(np.ones(3), np.ones(4), theta, ch, oversample=0)


class TestEquivalentChannel:
    def test_k2_m1(self, rng):
        ch = rayleigh_realization(1, 2, 3, rng, taps=(1, 1, 1))
        theta = random_phases(3, rng)
        Hth = EquivalentChannel.build(ch, 1.0, 1.0).H_theta(theta)
        expected = [ch.h_ub[0, 0] + 0.5 * ch.H[0, 0] @ theta, 0.5 * ch.H_tilde[1, 0] @ theta]
        np.testing.assert_allclose(Hth[:, 0], expected)

    def test_direct_only(self, small):
        ch, theta = small
        eq = EquivalentChannel.build(ch.scaled(ur=0.0), 1.0, 1.0)
        Hth = eq.H_theta(theta).reshape(4, 2, 3)
        for k in range(3):
            np.testing.assert_allclose(Hth[k, :, k], ch.h_ub[k])
            np.testing.assert_allclose(Hth[k + 1, :, k], 0)

    def test_bidiagonal_support(self, small):
        ch, theta = small
        Hth = EquivalentChannel.build(ch, 1.0, 1.0).H_theta(theta).reshape(4, 2, 3)
        for k in range(3):
            others = [b for b in range(4) if b not in (k, k + 1)]
            np.testing.assert_array_equal(Hth[others, :, k], 0)

    def test_unknown_scheme(self, small):
        with pytest.raises(ValueError):
            EquivalentChannel.build(small[0], 1.0, 1.0, "bogus")
