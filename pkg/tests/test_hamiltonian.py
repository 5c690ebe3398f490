import numpy as np
import pytest
from hypothesis import given, settings, strategies as hs

import stochtarget as st
from stochtarget.model import Box, refine_resolution


def linear_y_drift_model(slope):
    """mu_y = slope * y with sigma_y = u, unit sigma_x; reduced drift slope*y."""
    def mu_x(t, x, a):
        return np.zeros_like(x)

    def sigma_x(t, x, a):
        return np.ones(np.shape(x) + (1,))

    def mu_y(t, x, y, u, a):
        return slope * np.asarray(y, dtype=float)

    def sigma_y(t, x, y, u, a):
        return np.asarray(u, dtype=float)

    return st.GameModel(
        mu_x=mu_x, sigma_x=sigma_x, mu_y=mu_y, sigma_y=sigma_y,
        g=lambda x: np.zeros(np.shape(x)[:-1]),
        u_hat=lambda t, x, y, z, a: np.asarray(z, dtype=float),
        control_set_u=Box.from_pairs([[-50, 50]]),
        adverse_set_a=Box.from_pairs([[0, 1]]),
        state_box=Box.from_pairs([[-1, 1]]),
        horizon=1.0, lipschitz_k=max(abs(slope), 1.0), growth_l=1.0, g_bound=0.0)


def constant_y_drift_model(value):
    m = linear_y_drift_model(0.0)

    def mu_y(t, x, y, u, a):
        return np.full(np.shape(np.asarray(y, dtype=float)), float(value))

    return st.GameModel(
        mu_x=m.mu_x, sigma_x=m.sigma_x, mu_y=mu_y, sigma_y=m.sigma_y, g=m.g,
        u_hat=m.u_hat, control_set_u=m.control_set_u, adverse_set_a=m.adverse_set_a,
        state_box=m.state_box, horizon=1.0, lipschitz_k=1.0,
        growth_l=abs(value) + 1.0, g_bound=0.0)


class TestPerControlGenerator:
    def test_zero_coefficients(self, zmodel):
        assert st.h_ua(zmodel, 0.3, [0.0], 1.0, [0.5], [0.1], [0.0], [[0.0]]) == 0.0

    def test_uncertain_vol_hand_value(self, uv_model):
        # 0.5 * (a x)^2 * m with a=0.3, x=1, m=2
        val = st.h_ua(uv_model, 0.0, [1.0], 0.0, [0.0], [0.3], [0.0], [[2.0]])
        assert val == pytest.approx(0.09, abs=1e-15)

    def test_finite_difference_generator_cross_check(self, uv_model):
        # apply the generator to phi(x) = x^2 via finite differences and
        # compare with h_ua at the analytic (p, m) of phi
        x0, a, h = 1.0, 0.3, 1e-4

        def phi(x):
            return x ** 2

        p_fd = (phi(x0 + h) - phi(x0 - h)) / (2 * h)
        m_fd = (phi(x0 + h) - 2 * phi(x0) + phi(x0 - h)) / h ** 2
        val_fd = st.h_ua(uv_model, 0.0, [x0], 0.0, [0.0], [a], [p_fd], [[m_fd]])
        val = st.h_ua(uv_model, 0.0, [x0], 0.0, [0.0], [a], [2 * x0], [[2.0]])
        assert val_fd == pytest.approx(val, rel=1e-6)

    def test_constant_drift_five(self):
        m = constant_y_drift_model(5.0)
        assert st.h_ua(m, 0.0, [0.0], 0.0, [0.0], [0.5], [0.0], [[0.0]]) == -5.0

    def test_asymmetric_hessian_rejected(self, uv_model):
        with pytest.raises(st.PreconditionError):
            st.h_ua(st.uncertain_volatility(x_hi=4.0), 0.0, [1.0, 1.0], 0.0,
                    [0.0], [0.3], [0.0, 0.0], [[0.0, 1.0], [0.0, 0.0]])


class TestGameSup:
    def test_singleton_box_equals_h_ua(self, uv_model):
        m = st.uncertain_volatility(vol_lo=0.2, vol_hi=0.2)
        ev = st.h(m, 0.0, [1.0], 0.0, [1.0], [[2.0]], a_res=1)
        z = 0.2 * 1.0 * 1.0
        u = z / (0.2 * 1.0)
        direct = st.h_ua(m, 0.0, [1.0], 0.0, [u], [0.2], [1.0], [[2.0]])
        assert ev.value == direct
        assert ev.argmax_a == pytest.approx([0.2])

    def test_convex_case_oracle(self, uv_model):
        # oracle: dense 1e5-point grid over [0.1, 0.3] of 0.5 a^2 x^2 m
        a_dense = np.linspace(0.1, 0.3, 100001)
        oracle = float(np.max(0.5 * a_dense ** 2 * 1.0 * 2.0))
        ev = st.h(uv_model, 0.0, [1.0], 0.0, [0.0], [[2.0]], a_res=101)
        assert ev.value == pytest.approx(oracle, abs=1e-12)
        assert oracle == pytest.approx(0.09, abs=1e-12)
        assert ev.argmax_a == pytest.approx([0.3])

    def test_concave_case_oracle(self, uv_model):
        a_dense = np.linspace(0.1, 0.3, 100001)
        oracle = float(np.max(0.5 * a_dense ** 2 * 1.0 * (-2.0)))
        ev = st.h(uv_model, 0.0, [1.0], 0.0, [0.0], [[-2.0]], a_res=101)
        assert ev.value == pytest.approx(oracle, abs=1e-12)
        assert oracle == pytest.approx(-0.01, abs=1e-12)
        assert ev.argmax_a == pytest.approx([0.1])

    def test_u_substitution_uses_sigma_x_p(self, uv_model):
        # with p != 0, u_at_argmax must equal u_hat at z = sigma_x p = a x p
        ev = st.h(uv_model, 0.0, [2.0], 0.0, [0.7], [[1.0]], a_res=5)
        a = ev.argmax_a[0]
        z = a * 2.0 * 0.7
        assert ev.u_at_argmax == pytest.approx([z / (a * 2.0)])

    def test_tie_broken_lexicographically_smallest(self):
        m = st.constant_coefficients()     # generator independent of a
        ev = st.h(m, 0.0, [0.5], 0.0, [1.0], [[1.0]], a_res=7)
        assert ev.argmax_a == pytest.approx([m.adverse_set_a.lo[0]])

    @settings(max_examples=20, deadline=None)
    @given(hs.integers(min_value=2, max_value=17))
    def test_refinement_never_decreases_sup(self, n):
        m = st.uncertain_volatility()
        coarse = st.h(m, 0.0, [1.5], 0.0, [0.4], [[1.3]], a_res=n).value
        fine = st.h(m, 0.0, [1.5], 0.0, [0.4], [[1.3]],
                    a_res=int(refine_resolution(n)[0])).value
        assert fine >= coarse - 1e-15

    def test_positive_homogeneity_on_uncertain_vol(self, uv_model):
        for lam in (0.5, 2.0, 7.0):
            base = st.h(uv_model, 0.0, [1.0], 0.0, [0.0], [[3.0]], a_res=33).value
            scaled = st.h(uv_model, 0.0, [1.0], 0.0, [0.0], [[3.0 * lam]], a_res=33).value
            assert scaled == pytest.approx(lam * base, rel=1e-12)


class TestSelectScaling:
    def test_y_independent_drift_first_candidate(self, uv_model):
        rs = st.select_scaling(uv_model, 200, seed=1)
        assert rs.c == uv_model.growth_l + 1.0
        assert rs.monotone_verified

    def test_linear_decay_verifies_at_first_candidate(self):
        m = linear_y_drift_model(-1.0)   # growth_l = 1
        rs = st.select_scaling(m, 300, seed=2)
        assert rs.c == pytest.approx(2.0)   # c = L + 1 >= L suffices
        assert rs.monotone_verified

    def test_stiff_drift_escalates(self):
        # slope -5L with declared growth_l = L = 1: c must reach >= 5
        m = linear_y_drift_model(-5.0)
        rs = st.select_scaling(m, 300, seed=3)
        assert rs.c >= 5.0
        assert rs.c == pytest.approx(8.0)   # 2 -> 4 -> 8 doubling from L+1
        assert rs.monotone_verified

    def test_cap_raises_scaling_error(self):
        m = linear_y_drift_model(-5.0)
        with pytest.raises(st.ScalingError):
            st.select_scaling(m, 300, seed=3, c_max=3.0)


class TestRescaledSup:
    def test_c_zero_is_identity(self, uv_model):
        rs = st.Rescaling(c=0.0, monotone_verified=True, check_grid={})
        for m_val in (-1.0, 0.0, 2.0):
            a = st.h(uv_model, 0.2, [1.5], 0.7, [0.3], [[m_val]], a_res=17)
            b = st.h_tilde(uv_model, rs, 0.2, [1.5], 0.7, [0.3], [[m_val]], a_res=17)
            assert b.value == a.value
            assert np.array_equal(b.argmax_a, a.argmax_a)

    def test_only_cy_term_survives(self, uv_model):
        # mu_y = 0, p = 0, m = 0, t = 0: the rescaled sup reduces to -c y
        rs = st.Rescaling(c=1.0, monotone_verified=True, check_grid={})
        ev = st.h_tilde(uv_model, rs, 0.0, [1.0], 2.0, [0.0], [[0.0]], a_res=9)
        assert ev.value == pytest.approx(-2.0, abs=1e-15)

    def test_substitution_identity_random_points(self):
        # h_tilde(t, x, e^{ct} y, e^{ct} p, e^{ct} m) + c e^{ct} y
        #   == e^{ct} h(t, x, y, p, m), evaluated on the same adverse grid
        m = linear_y_drift_model(-1.5)
        rs = st.Rescaling(c=2.5, monotone_verified=True, check_grid={})
        rng = np.random.default_rng(42)
        for _ in range(100):
            t = rng.uniform(0, 1)
            x = rng.uniform(-1, 1, size=1)
            y = rng.uniform(-2, 2)
            p = rng.uniform(-1, 1, size=1)
            mm = rng.uniform(-2, 2, size=(1, 1))
            s = np.exp(rs.c * t)
            lhs = st.h_tilde(m, rs, t, x, s * y, s * p, s * mm, a_res=7).value \
                + rs.c * s * y
            rhs = s * st.h(m, t, x, y, p, mm, a_res=7).value
            assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)

    def test_decreasing_in_y_after_rescaling(self):
        # reduced drift -L y with L = 1: the rescaled sup moves down in y at
        # exactly rate c - L
        L = 1.0
        m = linear_y_drift_model(-L)
        rs = st.select_scaling(m, 200, seed=4)
        y1, y2 = 0.3, 1.1
        h1 = st.h_tilde(m, rs, 0.4, [0.2], y1, [0.1], [[0.5]], a_res=7).value
        h2 = st.h_tilde(m, rs, 0.4, [0.2], y2, [0.1], [[0.5]], a_res=7).value
        assert h2 - h1 <= -(rs.c - L) * (y2 - y1) + 1e-9

    def test_unverified_rescaling_rejected(self, uv_model):
        rs = st.Rescaling(c=1.0, monotone_verified=False, check_grid={})
        with pytest.raises(st.PreconditionError):
            st.h_tilde(uv_model, rs, 0.0, [1.0], 0.0, [0.0], [[0.0]], a_res=3)
