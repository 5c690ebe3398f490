import numpy as np
import pytest

import stochtarget as st


@pytest.fixture(scope="session")
def uv_model():
    return st.uncertain_volatility()


@pytest.fixture(scope="session")
def uv_rate_model():
    return st.uncertain_volatility(rate=0.05)


@pytest.fixture(scope="session")
def const_model():
    return st.constant_coefficients()


@pytest.fixture(scope="session")
def drift_model():
    return st.controlled_drift()


@pytest.fixture(scope="session")
def zmodel():
    return st.zero_model()


@pytest.fixture(scope="session")
def uv_grid_small(uv_model):
    return st.make_grid(uv_model, n_x=101, n_t_min=100, a_res=9)


@pytest.fixture(scope="session")
def uv_surface_small(uv_model, uv_grid_small):
    return st.solve_hjb(uv_model, uv_grid_small, a_res=9)


@pytest.fixture(scope="session")
def const_grid(const_model):
    return st.make_grid(const_model, n_x=81, n_t_min=80, a_res=3)


@pytest.fixture(scope="session")
def const_surface(const_model, const_grid):
    return st.solve_hjb(const_model, const_grid, a_res=3)


@pytest.fixture(scope="session")
def drift_grid(drift_model):
    return st.make_grid(drift_model, n_x=81, n_t_min=80, a_res=5)


@pytest.fixture(scope="session")
def drift_surface(drift_model, drift_grid):
    return st.solve_hjb(drift_model, drift_grid, a_res=5)


def black_scholes_call(x, strike, tau, sigma, rate=0.0):
    from scipy.stats import norm
    x = np.asarray(x, dtype=float)
    out = np.maximum(x - strike, 0.0)
    if tau <= 0:
        return out
    pos = x > 0
    sq = sigma * np.sqrt(tau)
    d1 = (np.log(x[pos] / strike) + (rate + 0.5 * sigma ** 2) * tau) / sq
    d2 = d1 - sq
    out[pos] = x[pos] * norm.cdf(d1) - strike * np.exp(-rate * tau) * norm.cdf(d2)
    return out
