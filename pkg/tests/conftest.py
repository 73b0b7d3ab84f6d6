"""Shared strategies and helpers for the test suite."""
import numpy as np
import pytest
from hypothesis import strategies as st

from chimp.network import ChimpParams, materialize


def random_valid_measure(n, rng, scale=0.4, allow_dead=True):
    """A random capacity, monotone by construction from random raw weights."""
    low = -0.2 if allow_dead else 0.0
    params = ChimpParams(
        n,
        rng.uniform(low, scale, n),
        rng.uniform(low, scale, (1 << n) - n - 1),
    )
    return materialize(params).g


@st.composite
def raw_params(draw, n=None, min_n=2, max_n=5):
    n = n if n is not None else draw(st.integers(min_n, max_n))
    count = (1 << n) - 1
    values = draw(
        st.lists(
            st.floats(-1.0, 1.0, allow_nan=False, width=32),
            min_size=count,
            max_size=count,
        )
    )
    return ChimpParams(n, np.array(values[:n]), np.array(values[n:]))


@st.composite
def measures(draw, n=None, min_n=2, max_n=5):
    """Valid capacities with a mix of live and ReLU-dead raw weights."""
    params = draw(raw_params(n=n, min_n=min_n, max_n=max_n))
    return materialize(params).g


@st.composite
def observations(draw, n, low=-1.0, high=1.0, with_ties=False):
    if with_ties:
        grid = [round(low + (high - low) * k / 8, 6) for k in range(9)]
        values = draw(st.lists(st.sampled_from(grid), min_size=n, max_size=n))
    else:
        values = draw(
            st.lists(
                st.floats(low, high, allow_nan=False, width=32),
                min_size=n,
                max_size=n,
            )
        )
    return np.array(values, dtype=float)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
