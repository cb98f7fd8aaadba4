import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from virocontrol import Field, InitialData, ModelParams, build_grid

from _oracles import smooth_bump


@pytest.fixture
def params():
    return ModelParams(alpha=0.5, beta=1.0, delta1=0.2, delta2=0.4,
                       delta_v=0.6, b=2.0, B=0.5, u_cap=1.0)


@pytest.fixture
def grid8():
    return build_grid(2, [1.0, 1.0], [8, 8])


@pytest.fixture
def bumpy_init(grid8):
    g = grid8
    return InitialData(
        rho1_0=Field(g, 0.2 + smooth_bump(g, (0.4, 0.6), 0.15, 0.1)),
        rho2_0=Field.full(g, 0.05),
        v_0=Field(g, smooth_bump(g, (0.5, 0.5), 0.2, 0.15)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
