import numpy as np
import pytest

from forestsel.data import CATEGORICAL, NUMERIC_CONTINUOUS, Column, Dataset


def numeric(name, values, kind=NUMERIC_CONTINUOUS):
    return Column(name, kind, np.asarray(values, dtype=float))


def categorical(name, codes, n_levels=None):
    codes = np.asarray(codes, dtype=np.int64)
    L = int(codes.max()) + 1 if n_levels is None else n_levels
    return Column(name, CATEGORICAL, codes, tuple(f"l{i}" for i in range(L)))


def make_dataset(columns, y, **kw):
    return Dataset(tuple(columns), np.asarray(y), **kw)


@pytest.fixture
def toy6():
    """x = 1..6, y = (0,0,0,5,5,5)."""
    return make_dataset([numeric("x", np.arange(1, 7))], [0, 0, 0, 5, 5, 5])


@pytest.fixture
def small_sim():
    from forestsel.simgen import SimSpec, simulate

    return simulate(SimSpec(p=4, n=150, beta_seed=3, data_seed=4))
