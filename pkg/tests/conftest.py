import numpy as np
import pytest

from marsala.waveform import ModCod, PulseShape


@pytest.fixture(scope="session")
def pulse():
    return PulseShape(rolloff=0.2, span_symbols=40, oversampling=4, symbol_period=1.0)


@pytest.fixture(scope="session")
def qpsk():
    return ModCod(modulation_order=4, code_rate=1.0 / 3.0, decode_threshold_db=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
