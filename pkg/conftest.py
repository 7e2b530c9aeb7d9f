import os
import sys

import hypothesis
import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from modules.topology.topology import SystemTopology
from modules.channel.channel import ChannelModel

np.seterr(all="warn")

hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=200, deadline=None)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "fast"))

REFERENCE_INI = """\
[topology]
r_r1_um = 5
r_r2_um = 5
d1_um = 1.5
d2_um = 1.5
ell_um = 15
diffusion_um2_per_s = 100

[channel]
t_max_s = 0.6
t_points = 61
impulse_dt_s = 0.01
t_s_s = 0.15

[simulation]
n_molecules = 500
dt_s = 0.001
t_end_s = 0.05

[link]
n1 = 500
t_s_s = 0.3
n_symbols = 500
tau_m_points = 5
"""


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: 运行时间较长的数值验收测试")


@pytest.fixture(scope="session")
def reference_topology():
    """默认参数：r=5µm，d1=d2=1.5µm，ell=15µm，D=100µm²/s"""
    return SystemTopology.collinear(r_r1=5.0, r_r2=5.0, d1=1.5, d2=1.5, ell=15.0, D=100.0)


@pytest.fixture(scope="session")
def reference_model(reference_topology):
    return ChannelModel(reference_topology)


@pytest.fixture(scope="session")
def asymmetric_topology():
    return SystemTopology.collinear(r_r1=4.0, r_r2=6.0, d1=2.0, d2=1.0, ell=16.0, D=80.0)


@pytest.fixture
def reference_ini(tmp_path):
    path = tmp_path / "reference.ini"
    path.write_text(REFERENCE_INI, encoding="utf-8")
    return str(path)
