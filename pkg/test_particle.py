#!/usr/bin/env python3
"""粒子仿真测试"""

import numpy as np
import pytest

from modules.topology.topology import SystemTopology, build_frame, transmitter_position
from modules.channel.channel import single_receiver_cdf, channel_coefficients
from modules.particle.particle import (
    SimConfig, run_simulation, brownian_step, empirical_channel_taps, max_cdf_gap
)
from utils.errors import DomainError


def _config(topology, i=1, **kwargs):
    values = dict(n_molecules=3000, dt=1e-4, t_end=0.05, seed=7)
    values.update(kwargs)
    return SimConfig(
        topology=topology,
        emitter=transmitter_position(topology, build_frame(topology), i),
        emitter_index=i,
        **values
    )


def test_brownian_step_variance():
    rng = np.random.default_rng(1)
    steps = brownian_step(np.zeros((1_000_000, 3)), 100.0, 1e-5, rng)
    variance = steps.var(axis=0)
    assert np.allclose(variance, 2e-3, rtol=0.01)
    rho = np.corrcoef(steps, rowvar=False)
    assert np.all(np.abs(rho[np.triu_indices(3, k=1)]) < 0.01)


def test_brownian_step_without_diffusion():
    rng = np.random.default_rng(1)
    pos = np.array([1.0, 2.0, 3.0])
    out = brownian_step(pos, 0.0, 1e-3, rng)
    assert np.array_equal(out, pos)
    assert out is not pos


def test_conservation(reference_topology):
    result = run_simulation(_config(reference_topology))
    assert result.absorbed(1) + result.absorbed(2) + result.survivors == result.total
    receivers, times = result.fates()
    assert np.count_nonzero(receivers == 0) == result.survivors
    assert np.all(np.isinf(times[receivers == 0]))
    assert np.all(times[receivers > 0] <= result.t_end + 1e-12)


def test_thread_count_does_not_change_result(reference_topology):
    config = _config(reference_topology, n_molecules=2500, block_size=512)
    single = run_simulation(config, threads=1)
    multi = run_simulation(config, threads=4)
    for j in (1, 2):
        assert np.array_equal(single.hits[j - 1], multi.hits[j - 1])
        assert np.array_equal(single.hit_ids[j - 1], multi.hit_ids[j - 1])
    assert single.to_frame().equals(multi.to_frame())


def test_same_seed_same_result(reference_topology):
    a = run_simulation(_config(reference_topology, n_molecules=1000))
    b = run_simulation(_config(reference_topology, n_molecules=1000))
    c = run_simulation(_config(reference_topology, n_molecules=1000, seed=8))
    assert a.to_frame().equals(b.to_frame())
    assert not a.to_frame().equals(c.to_frame())


def test_emitter_inside_receiver_rejected(reference_topology):
    frame = build_frame(reference_topology)
    center = (0.0, 0.0, reference_topology.ell - frame.a)
    with pytest.raises(DomainError):
        run_simulation(SimConfig(reference_topology, center, 10, 1e-4, 0.01, seed=1))


def test_invalid_config_rejected(reference_topology):
    with pytest.raises(DomainError):
        _config(reference_topology, dt=0.0)
    with pytest.raises(DomainError):
        _config(reference_topology, t_end=1e-5, dt=1e-4)


def test_replication_statistics(reference_topology):
    result = run_simulation(_config(reference_topology, n_molecules=500, replications=3))
    assert result.total == 1500
    t = np.array([0.01, 0.05])
    per_rep = result.replication_cdf(1, t)
    mean, stderr = result.cdf_statistics(1, t)
    assert per_rep.shape == (3, 2)
    assert np.allclose(mean, result.empirical_cdf(1, t))
    assert np.all(stderr >= 0)


def test_empirical_taps(reference_topology):
    result = run_simulation(_config(reference_topology, i=2, n_molecules=1000, t_end=0.1))
    taps = empirical_channel_taps(result, 0.05, 0.01, K=2)
    assert np.all(np.isnan(taps.p[0]))
    assert np.all(taps.phi[1] <= taps.p[1] + 1e-15)
    with pytest.raises(DomainError):
        empirical_channel_taps(result, 0.05, K=3)


def _single_sphere_gap(n_molecules, dt, threads=1):
    topo = SystemTopology.collinear(r_r1=5.0, r_r2=5e-6, d1=3.5, d2=1.5, ell=15.0, D=100.0)
    result = run_simulation(_config(topo, n_molecules=n_molecules, dt=dt, t_end=0.1, seed=3), threads=threads)
    t = np.arange(1, 1001) * 1e-4
    return np.max(np.abs(result.empirical_cdf(1, t) - single_receiver_cdf(5.0, 3.5, 100.0, t)))


def test_single_sphere_oracle():
    assert _single_sphere_gap(20000, 1e-4) < 0.025


@pytest.mark.slow
def test_single_sphere_oracle_fine_step():
    assert _single_sphere_gap(100000, 1e-5, threads=4) < 0.01


@pytest.mark.slow
def test_matches_analytic_channel(reference_topology, reference_model):
    result = run_simulation(_config(reference_topology, n_molecules=10000, dt=1e-4, t_end=0.1, seed=11))
    assert max_cdf_gap(result, reference_model) < 0.03


@pytest.mark.slow
def test_empirical_taps_match_analytic(reference_topology, reference_model):
    config = _config(reference_topology, n_molecules=30000, dt=1e-5, t_end=0.6, seed=13)
    result = run_simulation(config, threads=4)
    simulated = empirical_channel_taps(result, 0.15, K=4)
    analytic = channel_coefficients(reference_model, 0.15, K=4)
    assert np.max(np.abs(simulated.p[0] - analytic.p[0])) < 0.02
