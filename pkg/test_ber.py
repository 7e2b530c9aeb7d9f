#!/usr/bin/env python3
"""理论误码率测试"""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from modules.channel.channel import ChannelCoefficients
from modules.link.link import LinkConfig, link_coefficients, run_link
from modules.ber.ber import (
    q_function, slot_stats, theoretical_ber, qcsk_theoretical_ber, throughput, ber_report,
    ber_curve, optimal_threshold, qcsk_thresholds, optimal_qcsk_thresholds, paired_main_tap,
    BerEvaluator, receiver_taps
)
from utils.errors import DomainError, EnumerationLimitError


def _two_tap_channel():
    p = np.zeros((2, 2, 2))
    p[0, 1] = p[1, 0] = [0.12, 0.05]
    p[0, 0] = p[1, 1] = [0.20, 0.08]
    return ChannelCoefficients(t_s=0.3, T_c=0.0, K=2, p=p, phi=p.copy())


def _config(**kwargs):
    values = dict(n1=300, t_s=0.3, tau_m=0.1, sigma_noise_sq=100.0, d_sic=True, seed=3)
    values.update(kwargs)
    return LinkConfig(**values)


def test_q_function():
    assert float(q_function(0.0)) == pytest.approx(0.5)
    assert float(q_function(1.0)) == pytest.approx(0.158655253931457, rel=1e-12)


def test_brute_force_oracle():
    config = _config()
    coeffs = _two_tap_channel()
    assert config.memory == 2
    g = coeffs.p[0, 1]
    h = coeffs.p[1, 1]
    tau = config.tau_m * config.n1
    n1 = config.n1

    errors = []
    for x0, x1, y0, y1 in itertools.product((0, 1), repeat=4):
        mu = n1 * (x0 * g[0] + x1 * g[1] + y0 * h[0] + y1 * h[1]) - n1 * y0 * h[0]
        var = config.sigma_noise_sq + n1 * (
            x0 * g[0] * (1 - g[0]) + x1 * g[1] * (1 - g[1])
            + y0 * h[0] * (1 - h[0]) + y1 * h[1] * (1 - h[1])
        )
        above = 0.5 * math.erfc((tau - mu) / math.sqrt(var) / math.sqrt(2.0))
        errors.append(above if x0 == 0 else 1.0 - above)
    expected = sum(errors) / len(errors)

    ber, per_receiver = theoretical_ber(config, coeffs, per_receiver=True)
    assert ber == pytest.approx(expected, abs=1e-12)
    assert per_receiver[0] == pytest.approx(per_receiver[1], abs=1e-15)


def test_slot_stats():
    config = _config()
    stats = slot_stats([0, 1], [1, 1], _two_tap_channel(), config, j=2)
    assert stats.mu == pytest.approx(300 * (0.12 + 0.08))
    expected_var = 100 + 300 * (0.12 * 0.88 + 0.20 * 0.80 + 0.08 * 0.92)
    assert stats.sigma_sq == pytest.approx(expected_var)
    with pytest.raises(DomainError):
        slot_stats([0, 1, 1], [0, 1, 1], _two_tap_channel(), config)


def test_enumeration_fallback():
    config = _config(enum_cap_bits=2, mc_sequences=20000)
    report = ber_report(config, _two_tap_channel())
    assert report.method == 'monte_carlo'
    exact = theoretical_ber(_config(), _two_tap_channel())
    assert report.ber == pytest.approx(exact, abs=0.01)
    with pytest.raises(EnumerationLimitError):
        theoretical_ber(config.with_(mc_fallback=False), _two_tap_channel())


def test_ber_requires_enough_taps():
    config = _config(t_s=0.1)
    with pytest.raises(DomainError):
        theoretical_ber(config, _two_tap_channel())


def test_throughput():
    assert throughput(1, 0.0, 0.1) == pytest.approx(10.0)
    assert throughput(2, 0.5, 0.2) == pytest.approx(5.0)
    with pytest.raises(DomainError):
        throughput(1, 1.5, 0.1)
    with pytest.raises(DomainError):
        throughput(1, 0.1, 0.0)


@given(tau=st.floats(0.0, 1.0))
def test_ber_in_unit_interval(tau):
    ber = theoretical_ber(_config(tau_m=tau), _two_tap_channel())
    assert 0.0 <= ber <= 1.0


def test_curve_matches_pointwise():
    config = _config()
    coeffs = _two_tap_channel()
    taus = np.linspace(0.0, 0.3, 7)
    curve = ber_curve(config, coeffs, taus)
    for tau, value in zip(taus, curve):
        assert value == pytest.approx(theoretical_ber(config.with_(tau_m=float(tau)), coeffs), abs=1e-12)


def test_optimal_threshold_not_worse_than_grid():
    config = _config()
    coeffs = _two_tap_channel()
    taus = np.linspace(0.0, 0.3, 31)
    tau_star, ber_star = optimal_threshold(config, coeffs, taus)
    assert ber_star <= ber_curve(config, coeffs, taus).min() + 1e-15
    assert 0.0 <= tau_star <= 0.3


def test_qcsk_threshold_family():
    assert qcsk_thresholds(600, 1.0, 0.0) == pytest.approx((100.0, 300.0, 500.0))
    assert qcsk_thresholds(600, 1.0, 0.1) == pytest.approx((160.0, 360.0, 560.0))


def test_qcsk_search(reference_model):
    config = _config(scheme='QCSK', n1=500, duplex='HD', d_sic=False)
    coeffs = link_coefficients(reference_model, config)
    thresholds, ser = optimal_qcsk_thresholds(config, coeffs)
    assert thresholds[0] < thresholds[1] < thresholds[2]
    family = qcsk_theoretical_ber(config.with_(qcsk_thresholds=qcsk_thresholds(500, 1.0, 0.0)), coeffs)
    assert ser <= family + 1e-9


def test_qcsk_search_follows_received_levels(reference_model):
    config = _config(scheme='QCSK', n1=500, duplex='HD', d_sic=False)
    coeffs = link_coefficients(reference_model, config)
    g0 = paired_main_tap(config, coeffs)
    assert 0.1 < g0 < 0.5

    thresholds, ser = optimal_qcsk_thresholds(config, coeffs)
    # 最高阈值落在最高接收电平之下
    assert thresholds[2] < 500 * g0
    assert ser < 0.15
    midpoints = qcsk_theoretical_ber(config.with_(qcsk_thresholds=qcsk_thresholds(500, g0, 0.0)), coeffs)
    assert ser <= midpoints + 1e-9

    fixed, fixed_ser = optimal_qcsk_thresholds(config, coeffs, gains=[1.0], offsets=[0.0])
    assert fixed == pytest.approx(qcsk_thresholds(500, 1.0, 0.0))
    assert fixed_ser > 0.4


def test_theory_matches_simulation(reference_model):
    config = LinkConfig(n1=500, t_s=0.3, tau_m=0.1, d_sic=True, n_symbols=20000, seed=4)
    coeffs = link_coefficients(reference_model, config)
    theory = theoretical_ber(config, coeffs)
    result = run_link(config, coeffs)
    assert abs(result.ber - theory) < 3 * math.sqrt(max(theory, 1e-4) / 40000) + 0.01


def test_half_duplex_tap_accounting(reference_model):
    hd = LinkConfig(n1=500, t_s=0.2, duplex='HD', d_sic=False)
    assert hd.slot_duration == pytest.approx(0.1)
    assert hd.memory == 3
    assert hd.tap_count == 6
    coeffs = link_coefficients(reference_model, hd)
    assert coeffs.t_s == pytest.approx(0.1)
    assert coeffs.K == 6

    edges = np.arange(7) * 0.1
    paired = np.diff(reference_model.cdf(1, 2, edges))
    own = np.diff(reference_model.cdf(2, 2, edges))
    g, h, subtract = receiver_taps(coeffs, hd, 2)
    assert np.allclose(g, paired[0::2], atol=1e-12)
    assert np.allclose(h, own[1::2], atol=1e-12)
    assert subtract == 0.0

    # 物理时隙相同的全双工系统共享主抽头
    fd = LinkConfig(n1=500, t_s=0.1, d_sic=True)
    g_fd, h_fd, subtract_fd = receiver_taps(link_coefficients(reference_model, fd), fd, 2)
    assert g_fd[0] == pytest.approx(g[0], abs=1e-12)
    assert subtract_fd == pytest.approx(own[0], abs=1e-12)
    assert h_fd[1] == pytest.approx(h[0], abs=1e-12)


def test_evaluator_row(reference_model):
    base = LinkConfig(n1=500, t_s=0.2, d_sic=True, a_sic=True)
    evaluator = BerEvaluator(reference_model, base)
    row = evaluator.row(0.05, [0.05, 0.1])
    assert row[1] == pytest.approx(evaluator(0.1, 0.05), abs=1e-15)


@pytest.mark.slow
def test_full_duplex_reference_point(reference_model):
    config = LinkConfig(n1=500, t_s=0.2, d_sic=True)
    coeffs = link_coefficients(reference_model, config)
    _, ber = optimal_threshold(config, coeffs, np.linspace(0.0, 0.25, 51))
    assert 1e-4 < ber < 5e-2


@pytest.mark.slow
def test_half_duplex_reference_point(reference_model):
    config = LinkConfig(n1=500, t_s=0.2, duplex='HD', d_sic=False)
    coeffs = link_coefficients(reference_model, config)
    _, ber = optimal_threshold(config, coeffs, np.linspace(0.0, 0.5, 101))
    assert 1e-6 < ber < 1e-2
