#!/usr/bin/env python3
"""链路层测试"""

import numpy as np
import pytest

from modules.channel.channel import ChannelCoefficients
from modules.link.link import (
    LinkConfig, SymbolStream, FatePool, apply_half_duplex, full_duplex_schedule,
    emission_counts, a_sic_keep, a_sic_filter, d_sic_subtract, cancel_self_interference, detect,
    physical_counts, link_coefficients, run_link
)
from modules.ber.ber import ber_curve
from utils.errors import DomainError


def _coefficients(paired=0.5, own=0.3, K=2):
    """手工信道：只有当前符号抽头，配对链路 paired，自干扰 own"""
    p = np.zeros((2, 2, K))
    p[0, 1, 0] = p[1, 0, 0] = paired
    p[0, 0, 0] = p[1, 1, 0] = own
    return ChannelCoefficients(t_s=0.3, T_c=0.0, K=K, p=p, phi=p.copy())


def _config(**kwargs):
    values = dict(n1=500, t_s=0.3, tau_m=0.25, sigma_noise_sq=0.0, n_symbols=4000, seed=5)
    values.update(kwargs)
    return LinkConfig(**values)


def test_levels_and_thresholds():
    assert _config().levels.tolist() == [0, 500]
    qcsk = _config(scheme='QCSK')
    assert qcsk.levels.tolist() == [0, 167, 333, 500]
    assert qcsk.thresholds.tolist() == [83.5, 250.0, 416.5]
    assert qcsk.bits_per_symbol == 2


def test_memory_and_taps():
    config = _config(t_s=0.2)
    assert config.memory == 3
    assert config.tap_count == 3
    hd = config.with_(duplex='HD')
    assert hd.slot_duration == pytest.approx(0.1)
    assert hd.tap_count == 6


def test_config_validation():
    with pytest.raises(DomainError):
        _config(T_c=0.3)
    with pytest.raises(DomainError):
        _config(duplex='HD', T_c=0.2)
    with pytest.raises(DomainError):
        _config(scheme='QCSK', qcsk_thresholds=(100.0, 50.0, 300.0))
    with pytest.raises(DomainError):
        _config(scheme='PSK')


def test_sic_mode_names():
    assert _config(a_sic=False, d_sic=False).sic_mode == 'none'
    assert _config(a_sic=True, d_sic=False).sic_mode == 'A'
    assert _config(a_sic=False, d_sic=True).sic_mode == 'D'
    assert _config(a_sic=True, d_sic=True).sic_mode == 'A+D'


def test_half_duplex_schedule():
    stream = SymbolStream(bits_tx1=np.array([1, 0, 1]), bits_tx2=np.array([0, 1, 1]))
    scheduled = apply_half_duplex(stream)
    assert scheduled.emit[0].tolist() == [1, 0, 0, 0, 1, 0]
    assert scheduled.emit[1].tolist() == [0, 0, 0, 1, 0, 1]
    assert not np.any(scheduled.active[0] & scheduled.active[1])
    assert scheduled.decode_slots[0].tolist() == [1, 3, 5]
    assert scheduled.decode_slots[1].tolist() == [0, 2, 4]


def test_emission_counts_follow_taps():
    p = np.zeros((2, 2, 2))
    p[0, 1, 1] = 1.0
    coeffs = ChannelCoefficients(t_s=0.3, T_c=0.0, K=2, p=p, phi=p.copy())
    stream = SymbolStream(bits_tx1=np.array([1, 0, 1, 1]), bits_tx2=np.array([0, 0, 0, 0]))
    received = emission_counts(coeffs, full_duplex_schedule(stream), [0, 10], np.random.default_rng(0))
    assert received.y[1].tolist() == [0, 10, 0, 10]
    assert received.y[0].tolist() == [0, 0, 0, 0]


def test_a_sic_filter():
    assert a_sic_filter([0.01, 0.02, 0.05, 0.08], 0.05) == 2
    assert a_sic_filter([], 0.05) == 0
    with pytest.raises(DomainError):
        a_sic_filter([0.1], -1.0)


def test_d_sic_subtract():
    assert d_sic_subtract(200.0, 1, 500, 0.3) == pytest.approx(50.0)
    assert d_sic_subtract(200.0, 0, 500, 0.3) == pytest.approx(200.0)
    with pytest.raises(DomainError):
        d_sic_subtract(1.0, 1, 500, 1.5)


def test_detect_ties_go_low():
    bcsk = _config()
    assert detect(125.0, bcsk) == 0
    assert detect(125.01, bcsk) == 1
    qcsk = _config(scheme='QCSK')
    assert detect([0.0, 83.5, 84.0, 250.0, 251.0, 600.0], qcsk).tolist() == [0, 0, 1, 1, 2, 3]


def test_self_interference_without_sic():
    result = run_link(_config(d_sic=False), _coefficients())
    assert 0.2 < result.ber < 0.3


def test_digital_sic_removes_self_interference():
    result = run_link(_config(d_sic=True), _coefficients())
    assert result.ber == 0.0
    assert result.warmup == 2
    assert result.decoded == (3998, 3998)


def test_deterministic_with_seed():
    a = run_link(_config(sigma_noise_sq=100.0), _coefficients(), keep_trace=True)
    b = run_link(_config(sigma_noise_sq=100.0), _coefficients(), keep_trace=True)
    assert a.errors == b.errors
    assert a.trace.equals(b.trace)
    assert list(a.trace.columns) == [
        'slot', 'tx1_bit', 'tx2_bit', 'y_rx1', 'y_rx2', 'decision_rx1', 'decision_rx2'
    ]
    assert len(a.trace) == 4000


def _surface_pools(time=0.1, n=100):
    return {
        1: FatePool(receivers=np.full(n, 2, dtype=np.int8), times=np.full(n, time), horizon=0.6),
        2: FatePool(receivers=np.full(n, 1, dtype=np.int8), times=np.full(n, time), horizon=0.6),
    }


def test_physical_mode_delivers_every_molecule():
    result = run_link(_config(d_sic=False), _coefficients(own=0.0), pools=_surface_pools())
    assert result.ber == 0.0


def test_physical_mode_a_sic_drops_early_molecules():
    config = _config(d_sic=False, a_sic=True, T_c=0.15)
    result = run_link(config, _coefficients(own=0.0), pools=_surface_pools())
    assert 0.4 < result.ber < 0.6


def test_physical_mode_checks_horizon():
    pools = _surface_pools()
    pools[1] = FatePool(receivers=pools[1].receivers, times=pools[1].times, horizon=0.3)
    with pytest.raises(DomainError):
        run_link(_config(), _coefficients(), pools=pools)


def test_analytic_link_runs(reference_model):
    config = LinkConfig(n1=500, t_s=0.3, tau_m=0.1, n_symbols=2000, seed=9)
    result = run_link(config, link_coefficients(reference_model, config))
    assert 0.0 <= result.ber <= 0.5
    assert result.standard_error() >= 0.0

    hd = config.with_(duplex='HD', d_sic=False)
    result_hd = run_link(hd, link_coefficients(reference_model, hd))
    assert 0.0 <= result_hd.ber <= 0.5


def test_physical_mode_shares_a_sic_boundary():
    slot, T_c = 0.25, 0.125
    in_slot = np.array([0.0625, 0.125, 0.1875])
    assert a_sic_keep(in_slot, T_c).tolist() == [False, True, True]
    assert a_sic_filter(in_slot, T_c) == int(np.count_nonzero(a_sic_keep(in_slot, T_c)))

    stream = SymbolStream(bits_tx1=np.ones(4, dtype=np.int64), bits_tx2=np.zeros(4, dtype=np.int64))
    scheduled = full_duplex_schedule(stream)
    for time, expected in ((0.0625, 0.0), (0.125, 10.0), (0.375, 10.0)):
        pools = _surface_pools(time=time, n=50)
        received = physical_counts(pools, scheduled, [0, 10], slot, T_c, True, np.random.default_rng(1))
        offset = int(np.ceil(time / slot)) - 1
        assert received.y[1, offset:].tolist() == [expected] * (4 - offset)
        assert a_sic_filter([time - offset * slot], T_c) * 10 == expected


def test_digital_sic_marks_counts():
    config = _config(d_sic=True, sigma_noise_sq=100.0)
    result = run_link(config, _coefficients(), keep_trace=True)
    assert result.received.post_sic
    assert np.allclose(result.trace['y_rx1'], result.received.y[0])

    raw = run_link(config.with_(d_sic=False), _coefficients(), keep_trace=True)
    assert not raw.received.post_sic
    own = raw.trace['tx1_bit'].to_numpy()
    assert np.allclose(raw.trace['y_rx1'] - 500 * 0.3 * own, result.trace['y_rx1'])

    scheduled = full_duplex_schedule(SymbolStream(bits_tx1=own, bits_tx2=raw.trace['tx2_bit'].to_numpy()))
    with pytest.raises(DomainError):
        cancel_self_interference(result.received, scheduled, config, _coefficients())


def test_digital_sic_is_unbiased():
    p = np.zeros((2, 2, 1))
    p[1, 1, 0] = 0.3
    coeffs = ChannelCoefficients(t_s=0.3, T_c=0.0, K=1, p=p, phi=p.copy())
    n = 100_000
    config = _config(d_sic=True, sigma_noise_sq=100.0)
    stream = SymbolStream(bits_tx1=np.zeros(n, dtype=np.int64), bits_tx2=np.ones(n, dtype=np.int64))
    scheduled = full_duplex_schedule(stream)
    received = emission_counts(coeffs, scheduled, config.levels, np.random.default_rng(2), sigma_noise_sq=100.0)
    residual = cancel_self_interference(received, scheduled, config, coeffs).y[1]
    assert abs(residual.mean()) < 4 * np.sqrt((500 * 0.3 * 0.7 + 100.0) / n)


def test_gaussian_sampling_close_to_binomial():
    p = np.zeros((2, 2, 1))
    p[0, 1, 0] = 0.1
    coeffs = ChannelCoefficients(t_s=0.3, T_c=0.0, K=1, p=p, phi=p.copy())
    n = 100_000
    stream = SymbolStream(bits_tx1=np.ones(n, dtype=np.int64), bits_tx2=np.zeros(n, dtype=np.int64))
    scheduled = full_duplex_schedule(stream)
    samples = {
        mode: np.rint(emission_counts(coeffs, scheduled, [0, 500], np.random.default_rng(3), mode).y[1])
        for mode in ('binomial', 'gaussian')
    }
    lo = int(min(s.min() for s in samples.values()))
    hi = int(max(s.max() for s in samples.values()))
    bins = np.arange(lo, hi + 2) - 0.5
    hist = [np.histogram(samples[mode], bins=bins)[0] / n for mode in ('binomial', 'gaussian')]
    assert 0.5 * np.abs(hist[0] - hist[1]).sum() < 0.05


def test_false_alarm_rate_falls_with_threshold(reference_model):
    config = LinkConfig(n1=500, t_s=0.2, d_sic=True)
    coeffs = link_coefficients(reference_model, config)
    rng = np.random.default_rng(4)
    n = 20_000
    stream = SymbolStream(bits_tx1=np.zeros(n, dtype=np.int64), bits_tx2=rng.integers(0, 2, n))
    scheduled = full_duplex_schedule(stream)
    received = emission_counts(coeffs, scheduled, config.levels, rng, sigma_noise_sq=100.0)
    y = cancel_self_interference(received, scheduled, config, coeffs).y[1]
    rates = np.array([
        np.mean(detect(y, config.with_(tau_m=tau))) for tau in np.linspace(0.0, 0.25, 26)
    ])
    assert np.all(np.diff(rates) <= 0)
    assert rates[0] > rates[-1]


@pytest.mark.slow
@pytest.mark.parametrize('t_s', [0.1, 0.15, 0.2])
def test_simulated_ber_tracks_theory(reference_model, t_s):
    config = LinkConfig(n1=500, t_s=t_s, d_sic=True, sampling='gaussian', n_symbols=10_000, seed=17)
    coeffs = link_coefficients(reference_model, config)
    result = run_link(config, coeffs, keep_trace=True)
    trace = result.trace.iloc[result.warmup:]
    taus = np.linspace(0.05, 0.3, 20)
    theory = ber_curve(config, coeffs, taus)

    n = 2 * len(trace)
    for tau, expected in zip(taus, theory):
        errors = (
            np.count_nonzero((trace['y_rx1'] > tau * 500).astype(int) != trace['tx2_bit'])
            + np.count_nonzero((trace['y_rx2'] > tau * 500).astype(int) != trace['tx1_bit'])
        )
        sigma = np.sqrt(expected * (1 - expected) / n)
        assert abs(errors / n - expected) <= 3 * sigma + 1.0 / n
