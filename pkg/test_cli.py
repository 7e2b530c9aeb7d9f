#!/usr/bin/env python3
"""命令行测试"""

import hashlib
import os
import re

import pytest
from loguru import logger

import mcvd
from config.config import config
from utils.artifacts import read_csv


@pytest.fixture(autouse=True)
def _workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)


def _run(*argv):
    return mcvd.main(list(argv))


def _k_values(text):
    match = re.search(r"Tx1: k1=([0-9.]+) k2=([0-9.]+)", text)
    return float(match.group(1)), float(match.group(2))


def test_capture(reference_ini, tmp_path, capsys):
    out = str(tmp_path / "out")
    assert _run("capture", "--config", reference_ini, "--out", out) == 0
    k1, k2 = _k_values(capsys.readouterr().out)
    assert k1 == pytest.approx(0.6414, abs=0.005)
    assert k2 == pytest.approx(0.2932, abs=0.005)

    with open(os.path.join(out, "capture.csv"), encoding="utf-8") as f:
        assert f.readline().startswith("# config_hash=")
    frame = read_csv(os.path.join(out, "capture.csv"))
    assert frame['transmitter'].tolist() == [1, 2]
    assert frame.loc[1, 'k1'] == pytest.approx(frame.loc[0, 'k2'], abs=1e-12)

    with open(os.path.join(out, "manifest.txt"), encoding="utf-8") as f:
        manifest = f.read()
    assert "command=capture" in manifest
    assert "output=" in manifest


def test_channel_outputs_are_reproducible(reference_ini, tmp_path):
    first, second = str(tmp_path / "a"), str(tmp_path / "b")
    assert _run("channel", "--config", reference_ini, "--out", first) == 0
    assert _run("channel", "--config", reference_ini, "--out", second) == 0

    cdf = read_csv(os.path.join(first, "channel_cdf.csv"))
    assert len(cdf) == 61
    assert cdf.loc[0, 'F_tx1_rx1'] == 0.0
    assert cdf['F_tx1_rx1'].is_monotonic_increasing

    for name in ("channel_cdf.csv", "impulse.csv", "taps.csv"):
        with open(os.path.join(first, name), "rb") as a, open(os.path.join(second, name), "rb") as b:
            assert a.read() == b.read()


def test_simulate(reference_ini, tmp_path, capsys):
    out = str(tmp_path / "sim")
    assert _run("simulate", "--config", reference_ini, "--out", out, "--seed", "5", "--threads", "2") == 0
    text = capsys.readouterr().out
    assert "conserved=True" in text
    frame = read_csv(os.path.join(out, "empirical_cdf.csv"))
    assert {'t_s', 'F_rx1', 'F_rx2', 'F_rx1_theory'} <= set(frame.columns)


def test_simulate_is_reproducible(reference_ini, tmp_path):
    first, second = str(tmp_path / "a"), str(tmp_path / "b")
    assert _run("simulate", "--config", reference_ini, "--out", first, "--seed", "9", "--threads", "1") == 0
    assert _run("simulate", "--config", reference_ini, "--out", second, "--seed", "9", "--threads", "3") == 0
    with open(os.path.join(first, "empirical_cdf.csv"), "rb") as a, \
            open(os.path.join(second, "empirical_cdf.csv"), "rb") as b:
        assert hashlib.sha256(a.read()).hexdigest() == hashlib.sha256(b.read()).hexdigest()


def test_ber(reference_ini, tmp_path, capsys):
    out = str(tmp_path / "ber")
    assert _run("ber", "--config", reference_ini, "--out", out) == 0
    assert "optimal tau_m=" in capsys.readouterr().out
    frame = read_csv(os.path.join(out, "ber.csv"))
    assert list(frame.columns) == [
        'tau_m', 'T_c', 't_s', 'N1', 'duplex', 'sic_mode', 'ber_theory', 'ber_sim', 'throughput'
    ]
    assert len(frame) == 5
    assert frame['ber_theory'].between(0.0, 1.0).all()
    assert os.path.exists(os.path.join(out, "link_trace.csv"))


def test_sweep_summary(reference_ini, tmp_path):
    out = str(tmp_path / "sweep")
    assert _run("sweep", "--config", reference_ini, "--out", out) == 0
    with open(os.path.join(out, "heatmap.csv"), encoding="utf-8") as f:
        header = f.readline()
    assert "tau_m_star=" in header and "T_c_star=" in header
    assert len(read_csv(os.path.join(out, "heatmap.csv"))) == 51 * 21


def test_missing_config_exit_code(tmp_path):
    assert _run("capture", "--config", str(tmp_path / "missing.ini")) == 2


def test_bad_config_exit_code(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[link]\nn1 = 500\n", encoding="utf-8")
    assert _run("capture", "--config", str(path)) == 2


def test_domain_error_exit_code(tmp_path):
    path = tmp_path / "overlap.ini"
    path.write_text(
        "[topology]\nr_r1_um=5\nr_r2_um=5\nd1_um=1\nd2_um=1\nd_tx1_rx2_um=3\nd_tx2_rx1_um=1\n"
        "ell_um=12\ndiffusion_um2_per_s=100\n",
        encoding="utf-8"
    )
    assert _run("capture", "--config", str(path), "--out", str(tmp_path / "o")) == 1


def test_bad_env_exit_code(reference_ini, monkeypatch):
    monkeypatch.setenv("MCVD_THREADS", "many")
    assert _run("capture", "--config", reference_ini) == 2


def test_zero_threads_flag_rejected(reference_ini, monkeypatch):
    monkeypatch.setenv("MCVD_THREADS", "4")
    assert _run("capture", "--config", reference_ini, "--threads", "0") == 2


def test_log_files(reference_ini, tmp_path):
    assert _run("capture", "--config", reference_ini, "--out", str(tmp_path / "o")) == 0
    logger.remove()
    log_dir = os.path.dirname(os.path.abspath(config.log_file))
    with open(os.path.join(log_dir, "runs.log"), encoding="utf-8") as f:
        lines = f.read().splitlines()
    assert '"command": "capture"' in lines[-1]
    assert os.path.exists(os.path.abspath(config.log_file))
    assert "error.log" not in os.listdir(log_dir)


def test_missing_subcommand():
    with pytest.raises(SystemExit) as info:
        _run()
    assert info.value.code == 2


@pytest.mark.slow
def test_compare(reference_ini, tmp_path):
    out = str(tmp_path / "cmp")
    assert _run("compare", "--config", reference_ini, "--out", out) == 0
    frame = read_csv(os.path.join(out, "compare.csv"))
    assert frame.loc[0, 'case'] == 1
    assert frame.loc[0, 'status'] == 'ok'
    assert 0.0 < frame.loc[0, 'ratio'] <= 2.0 + 1e-9
