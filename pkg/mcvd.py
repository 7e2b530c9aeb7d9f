#!/usr/bin/env python3
"""
双向分子通信链路工具
命令行入口：capture | channel | simulate | ber | sweep | compare
"""

import argparse
import os
import sys

import numpy as np
import pandas as pd

# 添加项目路径
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from config.config import config, ExperimentConfig, TopologySection
from utils.errors import McvdError, ConfigError, DegenerateGeometryError
from utils.logger import LogManager, logger, run_logger
from utils.artifacts import config_hash, write_csv, RunManifest

from modules.topology.topology import SystemTopology, build_frame, transmitter_position
from modules.channel.channel import (
    ChannelModel, capture_probabilities, virtual_point_distances, channel_coefficients,
    impulse_response, default_tap_count
)
from modules.particle.particle import SimConfig, run_simulation, max_cdf_gap
from modules.link.link import LinkConfig, link_coefficients, run_link, build_fate_pools
from modules.ber.ber import (
    ber_curve, optimal_threshold, qcsk_theoretical_ber, optimal_qcsk_thresholds, throughput,
    BerEvaluator
)
from modules.sweep.sweep import SweepGrid, ber_heatmap, compare_systems, comparison_frame

__version__ = '1.0.0'

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_CONFIG = 2


def build_topology(section: TopologySection) -> SystemTopology:
    """由 [topology] 段构造拓扑；未给出的 Tx 到非配对接收机距离按共线放置推导"""
    gap = section.ell_um - section.r_r1_um - section.r_r2_um
    d12 = section.d_tx1_rx2_um if section.d_tx1_rx2_um is not None else gap - section.d1_um
    d21 = section.d_tx2_rx1_um if section.d_tx2_rx1_um is not None else gap - section.d2_um
    return SystemTopology(
        r_r1=section.r_r1_um,
        r_r2=section.r_r2_um,
        d1=section.d1_um,
        d2=section.d2_um,
        d_tx1_rx2=d12,
        d_tx2_rx1=d21,
        ell=section.ell_um,
        D=section.diffusion_um2_per_s
    )


class Context:
    """一次命令的运行环境"""

    def __init__(self, args, command: str):
        self.args = args
        self.exp = ExperimentConfig.load(args.config)
        self.hash = config_hash(self.exp.source_text)
        self.runtime = config.runtime
        self.out_dir = args.out if args.out is not None else self.runtime.out_dir
        self.threads = args.threads if args.threads is not None else self.runtime.threads
        if self.threads < 1:
            raise ConfigError("线程数必须 >= 1", key='--threads')
        self.seed = args.seed if args.seed is not None else self.runtime.seed
        self.full_scale = args.full_scale or self.runtime.full_scale
        self.manifest = RunManifest(command=command, config_hash=self.hash, seed=self.seed,
                                    version=__version__)
        self._topology = None
        self._model = None

    @property
    def topology(self) -> SystemTopology:
        if self._topology is None:
            self._topology = build_topology(self.exp.topology)
        return self._topology

    @property
    def model(self) -> ChannelModel:
        if self._model is None:
            ch = self.exp.channel
            self._model = ChannelModel(self.topology, m_max=ch.m_max, n_terms=ch.n_terms)
        return self._model

    def link_config(self) -> LinkConfig:
        seed = self.args.seed if self.args.seed is not None else self.exp.link.seed
        return LinkConfig.from_section(self.exp.link, seed=seed if seed is not None else self.seed)

    def write(self, df: pd.DataFrame, name: str, summary: dict = None) -> str:
        path = os.path.join(self.out_dir, name)
        return self.manifest.add(write_csv(df, path, self.hash, summary))

    def finish(self):
        self.manifest.finish()
        self.manifest.write(self.out_dir)
        run_logger.info(self.manifest.journal_line())


def cmd_capture(ctx: Context) -> int:
    """渐近捕获概率"""
    topology = ctx.topology
    rows = []
    for i in (1, 2):
        local = topology if i == 1 else topology.swapped()
        tx = transmitter_position(local, build_frame(local), 1)
        caps = capture_probabilities(local, tx, m_max=ctx.exp.channel.m_max)
        try:
            d_p1, d_p2 = virtual_point_distances(caps, local, tx)
        except DegenerateGeometryError as e:
            logger.warning(f"Tx{i} 虚拟点距离无解: {e}")
            d_p1 = d_p2 = float('nan')

        rx1, rx2 = (caps.k1, caps.k2) if i == 1 else (caps.k2, caps.k1)
        rows.append({
            'transmitter': i,
            'k1': rx1,
            'k2': rx2,
            'truncation_bound': caps.truncation_bound,
            'terms': caps.terms,
            'd_p_own_other': d_p1,
            'd_p_other_own': d_p2
        })
        print(f"Tx{i}: k1={rx1:.6f} k2={rx2:.6f} truncation_bound={caps.truncation_bound:.3e}")

    ctx.write(pd.DataFrame(rows), 'capture.csv')
    return EXIT_OK


def cmd_channel(ctx: Context) -> int:
    """时变 CDF、冲激响应和信道系数"""
    ch = ctx.exp.channel
    model = ctx.model
    t = np.linspace(0.0, ch.t_max_s, ch.t_points)

    cdf = pd.DataFrame({'t_s': t})
    for i in (1, 2):
        for j in (1, 2):
            cdf[f'F_tx{i}_rx{j}'] = model.cdf(i, j, t)
    ctx.write(cdf, 'channel_cdf.csv')

    n_steps = max(1, int(round(ch.t_max_s / ch.impulse_dt_s)))
    impulse = pd.DataFrame({'t_s': (np.arange(n_steps) + 1) * ch.impulse_dt_s})
    for i in (1, 2):
        counts = impulse_response(model, i, ctx.exp.link.n1, ch.impulse_dt_s, n_steps)
        impulse[f'n_tx{i}_rx1'] = counts[0]
        impulse[f'n_tx{i}_rx2'] = counts[1]
    ctx.write(impulse, 'impulse.csv')

    K = ch.taps or default_tap_count(ch.t_s_s, ch.isi_period_s)
    coeffs = channel_coefficients(model, ch.t_s_s, ch.T_c_s, K)
    ctx.write(coeffs.to_frame(), 'taps.csv')

    print(f"Tx1: k1={model.capture(1, 1):.6f} k2={model.capture(1, 2):.6f}")
    print(f"Tx2: k1={model.capture(2, 1):.6f} k2={model.capture(2, 2):.6f}")
    print(f"taps: t_s={ch.t_s_s} T_c={ch.T_c_s} K={K}")
    return EXIT_OK


def cmd_simulate(ctx: Context) -> int:
    """粒子仿真"""
    sim = ctx.exp.simulation.scaled(ctx.full_scale)
    topology = ctx.topology
    i = 1 if sim.emitter == 'tx1' else 2
    seed = ctx.args.seed if ctx.args.seed is not None else (sim.seed if sim.seed is not None else ctx.seed)

    result = run_simulation(SimConfig(
        topology=topology,
        emitter=transmitter_position(topology, build_frame(topology), i),
        n_molecules=sim.n_molecules,
        dt=sim.dt_s,
        t_end=sim.t_end_s,
        seed=seed,
        replications=sim.replications,
        emitter_index=i
    ), threads=ctx.threads)

    n_steps = max(1, int(round(sim.t_end_s / sim.dt_s)))
    steps = np.unique(np.linspace(1, n_steps, min(n_steps, 1000)).astype(int))
    t = steps * sim.dt_s
    frame = pd.DataFrame({'t_s': t})
    for j in (1, 2):
        mean, stderr = result.cdf_statistics(j, t)
        frame[f'F_rx{j}'] = mean
        frame[f'se_rx{j}'] = stderr
        frame[f'F_rx{j}_theory'] = ctx.model.cdf(i, j, t)
    ctx.write(frame, 'empirical_cdf.csv')

    if sim.dump_hits:
        ctx.write(result.to_frame(), 'hits.csv')

    total = result.total
    conserved = result.absorbed(1) + result.absorbed(2) + result.survivors == total
    print(f"Rx1={result.absorbed(1)} Rx2={result.absorbed(2)} survivors={result.survivors} "
          f"total={total} conserved={conserved}")
    print(f"max_cdf_gap={max_cdf_gap(result, ctx.model, t):.6f}")
    return EXIT_OK


def cmd_ber(ctx: Context) -> int:
    """理论误码率与链路仿真"""
    link = ctx.link_config()
    section = ctx.exp.link
    model = ctx.model
    coeffs = link_coefficients(model, link)

    pools = None
    if section.mode == 'physical':
        sim = ctx.exp.simulation.scaled(ctx.full_scale)
        horizon = max(sim.t_end_s, coeffs.K * link.slot_duration)
        pools = build_fate_pools(ctx.topology, sim.n_molecules, sim.dt_s, horizon,
                                 link.seed, threads=ctx.threads)

    rows = []
    if link.scheme == 'QCSK':
        if link.qcsk_thresholds is None:
            thresholds, _ = optimal_qcsk_thresholds(link, coeffs)
            link = link.with_(qcsk_thresholds=thresholds)
        theory = qcsk_theoretical_ber(link, coeffs)
        sim_result = run_link(link, coeffs, pools=pools)
        rows.append(_ber_row(link, float('nan'), theory, sim_result.ber))
        print(f"QCSK thresholds={tuple(round(v, 3) for v in link.thresholds)} "
              f"SER theory={theory:.4e} sim={sim_result.ber:.4e}")
    else:
        taus = np.linspace(section.tau_m_min, section.tau_m_max, section.tau_m_points)
        theory = ber_curve(link, coeffs, taus)
        for tau, ber_theory in zip(taus, theory):
            sim_result = run_link(link.with_(tau_m=float(tau)), coeffs, pools=pools)
            rows.append(_ber_row(link, float(tau), float(ber_theory), sim_result.ber))
        tau_star, ber_star = optimal_threshold(link, coeffs, taus)
        print(f"optimal tau_m={tau_star:.4f} BER={ber_star:.4e}")

    ctx.write(pd.DataFrame(rows), 'ber.csv')

    trace = run_link(link, coeffs, pools=pools, keep_trace=True).trace
    ctx.write(trace, 'link_trace.csv')
    return EXIT_OK


def _ber_row(link: LinkConfig, tau: float, ber_theory: float, ber_sim: float) -> dict:
    return {
        'tau_m': tau,
        'T_c': link.T_c,
        't_s': link.t_s,
        'N1': link.n1,
        'duplex': link.duplex,
        'sic_mode': link.sic_mode,
        'ber_theory': ber_theory,
        'ber_sim': ber_sim,
        'throughput': throughput(link.bits_per_symbol, min(max(ber_theory, 0.0), 1.0), link.t_s)
    }


def cmd_sweep(ctx: Context) -> int:
    """(τ_m, T_c) 热力图"""
    sw = ctx.exp.sweep
    link = ctx.link_config().with_(duplex='FD', a_sic=True, d_sic=True, T_c=0.0)
    grid = SweepGrid.default(link.t_s, sw.tau_m_min, sw.tau_m_max, sw.tau_m_points, sw.T_c_points)
    heat = ber_heatmap(grid, BerEvaluator(ctx.model, link), threads=ctx.threads)

    summary = {'tau_m_star': heat.tau_m_star, 'T_c_star': heat.T_c_star, 'ber_min': heat.ber_min}
    ctx.write(heat.to_frame(), 'heatmap.csv', summary)
    print(f"tau_m*={heat.tau_m_star:.4f} T_c*={heat.T_c_star:.4f} BER={heat.ber_min:.4e}")
    return EXIT_OK


def cmd_compare(ctx: Context) -> int:
    """半双工/全双工吞吐量对比"""
    cmp = ctx.exp.compare
    sw = ctx.exp.sweep
    base = ctx.link_config()

    def grid_factory(t_s):
        return SweepGrid.default(t_s, sw.tau_m_min, sw.tau_m_max, sw.tau_m_points, sw.T_c_points)

    report = compare_systems(cmp.case, cmp.n1, cmp.t_s_hd_s, ctx.model, base=base,
                             t_s_fd=cmp.t_s_fd_s, grid_factory=grid_factory, threads=ctx.threads)
    ctx.write(comparison_frame([report]), 'compare.csv')

    if report['status'] == 'ok':
        print(f"case {cmp.case}: BER_HD={report['ber_hd']:.4e} BER_FD={report['ber_fd']:.4e} "
              f"t_s_FD={report['t_s_fd']:.4g} ratio={report['ratio']:.4f}")
    else:
        print(f"case {cmp.case}: N/A ({report['error']})")
    return EXIT_OK


COMMANDS = {
    'capture': cmd_capture,
    'channel': cmd_channel,
    'simulate': cmd_simulate,
    'ber': cmd_ber,
    'sweep': cmd_sweep,
    'compare': cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', required=True, help='实验配置文件')
    common.add_argument('--out', default=None, help='输出目录')
    common.add_argument('--seed', type=int, default=None, help='随机种子')
    common.add_argument('--threads', type=int, default=None, help='线程数（不影响结果）')
    common.add_argument('--full-scale', action='store_true', help='粒子仿真使用完整规模')
    common.add_argument('--log-level', default=None, help='日志级别')

    parser = argparse.ArgumentParser(prog='mcvd', description='双向分子通信链路工具')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', required=True)
    for name, handler in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=handler.__doc__)
    return parser


def main(argv=None) -> int:
    """主函数，返回退出码"""
    parser = build_parser()
    args = parser.parse_args(argv)

    LogManager(log_level=args.log_level).setup_logger()

    try:
        ctx = Context(args, args.command)
        code = COMMANDS[args.command](ctx)
        ctx.finish()
        return code
    except ConfigError as e:
        logger.error(f"配置错误: {e}")
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except McvdError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == '__main__':
    sys.exit(main())
