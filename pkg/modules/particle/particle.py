"""
粒子仿真模块
点分子的布朗运动，两个完全吸收的接收球，记录首次命中的接收机与时间
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Tuple, Optional

import numpy as np
import pandas as pd

from modules.topology.topology import (
    SystemTopology, Point, build_frame, receiver_centers, surface_clearances
)
from modules.channel.channel import ChannelCoefficients
from utils.errors import DomainError
from utils.logger import get_module_logger

log = get_module_logger('particle')

# 每个随机数块的分子数；块划分与线程数无关
BLOCK_SIZE = 1024


@dataclass(frozen=True)
class SimConfig:
    """粒子仿真配置"""
    topology: SystemTopology
    emitter: Point
    n_molecules: int
    dt: float
    t_end: float
    seed: int
    replications: int = 1
    emitter_index: int = 1
    block_size: int = BLOCK_SIZE

    def __post_init__(self):
        if self.dt <= 0:
            raise DomainError(f"dt 必须为正: {self.dt}")
        if self.t_end < self.dt:
            raise DomainError(f"t_end 必须 >= dt: t_end={self.t_end} dt={self.dt}")
        if self.n_molecules < 1:
            raise DomainError(f"n_molecules 必须 >= 1: {self.n_molecules}")
        if self.replications < 1:
            raise DomainError(f"replications 必须 >= 1: {self.replications}")
        if self.block_size < 1:
            raise DomainError(f"block_size 必须 >= 1: {self.block_size}")

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.t_end / self.dt - 1e-9))


@dataclass
class ParticleRunResult:
    """
    仿真结果

    hits[j-1]: Rx_j 的吸收时间（升序）
    hit_ids[j-1], hit_reps[j-1]: 与 hits 对齐的分子编号与重复编号
    """
    hits: Tuple[np.ndarray, np.ndarray]
    hit_ids: Tuple[np.ndarray, np.ndarray]
    hit_reps: Tuple[np.ndarray, np.ndarray]
    survivors: int
    n_molecules: int
    replications: int
    dt: float
    t_end: float
    emitter_index: int = 1
    straddle_events: int = 0
    seed: Optional[int] = field(default=None)

    @property
    def total(self) -> int:
        return self.n_molecules * self.replications

    def absorbed(self, j: int) -> int:
        return int(self.hits[j - 1].size)

    def empirical_cdf(self, j: int, t) -> np.ndarray:
        """到时间 t 为止被 Rx_j 吸收的比例（右连续阶跃函数）"""
        t_arr = np.asarray(t, dtype=float)
        counts = np.searchsorted(self.hits[j - 1], t_arr, side='right')
        return counts / self.total

    def replication_cdf(self, j: int, t) -> np.ndarray:
        """每次重复的经验 CDF，形状 (replications, len(t))"""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros((self.replications, t_arr.size))
        times = self.hits[j - 1]
        reps = self.hit_reps[j - 1]
        for rep in range(self.replications):
            rep_times = times[reps == rep]
            out[rep] = np.searchsorted(rep_times, t_arr, side='right') / self.n_molecules
        return out

    def cdf_statistics(self, j: int, t) -> Tuple[np.ndarray, np.ndarray]:
        """
        重复间的平均经验 CDF 及其标准误

        只有一次重复时用二项分布标准误。
        """
        per_rep = self.replication_cdf(j, t)
        mean = per_rep.mean(axis=0)
        if self.replications > 1:
            stderr = per_rep.std(axis=0, ddof=1) / math.sqrt(self.replications)
        else:
            stderr = np.sqrt(mean * (1.0 - mean) / self.n_molecules)
        return mean, stderr

    def cdf(self, i: int, j: int, t) -> np.ndarray:
        """与解析模型相同的接口；只有仿真的发射机有数据"""
        if i != self.emitter_index:
            return np.full(np.shape(t), np.nan)
        return self.empirical_cdf(j, t)

    def fates(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        每个分子的归宿 (receiver, time)，未被吸收的分子 receiver=0、time=inf

        Returns:
            长度为 total 的两个数组
        """
        receivers = np.zeros(self.total, dtype=np.int8)
        times = np.full(self.total, np.inf)
        for j in (1, 2):
            ids = self.hit_ids[j - 1]
            receivers[ids] = j
            times[ids] = self.hits[j - 1]
        return receivers, times

    def to_frame(self) -> pd.DataFrame:
        """原始命中记录 (molecule_id, receiver, time_s)，按时间排序"""
        ids = np.concatenate(self.hit_ids)
        receivers = np.concatenate([np.full(h.size, j, dtype=np.int8) for j, h in zip((1, 2), self.hits)])
        times = np.concatenate(self.hits)
        order = np.lexsort((ids, times))
        return pd.DataFrame({
            'molecule_id': ids[order],
            'receiver': receivers[order],
            'time_s': times[order]
        })


def brownian_step(position, D: float, dt: float, rng: np.random.Generator) -> np.ndarray:
    """
    一步布朗运动：每个坐标加上方差为 2·D·dt 的独立高斯位移

    Args:
        position: 形状 (3,) 或 (n, 3) 的坐标
    """
    if dt <= 0:
        raise DomainError(f"dt 必须为正: {dt}")
    if D < 0:
        raise DomainError(f"D 不能为负: {D}")
    pos = np.asarray(position, dtype=float)
    if D == 0:
        return pos.copy()
    return pos + rng.normal(0.0, math.sqrt(2.0 * D * dt), size=pos.shape)


def _block_rng(seed: int, rep: int, block: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep, block)))


def _simulate_block(config: SimConfig, centers, count: int, rng: np.random.Generator):
    """
    仿真一个分子块

    Returns:
        (局部编号, 接收机编号, 吸收时间, 同时落入两球的次数)
    """
    topology = config.topology
    c1 = np.asarray(centers[0])
    c2 = np.asarray(centers[1])
    r1_sq = topology.r_r1 ** 2
    r2_sq = topology.r_r2 ** 2

    pos = np.tile(np.asarray(config.emitter, dtype=float), (count, 1))
    alive = np.arange(count)

    out_ids, out_rx, out_t = [], [], []
    straddle = 0
    for step in range(1, config.n_steps + 1):
        if alive.size == 0:
            break
        pos = brownian_step(pos, topology.D, config.dt, rng)

        dist1_sq = np.sum((pos - c1) ** 2, axis=1)
        dist2_sq = np.sum((pos - c2) ** 2, axis=1)
        in1 = dist1_sq <= r1_sq
        in2 = dist2_sq <= r2_sq
        hit = in1 | in2
        if not hit.any():
            continue

        receiver = np.where(in1, 1, 2).astype(np.int8)
        both = in1 & in2
        if both.any():
            straddle += int(both.sum())
            # 分配给更近的球面
            depth1 = topology.r_r1 - np.sqrt(dist1_sq[both])
            depth2 = topology.r_r2 - np.sqrt(dist2_sq[both])
            receiver[both] = np.where(depth1 <= depth2, 1, 2)

        out_ids.append(alive[hit])
        out_rx.append(receiver[hit])
        out_t.append(np.full(int(hit.sum()), step * config.dt))

        keep = ~hit
        pos = pos[keep]
        alive = alive[keep]

    if out_ids:
        return np.concatenate(out_ids), np.concatenate(out_rx), np.concatenate(out_t), straddle
    return np.zeros(0, dtype=int), np.zeros(0, dtype=np.int8), np.zeros(0), straddle


def run_simulation(config: SimConfig, threads: int = 1) -> ParticleRunResult:
    """
    运行粒子仿真

    分子按固定大小分块，每块由 SeedSequence(seed, spawn_key=(rep, block)) 播种，
    结果与线程数无关。

    Args:
        config: 仿真配置
        threads: 线程数

    Returns:
        ParticleRunResult
    """
    topology = config.topology
    d_rx1, d_rx2 = surface_clearances(topology, config.emitter)
    if d_rx1 <= 0 or d_rx2 <= 0:
        raise DomainError(f"发射点必须位于两个接收球外部: {config.emitter}")

    centers = receiver_centers(topology, build_frame(topology))

    tasks = []
    for rep in range(config.replications):
        for block, start in enumerate(range(0, config.n_molecules, config.block_size)):
            count = min(config.block_size, config.n_molecules - start)
            offset = rep * config.n_molecules + start
            tasks.append((rep, block, offset, count))

    log.info(
        f"开始粒子仿真: 分子数={config.n_molecules} 重复={config.replications} "
        f"dt={config.dt} t_end={config.t_end} 块数={len(tasks)} 线程={threads}"
    )

    def work(task):
        rep, block, offset, count = task
        ids, rx, times, straddle = _simulate_block(
            config, centers, count, _block_rng(config.seed, rep, block)
        )
        return rep, ids + offset, rx, times, straddle

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            outputs = list(executor.map(work, tasks))
    else:
        outputs = [work(task) for task in tasks]

    reps = np.concatenate([np.full(o[1].size, o[0], dtype=np.int32) for o in outputs])
    ids = np.concatenate([o[1] for o in outputs]).astype(np.int64)
    rx = np.concatenate([o[2] for o in outputs])
    times = np.concatenate([o[3] for o in outputs])
    straddle = sum(o[4] for o in outputs)

    hits, hit_ids, hit_reps = [], [], []
    for j in (1, 2):
        mask = rx == j
        order = np.lexsort((ids[mask], times[mask]))
        hits.append(times[mask][order])
        hit_ids.append(ids[mask][order])
        hit_reps.append(reps[mask][order])

    total = config.n_molecules * config.replications
    survivors = total - hits[0].size - hits[1].size
    if straddle:
        log.warning(f"{straddle} 次单步同时落入两个接收球，已分配给较近的球面")

    log.info(
        f"粒子仿真完成: Rx1={hits[0].size} Rx2={hits[1].size} 未吸收={survivors}"
    )
    return ParticleRunResult(
        hits=(hits[0], hits[1]),
        hit_ids=(hit_ids[0], hit_ids[1]),
        hit_reps=(hit_reps[0], hit_reps[1]),
        survivors=survivors,
        n_molecules=config.n_molecules,
        replications=config.replications,
        dt=config.dt,
        t_end=config.t_end,
        emitter_index=config.emitter_index,
        straddle_events=straddle,
        seed=config.seed
    )


def empirical_channel_taps(result: ParticleRunResult, t_s: float, T_c: float = 0.0,
                           K: int = 1) -> ChannelCoefficients:
    """
    按解析信道系数的方式对吸收时间分箱

    只有仿真的发射机那一行有值，另一发射机的行为 NaN。
    """
    if t_s <= 0:
        raise DomainError(f"t_s 必须为正: {t_s}")
    if not (0.0 <= T_c < t_s):
        raise DomainError(f"T_c 必须满足 0 <= T_c < t_s: T_c={T_c} t_s={t_s}")
    if K < 1:
        raise DomainError(f"K 必须 >= 1: {K}")
    if result.t_end < K * t_s * (1.0 - 1e-12):
        raise DomainError(f"仿真时长不足: t_end={result.t_end} < K·t_s={K * t_s}")

    edges = np.arange(K + 1) * t_s
    p = np.full((2, 2, K), np.nan)
    phi = np.full((2, 2, K), np.nan)
    i = result.emitter_index
    for j in (1, 2):
        F_edges = result.empirical_cdf(j, edges)
        p[i - 1, j - 1] = np.diff(F_edges)
        if T_c == 0.0:
            phi[i - 1, j - 1] = p[i - 1, j - 1]
        else:
            phi[i - 1, j - 1] = F_edges[1:] - result.empirical_cdf(j, edges[:-1] + T_c)

    return ChannelCoefficients(t_s=t_s, T_c=T_c, K=K, p=p, phi=phi)


def max_cdf_gap(result: ParticleRunResult, model, t=None) -> float:
    """经验 CDF 与解析 CDF 在时间网格上的最大绝对差（两个接收机取最大）"""
    if t is None:
        n_steps = max(1, int(round(result.t_end / result.dt)))
        steps = np.unique(np.linspace(1, n_steps, min(n_steps, 400)).astype(int))
        t = steps * result.dt
    t = np.asarray(t, dtype=float)
    gap = 0.0
    for j in (1, 2):
        analytic = np.asarray(model.cdf(result.emitter_index, j, t), dtype=float)
        gap = max(gap, float(np.max(np.abs(result.empirical_cdf(j, t) - analytic))))
    return gap
