"""
链路层模块
调制、半双工/全双工调度、接收计数、A-SIC/D-SIC、判决与误码率统计

约定：Tx_i 与 Rx_i 位于同一收发器，Rx_j 解调 Tx_i (i≠j) 的符号，
Tx_j 落入 Rx_j 的分子为自干扰。
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple, Dict

import numpy as np
import pandas as pd

from modules.channel.channel import ChannelCoefficients, channel_coefficients, DEFAULT_ISI_PERIOD
from modules.particle.particle import SimConfig, run_simulation
from modules.topology.topology import SystemTopology, build_frame, transmitter_position
from utils.errors import DomainError
from utils.logger import get_module_logger

log = get_module_logger('link')

SCHEMES = ('BCSK', 'QCSK')
DUPLEX_MODES = ('FD', 'HD')
SAMPLING_MODES = ('binomial', 'gaussian')


@dataclass(frozen=True)
class LinkConfig:
    """
    链路参数

    t_s 为符号间隔；半双工时 t_s 是一个完整的 HD 符号（Tx1、Tx2 各占一半）。
    QCSK 阈值为绝对分子数，未给出时取相邻电平的中点。
    """
    scheme: str = 'BCSK'
    n1: int = 500
    t_s: float = 0.1
    duplex: str = 'FD'
    tau_m: float = 0.05
    qcsk_thresholds: Optional[Tuple[float, float, float]] = None
    T_c: float = 0.0
    a_sic: bool = False
    d_sic: bool = True
    sigma_noise_sq: float = 100.0
    isi_period: float = DEFAULT_ISI_PERIOD
    taps: Optional[int] = None
    n_symbols: int = 10000
    seed: int = 20240501
    sampling: str = 'binomial'
    enum_cap_bits: int = 12
    mc_sequences: int = 100000
    mc_fallback: bool = True

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise DomainError(f"未知调制方式: {self.scheme}")
        if self.duplex not in DUPLEX_MODES:
            raise DomainError(f"未知双工模式: {self.duplex}")
        if self.sampling not in SAMPLING_MODES:
            raise DomainError(f"未知采样方式: {self.sampling}")
        if self.n1 < 1:
            raise DomainError(f"n1 必须 >= 1: {self.n1}")
        if self.t_s <= 0:
            raise DomainError(f"t_s 必须为正: {self.t_s}")
        if not (0.0 <= self.T_c < self.slot_duration):
            raise DomainError(f"T_c 必须满足 0 <= T_c < 时隙长度: T_c={self.T_c}")
        if not (0.0 <= self.tau_m <= 1.0):
            raise DomainError(f"tau_m 必须在 [0, 1]: {self.tau_m}")
        if self.sigma_noise_sq < 0:
            raise DomainError(f"噪声方差不能为负: {self.sigma_noise_sq}")
        if self.qcsk_thresholds is not None:
            th = tuple(self.qcsk_thresholds)
            if len(th) != 3 or not (th[0] < th[1] < th[2]):
                raise DomainError(f"QCSK 阈值必须是三个严格递增的数: {th}")

    @classmethod
    def from_section(cls, section, seed: int = None):
        """由配置文件的 [link] 段构造"""
        return cls(
            scheme=section.scheme,
            n1=section.n1,
            t_s=section.t_s_s,
            duplex=section.duplex,
            tau_m=section.tau_m,
            qcsk_thresholds=section.qcsk_thresholds,
            T_c=section.T_c_s,
            a_sic=section.a_sic,
            d_sic=section.d_sic,
            sigma_noise_sq=section.sigma_noise_sq,
            isi_period=section.isi_period_s,
            n_symbols=section.n_symbols,
            seed=seed if seed is not None else (section.seed if section.seed is not None else 20240501),
            sampling=section.sampling,
            enum_cap_bits=section.enum_cap_bits,
            mc_sequences=section.mc_sequences
        )

    def with_(self, **changes) -> 'LinkConfig':
        """返回修改部分字段后的新配置"""
        values = {name: getattr(self, name) for name in self.__dataclass_fields__}
        values.update(changes)
        return LinkConfig(**values)

    @property
    def slot_duration(self) -> float:
        """物理时隙长度"""
        return self.t_s if self.duplex == 'FD' else self.t_s / 2.0

    @property
    def memory(self) -> int:
        """ISI 记忆长度 L（符号数）"""
        return max(1, int(math.ceil(self.isi_period / self.t_s - 1e-9)))

    @property
    def tap_count(self) -> int:
        """需要的物理时隙抽头数"""
        if self.taps is not None:
            return self.taps
        return self.memory if self.duplex == 'FD' else 2 * self.memory

    @property
    def bits_per_symbol(self) -> int:
        return 1 if self.scheme == 'BCSK' else 2

    @property
    def n_levels(self) -> int:
        return 2 ** self.bits_per_symbol

    @property
    def levels(self) -> np.ndarray:
        """每个符号释放的分子数：BCSK {0, n1}，QCSK {0, n1/3, 2n1/3, n1}"""
        fractions = np.arange(self.n_levels) / (self.n_levels - 1)
        return np.rint(fractions * self.n1).astype(np.int64)

    @property
    def thresholds(self) -> np.ndarray:
        """判决阈值（绝对分子数）"""
        if self.scheme == 'BCSK':
            return np.array([self.tau_m * self.n1])
        if self.qcsk_thresholds is not None:
            return np.asarray(self.qcsk_thresholds, dtype=float)
        lv = self.levels.astype(float)
        return (lv[:-1] + lv[1:]) / 2.0

    @property
    def sic_mode(self) -> str:
        if self.a_sic and self.d_sic:
            return 'A+D'
        if self.a_sic:
            return 'A'
        if self.d_sic:
            return 'D'
        return 'none'


@dataclass(frozen=True)
class SymbolStream:
    """两个发射机的符号序列"""
    bits_tx1: np.ndarray
    bits_tx2: np.ndarray

    def __post_init__(self):
        if len(self.bits_tx1) != len(self.bits_tx2):
            raise DomainError("两个发射机的符号序列长度必须相同")

    def __len__(self):
        return len(self.bits_tx1)

    def of(self, i: int) -> np.ndarray:
        return np.asarray(self.bits_tx1 if i == 1 else self.bits_tx2)


@dataclass(frozen=True)
class ScheduledStream:
    """
    按物理时隙排列的发射计划

    emit[i-1, s]: Tx_i 在物理时隙 s 发射的符号（不发射时为 0）
    active[i-1, s]: Tx_i 是否在时隙 s 发射
    decode_slots[j-1]: Rx_j 判决所用的物理时隙，依次对应配对发射机的各个符号
    """
    emit: np.ndarray
    active: np.ndarray
    decode_slots: Tuple[np.ndarray, np.ndarray]
    stream: SymbolStream

    @property
    def n_slots(self) -> int:
        return self.emit.shape[1]


@dataclass
class ReceivedCounts:
    """每个接收机每个物理时隙的计数；D-SIC 之后可能为负"""
    y: np.ndarray
    post_sic: bool = False


def full_duplex_schedule(stream: SymbolStream) -> ScheduledStream:
    """全双工：两个发射机在每个时隙同时发射"""
    n = len(stream)
    emit = np.vstack([stream.of(1), stream.of(2)]).astype(np.int64)
    slots = np.arange(n)
    return ScheduledStream(
        emit=emit,
        active=np.ones((2, n), dtype=bool),
        decode_slots=(slots, slots),
        stream=stream
    )


def apply_half_duplex(stream: SymbolStream) -> ScheduledStream:
    """
    半双工调度：Tx1 在偶数时隙（0 起算）发射，Tx2 在奇数时隙发射

    Rx1 只在 Tx2 发射的时隙计数，Rx2 只在 Tx1 发射的时隙计数。
    """
    n = len(stream)
    emit = np.zeros((2, 2 * n), dtype=np.int64)
    active = np.zeros((2, 2 * n), dtype=bool)
    emit[0, 0::2] = stream.of(1)
    emit[1, 1::2] = stream.of(2)
    active[0, 0::2] = True
    active[1, 1::2] = True
    return ScheduledStream(
        emit=emit,
        active=active,
        decode_slots=(np.arange(n) * 2 + 1, np.arange(n) * 2),
        stream=stream
    )


def schedule(stream: SymbolStream, duplex: str) -> ScheduledStream:
    return full_duplex_schedule(stream) if duplex == 'FD' else apply_half_duplex(stream)


def emission_counts(coeffs: ChannelCoefficients, scheduled: ScheduledStream, levels,
                    rng: np.random.Generator, mode: str = 'binomial', a_sic: bool = False,
                    sigma_noise_sq: float = 0.0) -> ReceivedCounts:
    """
    按信道系数采样每个时隙的到达分子数

    第 s 个时隙从第 s−k 个时隙的发射中收到 Binomial(level, p_ij[k]) 个分子
    （gaussian 模式用同均值同方差的正态分布），再加上方差为 sigma_noise_sq 的计数噪声。

    Args:
        coeffs: 物理时隙上的信道系数
        scheduled: 发射计划
        levels: 符号 → 分子数
        rng: 随机数生成器
        mode: 'binomial' 或 'gaussian'
        a_sic: 使用 A-SIC 后的 φ 系数
        sigma_noise_sq: 噪声方差
    """
    if mode not in SAMPLING_MODES:
        raise DomainError(f"未知采样方式: {mode}")
    levels = np.asarray(levels, dtype=np.int64)
    n_slots = scheduled.n_slots
    y = np.zeros((2, n_slots))

    for i in (1, 2):
        counts = levels[scheduled.emit[i - 1]]
        for j in (1, 2):
            taps = coeffs.taps(i, j, a_sic)
            for k in range(min(coeffs.K, n_slots)):
                p = float(taps[k])
                if p <= 0.0:
                    continue
                source = counts[:n_slots - k]
                if mode == 'binomial':
                    arrivals = rng.binomial(source, min(p, 1.0))
                else:
                    arrivals = rng.normal(source * p, np.sqrt(source * p * (1.0 - p)))
                y[j - 1, k:] += arrivals

    if sigma_noise_sq > 0:
        y += rng.normal(0.0, math.sqrt(sigma_noise_sq), size=y.shape)
    return ReceivedCounts(y=y)


def a_sic_keep(hit_times_in_slot, T_c: float) -> np.ndarray:
    """A-SIC 逐分子保留掩码：时隙内到达时间不早于 T_c 的分子保留"""
    if T_c < 0:
        raise DomainError(f"T_c 不能为负: {T_c}")
    return np.asarray(hit_times_in_slot, dtype=float) >= T_c


def a_sic_filter(hit_times_in_slot, T_c: float) -> int:
    """A-SIC：丢弃时隙内前 T_c 时间到达的分子，返回保留的个数"""
    return int(np.count_nonzero(a_sic_keep(hit_times_in_slot, T_c)))


def d_sic_subtract(count, own_symbol, n1: int, phi_jj_0: float):
    """
    D-SIC：减去当前符号自干扰的期望 n1·φ_jj[0]·x_j[n]

    own_symbol 为本地发射机当前符号的电平比例（BCSK 为 0/1）
    """
    if not (0.0 <= phi_jj_0 <= 1.0):
        raise DomainError(f"phi_jj_0 必须在 [0, 1]: {phi_jj_0}")
    return np.asarray(count, dtype=float) - n1 * phi_jj_0 * np.asarray(own_symbol, dtype=float)


def cancel_self_interference(received: ReceivedCounts, scheduled: ScheduledStream,
                             config: LinkConfig, coeffs: ChannelCoefficients) -> ReceivedCounts:
    """在各接收机的判决时隙上做 D-SIC，返回标记 post_sic 的新计数"""
    if received.post_sic:
        raise DomainError("计数已经做过 D-SIC")
    y = received.y.copy()
    for j in (1, 2):
        slots = scheduled.decode_slots[j - 1]
        # 本地发射机在判决时隙的发射（半双工时为 0）
        own = config.levels[scheduled.emit[j - 1, slots]] / config.n1
        phi0 = float(coeffs.taps(j, j, config.a_sic)[0])
        y[j - 1, slots] = d_sic_subtract(y[j - 1, slots], own, config.n1, phi0)
    return ReceivedCounts(y=y, post_sic=True)


def detect(value, config: LinkConfig):
    """
    阈值判决

    BCSK: value > τ_d 判为 1；QCSK: 落在 (−∞,τ1], (τ1,τ2], (τ2,τ3], (τ3,∞) 依次判为 0..3
    """
    values = np.asarray(value, dtype=float)
    symbols = np.searchsorted(config.thresholds, values, side='left')
    if values.ndim == 0:
        return int(symbols)
    return symbols.astype(np.int64)


def random_stream(config: LinkConfig, n_symbols: int, rng: np.random.Generator) -> SymbolStream:
    symbols = rng.integers(0, config.n_levels, size=(2, n_symbols))
    return SymbolStream(bits_tx1=symbols[0], bits_tx2=symbols[1])


def link_coefficients(model, config: LinkConfig) -> ChannelCoefficients:
    """按链路配置（物理时隙长度、抽头数、T_c）计算信道系数"""
    return channel_coefficients(model, config.slot_duration, config.T_c, config.tap_count)


# ---------------------------------------------------------------------------
# 物理模式：分子归宿来自粒子仿真
# ---------------------------------------------------------------------------

@dataclass
class FatePool:
    """单个发射机的分子归宿样本：receivers ∈ {0,1,2}（0 为未吸收），times 为吸收时间"""
    receivers: np.ndarray
    times: np.ndarray
    horizon: float

    def __len__(self):
        return self.receivers.size


def build_fate_pools(topology: SystemTopology, n_molecules: int, dt: float, t_end: float,
                     seed: int, threads: int = 1) -> Dict[int, FatePool]:
    """
    为两个发射机各运行一次粒子仿真，得到归宿样本

    发射机贴在接收球表面 (d=0) 时，所有分子在发射瞬间被本地接收机吸收。
    """
    frame = build_frame(topology)
    pools = {}
    for i in (1, 2):
        if topology.tx_distance(i, i) == 0:
            pools[i] = FatePool(
                receivers=np.full(n_molecules, i, dtype=np.int8),
                times=np.zeros(n_molecules),
                horizon=t_end
            )
            continue
        sim = SimConfig(
            topology=topology,
            emitter=transmitter_position(topology, frame, i),
            n_molecules=n_molecules,
            dt=dt,
            t_end=t_end,
            seed=seed + i,
            emitter_index=i
        )
        receivers, times = run_simulation(sim, threads=threads).fates()
        pools[i] = FatePool(receivers=receivers, times=times, horizon=t_end)
    return pools


def physical_counts(pools: Dict[int, FatePool], scheduled: ScheduledStream, levels,
                    slot: float, T_c: float, a_sic: bool, rng: np.random.Generator,
                    sigma_noise_sq: float = 0.0) -> ReceivedCounts:
    """
    每次发射从归宿样本中有放回地抽取分子，按吸收时间分入时隙

    吸收时间 t 落入时隙偏移 k = ceil(t/slot) − 1，时隙内时间 t − k·slot；
    A-SIC 打开时按 a_sic_keep 丢弃时隙内早于 T_c 的分子。
    """
    levels = np.asarray(levels, dtype=np.int64)
    n_slots = scheduled.n_slots
    y = np.zeros((2, n_slots))

    for i in (1, 2):
        pool = pools[i]
        counts = levels[scheduled.emit[i - 1]]
        emit_slots = np.repeat(np.arange(n_slots), counts)
        if emit_slots.size == 0:
            continue
        draws = rng.integers(0, len(pool), size=emit_slots.size)
        receivers = pool.receivers[draws]
        times = pool.times[draws]

        absorbed = receivers > 0
        offset = np.maximum(np.ceil(times[absorbed] / slot) - 1, 0).astype(np.int64)
        in_slot = times[absorbed] - offset * slot
        keep = a_sic_keep(in_slot, T_c) if a_sic else np.ones(offset.size, dtype=bool)
        arrival = emit_slots[absorbed] + offset
        keep &= arrival < n_slots

        rx = receivers[absorbed][keep]
        arrival = arrival[keep]
        for j in (1, 2):
            y[j - 1] += np.bincount(arrival[rx == j], minlength=n_slots)[:n_slots]

    if sigma_noise_sq > 0:
        y += rng.normal(0.0, math.sqrt(sigma_noise_sq), size=y.shape)
    return ReceivedCounts(y=y)


# ---------------------------------------------------------------------------
# 链路仿真
# ---------------------------------------------------------------------------

@dataclass
class LinkResult:
    """链路仿真结果"""
    errors: Tuple[int, int]
    decoded: Tuple[int, int]
    config: LinkConfig
    warmup: int = 0
    trace: Optional[pd.DataFrame] = field(default=None, repr=False)
    received: Optional[ReceivedCounts] = field(default=None, repr=False)

    def ber_rx(self, j: int) -> float:
        return self.errors[j - 1] / self.decoded[j - 1] if self.decoded[j - 1] else 0.0

    @property
    def ber(self) -> float:
        """两个接收机的平均误码率"""
        total = sum(self.decoded)
        return sum(self.errors) / total if total else 0.0

    def standard_error(self) -> float:
        total = sum(self.decoded)
        p = self.ber
        return math.sqrt(max(p * (1.0 - p), 0.0) / total) if total else 0.0


def run_link(config: LinkConfig, coeffs: Optional[ChannelCoefficients] = None,
             n_symbols: int = None, pools: Dict[int, FatePool] = None,
             keep_trace: bool = False) -> LinkResult:
    """
    符号级蒙特卡洛链路仿真

    流程：随机符号 → 调度 → 采样到达数 → D-SIC → 判决。
    前 L 个符号的 ISI 尚未填满，不计入误码统计。

    Args:
        config: 链路配置
        coeffs: 物理时隙上的信道系数（解析模式）
        n_symbols: 每个发射机的符号数，默认 config.n_symbols
        pools: 分子归宿样本（物理模式），给出时忽略 coeffs 的采样
        keep_trace: 是否保留逐符号记录
    """
    n_symbols = n_symbols or config.n_symbols
    if coeffs is None:
        raise DomainError("需要信道系数")
    if coeffs.K < 1:
        raise DomainError("信道系数至少需要一个抽头")

    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    stream = random_stream(config, n_symbols, rng)
    scheduled = schedule(stream, config.duplex)
    levels = config.levels

    if pools is not None:
        needed = coeffs.K * config.slot_duration
        for i, pool in pools.items():
            if pool.horizon < needed * (1.0 - 1e-12):
                raise DomainError(f"Tx{i} 归宿样本时长不足: {pool.horizon} < {needed}")
        received = physical_counts(
            pools, scheduled, levels, config.slot_duration, config.T_c,
            config.a_sic, rng, config.sigma_noise_sq
        )
    else:
        received = emission_counts(
            coeffs, scheduled, levels, rng, config.sampling, config.a_sic, config.sigma_noise_sq
        )

    if config.d_sic:
        received = cancel_self_interference(received, scheduled, config, coeffs)

    warmup = min(config.memory, n_symbols - 1)
    errors = []
    decoded = []
    decisions = []
    values = []
    for j in (1, 2):
        i = 3 - j
        slots = scheduled.decode_slots[j - 1]
        value = received.y[j - 1, slots]
        decision = detect(value, config)
        truth = stream.of(i)
        wrong = decision[warmup:] != truth[warmup:]
        errors.append(int(np.count_nonzero(wrong)))
        decoded.append(int(wrong.size))
        decisions.append(decision)
        values.append(value)

    trace = None
    if keep_trace:
        trace = pd.DataFrame({
            'slot': np.arange(n_symbols),
            'tx1_bit': stream.of(1),
            'tx2_bit': stream.of(2),
            'y_rx1': values[0],
            'y_rx2': values[1],
            'decision_rx1': decisions[0],
            'decision_rx2': decisions[1]
        })

    result = LinkResult(
        errors=(errors[0], errors[1]),
        decoded=(decoded[0], decoded[1]),
        config=config,
        warmup=warmup,
        trace=trace,
        received=received
    )
    log.debug(
        f"链路仿真: {config.duplex}/{config.scheme} SIC={config.sic_mode} "
        f"tau_m={config.tau_m} BER={result.ber:.4g}"
    )
    return result
