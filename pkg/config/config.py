import os
import configparser
from dotenv import load_dotenv
from dataclasses import dataclass, field
from typing import Optional, Tuple

from utils.errors import ConfigError

# 加载环境变量
load_dotenv()


def _env_bool(name: str, default: bool = False) -> bool:
    value = os.getenv(name)
    if value is None:
        return default
    return value.strip().lower() in ('1', 'true', 'yes', 'on')


def _env_int(name: str, default: int) -> int:
    value = os.getenv(name)
    if value is None or not value.strip():
        return default
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"无法解析为整数: {value!r}", key=name)


@dataclass
class RuntimeConfig:
    """运行时配置（来自 .env）"""
    out_dir: str = 'data/out'
    threads: int = 1
    seed: int = 20240501
    full_scale: bool = False

    @classmethod
    def from_env(cls):
        return cls(
            out_dir=os.getenv('MCVD_OUT_DIR', 'data/out'),
            threads=_env_int('MCVD_THREADS', 1),
            seed=_env_int('MCVD_SEED', 20240501),
            full_scale=_env_bool('MCVD_FULL_SCALE', False)
        )

    def __post_init__(self):
        if self.threads < 1:
            raise ConfigError(f"线程数必须 >= 1: {self.threads}", key='MCVD_THREADS')


class Config:
    """全局配置管理"""

    def __init__(self):
        # 日志配置
        self.log_level = os.getenv('LOG_LEVEL', 'INFO')
        self.log_file = os.getenv('LOG_FILE', 'logs/mcvd.log')

    @property
    def runtime(self) -> RuntimeConfig:
        """每次读取环境变量；格式错误抛出 ConfigError"""
        return RuntimeConfig.from_env()


# ---------------------------------------------------------------------------
# 实验配置文件（[section] key=value）
# ---------------------------------------------------------------------------

class _Section:
    """带类型转换的配置段读取器"""

    def __init__(self, parser: configparser.ConfigParser, name: str):
        self.name = name
        self.present = parser.has_section(name)
        self._items = dict(parser.items(name)) if self.present else {}

    def _raw(self, key: str, default=None, required: bool = False):
        if key in self._items:
            return self._items[key].strip()
        if required:
            raise ConfigError("缺少必需字段", key=f"{self.name}.{key}")
        return default

    def has(self, key: str) -> bool:
        return key in self._items

    def get_float(self, key: str, default: float = None, required: bool = False) -> Optional[float]:
        raw = self._raw(key, default, required)
        if raw is None or isinstance(raw, float):
            return raw
        try:
            return float(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"无法解析为数值: {raw!r}", key=f"{self.name}.{key}")

    def get_int(self, key: str, default: int = None, required: bool = False) -> Optional[int]:
        raw = self._raw(key, default, required)
        if raw is None or isinstance(raw, int):
            return raw
        try:
            # 允许 1e5 这类写法
            return int(float(raw))
        except (TypeError, ValueError):
            raise ConfigError(f"无法解析为整数: {raw!r}", key=f"{self.name}.{key}")

    def get_bool(self, key: str, default: bool = False) -> bool:
        raw = self._raw(key, default)
        if isinstance(raw, bool):
            return raw
        lowered = str(raw).lower()
        if lowered in ('1', 'true', 'yes', 'on'):
            return True
        if lowered in ('0', 'false', 'no', 'off'):
            return False
        raise ConfigError(f"无法解析为布尔值: {raw!r}", key=f"{self.name}.{key}")

    def get_str(self, key: str, default: str = None, required: bool = False) -> Optional[str]:
        return self._raw(key, default, required)

    def get_floats(self, key: str) -> Optional[Tuple[float, ...]]:
        raw = self._raw(key)
        if raw is None:
            return None
        try:
            return tuple(float(v) for v in raw.split(',') if v.strip())
        except ValueError:
            raise ConfigError(f"无法解析为数值列表: {raw!r}", key=f"{self.name}.{key}")


@dataclass
class TopologySection:
    """[topology] 几何与物理参数"""
    r_r1_um: float
    r_r2_um: float
    d1_um: float
    d2_um: float
    ell_um: float
    diffusion_um2_per_s: float
    d_tx1_rx2_um: Optional[float] = None
    d_tx2_rx1_um: Optional[float] = None

    @classmethod
    def from_section(cls, section: _Section):
        r1 = section.get_float('r_r1_um', required=True)
        r2 = section.get_float('r_r2_um', required=True)
        d1 = section.get_float('d1_um', required=True)
        d2 = section.get_float('d2_um', required=True)
        d12 = section.get_float('d_tx1_rx2_um')
        ell = section.get_float('ell_um')
        if ell is None:
            if d12 is None:
                raise ConfigError("需要 ell_um 或 d_tx1_rx2_um", key='topology.ell_um')
            ell = r1 + d1 + d12 + r2
        return cls(
            r_r1_um=r1,
            r_r2_um=r2,
            d1_um=d1,
            d2_um=d2,
            ell_um=ell,
            diffusion_um2_per_s=section.get_float('diffusion_um2_per_s', required=True),
            d_tx1_rx2_um=d12,
            d_tx2_rx1_um=section.get_float('d_tx2_rx1_um')
        )


@dataclass
class ChannelSection:
    """[channel] 解析信道参数"""
    m_max: int = 100000
    n_terms: int = 100000
    t_s_s: float = 0.15
    T_c_s: float = 0.0
    isi_period_s: float = 0.6
    taps: Optional[int] = None
    t_max_s: float = 0.6
    t_points: int = 601
    impulse_dt_s: float = 1e-3

    @classmethod
    def from_section(cls, section: _Section):
        return cls(
            m_max=section.get_int('m_max', 100000),
            n_terms=section.get_int('n_terms', 100000),
            t_s_s=section.get_float('t_s_s', 0.15),
            T_c_s=section.get_float('T_c_s', 0.0),
            isi_period_s=section.get_float('isi_period_s', 0.6),
            taps=section.get_int('taps'),
            t_max_s=section.get_float('t_max_s', 0.6),
            t_points=section.get_int('t_points', 601),
            impulse_dt_s=section.get_float('impulse_dt_s', 1e-3)
        )


@dataclass
class SimulationSection:
    """[simulation] 粒子仿真参数（默认桌面规模）"""
    n_molecules: int = 10000
    dt_s: float = 1e-4
    t_end_s: float = 0.1
    replications: int = 1
    emitter: str = 'tx1'
    dump_hits: bool = False
    full_scale: bool = False
    seed: Optional[int] = None

    @classmethod
    def from_section(cls, section: _Section):
        sim = cls(
            n_molecules=section.get_int('n_molecules', 10000),
            dt_s=section.get_float('dt_s', 1e-4),
            t_end_s=section.get_float('t_end_s', 0.1),
            replications=section.get_int('replications', 1),
            emitter=section.get_str('emitter', 'tx1').lower(),
            dump_hits=section.get_bool('dump_hits', False),
            full_scale=section.get_bool('full_scale', False),
            seed=section.get_int('seed')
        )
        if sim.emitter not in ('tx1', 'tx2'):
            raise ConfigError(f"emitter 只能是 tx1/tx2: {sim.emitter}", key='simulation.emitter')
        return sim

    def scaled(self, full_scale: bool = False) -> 'SimulationSection':
        """完整规模：5×10⁴ 分子，Δt=1e-5，10 次重复"""
        if not (full_scale or self.full_scale):
            return self
        return SimulationSection(
            n_molecules=50000, dt_s=1e-5, t_end_s=self.t_end_s, replications=10,
            emitter=self.emitter, dump_hits=self.dump_hits, full_scale=True, seed=self.seed
        )


@dataclass
class LinkSection:
    """[link] 链路参数"""
    scheme: str = 'BCSK'
    duplex: str = 'FD'
    n1: int = 500
    t_s_s: float = 0.1
    tau_m: float = 0.05
    qcsk_thresholds: Optional[Tuple[float, ...]] = None
    T_c_s: float = 0.0
    a_sic: bool = False
    d_sic: bool = True
    sigma_noise_sq: float = 100.0
    isi_period_s: float = 0.6
    n_symbols: int = 10000
    sampling: str = 'binomial'
    mode: str = 'analytic'
    tau_m_min: float = 0.0
    tau_m_max: float = 0.25
    tau_m_points: int = 20
    enum_cap_bits: int = 12
    mc_sequences: int = 100000
    seed: Optional[int] = None

    @classmethod
    def from_section(cls, section: _Section):
        link = cls(
            scheme=section.get_str('scheme', 'BCSK').upper(),
            duplex=section.get_str('duplex', 'FD').upper(),
            n1=section.get_int('n1', 500),
            t_s_s=section.get_float('t_s_s', 0.1),
            tau_m=section.get_float('tau_m', 0.05),
            qcsk_thresholds=section.get_floats('qcsk_thresholds'),
            T_c_s=section.get_float('T_c_s', 0.0),
            a_sic=section.get_bool('a_sic', False),
            d_sic=section.get_bool('d_sic', True),
            sigma_noise_sq=section.get_float('sigma_noise_sq', 100.0),
            isi_period_s=section.get_float('isi_period_s', 0.6),
            n_symbols=section.get_int('n_symbols', 10000),
            sampling=section.get_str('sampling', 'binomial').lower(),
            mode=section.get_str('mode', 'analytic').lower(),
            tau_m_min=section.get_float('tau_m_min', 0.0),
            tau_m_max=section.get_float('tau_m_max', 0.25),
            tau_m_points=section.get_int('tau_m_points', 20),
            enum_cap_bits=section.get_int('enum_cap_bits', 12),
            mc_sequences=section.get_int('mc_sequences', 100000),
            seed=section.get_int('seed')
        )
        if link.scheme not in ('BCSK', 'QCSK'):
            raise ConfigError(f"未知调制方式: {link.scheme}", key='link.scheme')
        if link.duplex not in ('FD', 'HD'):
            raise ConfigError(f"未知双工模式: {link.duplex}", key='link.duplex')
        if link.sampling not in ('binomial', 'gaussian'):
            raise ConfigError(f"未知采样方式: {link.sampling}", key='link.sampling')
        if link.mode not in ('analytic', 'physical'):
            raise ConfigError(f"未知仿真模式: {link.mode}", key='link.mode')
        return link


@dataclass
class SweepSection:
    """[sweep] 热力图网格"""
    tau_m_min: float = 0.0
    tau_m_max: float = 0.25
    tau_m_points: int = 51
    T_c_points: int = 21

    @classmethod
    def from_section(cls, section: _Section):
        return cls(
            tau_m_min=section.get_float('tau_m_min', 0.0),
            tau_m_max=section.get_float('tau_m_max', 0.25),
            tau_m_points=section.get_int('tau_m_points', 51),
            T_c_points=section.get_int('T_c_points', 21)
        )


@dataclass
class CompareSection:
    """[compare] HD/FD 对比场景"""
    case: int = 1
    n1: int = 500
    t_s_hd_s: float = 0.2
    t_s_fd_s: Optional[float] = None

    @classmethod
    def from_section(cls, section: _Section):
        compare = cls(
            case=section.get_int('case', 1),
            n1=section.get_int('n1', 500),
            t_s_hd_s=section.get_float('t_s_hd_s', 0.2),
            t_s_fd_s=section.get_float('t_s_fd_s')
        )
        if compare.case not in (1, 2, 3, 4):
            raise ConfigError(f"case 只能是 1-4: {compare.case}", key='compare.case')
        return compare


@dataclass
class ExperimentConfig:
    """实验配置文件"""
    topology: TopologySection
    channel: ChannelSection = field(default_factory=ChannelSection)
    simulation: SimulationSection = field(default_factory=SimulationSection)
    link: LinkSection = field(default_factory=LinkSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    compare: CompareSection = field(default_factory=CompareSection)
    source_text: str = ''

    @classmethod
    def from_text(cls, text: str):
        """解析配置文本，错误信息带行号"""
        parser = configparser.ConfigParser(inline_comment_prefixes=('#', ';'))
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.MissingSectionHeaderError as e:
            raise ConfigError("缺少段头 [section]", line=e.lineno)
        except configparser.DuplicateOptionError as e:
            raise ConfigError("重复字段", key=f"{e.section}.{e.option}", line=e.lineno)
        except configparser.DuplicateSectionError as e:
            raise ConfigError("重复段", key=e.section, line=e.lineno)
        except configparser.ParsingError as e:
            line = e.errors[0][0] if e.errors else None
            raise ConfigError("无法解析的行", line=line)

        if not parser.has_section('topology'):
            raise ConfigError("缺少必需段", key='topology')

        return cls(
            topology=TopologySection.from_section(_Section(parser, 'topology')),
            channel=ChannelSection.from_section(_Section(parser, 'channel')),
            simulation=SimulationSection.from_section(_Section(parser, 'simulation')),
            link=LinkSection.from_section(_Section(parser, 'link')),
            sweep=SweepSection.from_section(_Section(parser, 'sweep')),
            compare=CompareSection.from_section(_Section(parser, 'compare')),
            source_text=text
        )

    @classmethod
    def load(cls, path: str):
        """从文件加载"""
        if not os.path.exists(path):
            raise ConfigError(f"配置文件不存在: {path}")
        with open(path, 'r', encoding='utf-8') as f:
            return cls.from_text(f.read())


# 全局配置实例
config = Config()
