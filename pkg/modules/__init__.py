"""双向分子通信链路模块包"""

from loguru import logger

# 安全导入所有模块
modules_loaded = []

try:
    from .topology.topology import SystemTopology
    modules_loaded.append("SystemTopology")
except Exception as e:
    logger.warning(f"SystemTopology 导入失败: {e}")

try:
    from .channel.channel import ChannelModel
    modules_loaded.append("ChannelModel")
except Exception as e:
    logger.warning(f"ChannelModel 导入失败: {e}")

try:
    from .particle.particle import run_simulation
    modules_loaded.append("run_simulation")
except Exception as e:
    logger.warning(f"run_simulation 导入失败: {e}")

try:
    from .link.link import LinkConfig, run_link
    modules_loaded.append("run_link")
except Exception as e:
    logger.warning(f"run_link 导入失败: {e}")

try:
    from .ber.ber import theoretical_ber
    modules_loaded.append("theoretical_ber")
except Exception as e:
    logger.warning(f"theoretical_ber 导入失败: {e}")

try:
    from .sweep.sweep import ber_heatmap, compare_systems
    modules_loaded.append("compare_systems")
except Exception as e:
    logger.warning(f"compare_systems 导入失败: {e}")

logger.debug(f"已加载模块: {', '.join(modules_loaded)}")

__all__ = ['SystemTopology', 'ChannelModel', 'run_simulation', 'LinkConfig', 'run_link',
           'theoretical_ber', 'ber_heatmap', 'compare_systems']
