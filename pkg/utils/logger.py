"""
日志管理模块
CLI 安装控制台、滚动文件和运行日志三个输出；库代码只使用模块日志器
"""

import os
import sys
from loguru import logger
from config.config import config


class LogManager:
    """日志管理器"""

    def __init__(self, log_level: str = None, log_file: str = None):
        self.log_level = log_level or config.log_level
        self.log_file = log_file or config.log_file

    @property
    def journal_file(self) -> str:
        """运行日志与主日志同目录"""
        return os.path.join(os.path.dirname(self.log_file) or '.', "runs.log")

    def setup_logger(self, console=sys.stderr):
        """配置日志输出（由 CLI 调用）"""
        logger.remove()

        log_dir = os.path.dirname(self.log_file)
        if log_dir:
            os.makedirs(log_dir, exist_ok=True)

        # 控制台输出走 stderr，stdout 留给命令结果
        logger.add(
            console,
            format="<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>",
            level=self.log_level,
            colorize=True
        )

        logger.add(
            self.log_file,
            format="{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}",
            level=self.log_level,
            rotation="10 MB",
            retention="7 days",
            compression="zip",
            encoding="utf-8"
        )

        # 每条命令一行
        logger.add(
            self.journal_file,
            format="{time:YYYY-MM-DD HH:mm:ss} | {message}",
            filter=lambda record: "run" in record["extra"],
            encoding="utf-8"
        )


def get_module_logger(module_name: str):
    """获取模块专用日志器"""
    return logger.bind(module=module_name)


# 运行日志器
run_logger = logger.bind(run=True)
