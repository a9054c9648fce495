import os
import sys
import logging
import functools
import time
from logging.handlers import RotatingFileHandler, TimedRotatingFileHandler
from datetime import datetime
from typing import Any, Dict, Optional

import colorama
from colorama import Fore, Style
from tqdm import tqdm

from config import Config

colorama.init()

SUCCESS_LEVEL = 25  # 介于INFO(20)和WARNING(30)之间
LOG_FORMAT = '[%(asctime)s] [%(levelname)s] [%(name)s]%(run_tag)s %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'
QUIET_THIRD_PARTY = ('numexpr', 'matplotlib', 'urllib3', 'asyncio')


class ColoredFormatter(logging.Formatter):
    """控制台格式化器：级别与模块名着色"""

    COLORS = {
        'DEBUG': Fore.CYAN,
        'INFO': Fore.GREEN,
        'SUCCESS': Fore.GREEN + Style.BRIGHT,
        'WARNING': Fore.YELLOW,
        'ERROR': Fore.RED,
        'CRITICAL': Fore.RED + Style.BRIGHT,
    }

    def __init__(self):
        super().__init__(LOG_FORMAT, DATE_FORMAT)

    def format(self, record):
        # 副本着色，文件处理器仍看到原始记录
        colored = logging.makeLogRecord(record.__dict__)
        color = self.COLORS.get(record.levelname, '')
        colored.levelname = f"{color}{record.levelname}{Style.RESET_ALL}"
        colored.name = f"{Fore.BLUE}{record.name}{Style.RESET_ALL}"
        return super().format(colored)


class FileFormatter(logging.Formatter):
    """文件日志格式化器（无颜色）"""

    def __init__(self):
        super().__init__(LOG_FORMAT, DATE_FORMAT)


class RunTagFilter(logging.Filter):
    """Stamps every record with the active run's short config hash and seed."""

    def __init__(self):
        super().__init__()
        self.tag = ''

    def bind(self, config_hash: Optional[str], seed: Optional[int] = None):
        if not config_hash:
            self.tag = ''
        elif seed is None:
            self.tag = f" [{config_hash[:8]}]"
        else:
            self.tag = f" [{config_hash[:8]}/{seed}]"

    def filter(self, record):
        record.run_tag = self.tag
        return True


class TqdmConsoleHandler(logging.StreamHandler):
    """Console output routed through tqdm.write so progress bars stay intact."""

    def emit(self, record):
        try:
            tqdm.write(self.format(record), file=self.stream)
            self.flush()
        except Exception:
            self.handleError(record)


def _level(name: str) -> int:
    return getattr(logging, str(name).upper(), logging.INFO)


def _file_handler() -> logging.Handler:
    """按日轮转；不可用时退回按大小轮转，再退回普通文件"""
    try:
        handler = TimedRotatingFileHandler(Config.LOG_FILE, when='midnight', interval=1,
                                           backupCount=Config.LOG_BACKUP_COUNT,
                                           encoding='utf-8', delay=True)
        handler.suffix = "%Y-%m-%d"
        return handler
    except (PermissionError, OSError) as e:
        try:
            return RotatingFileHandler(Config.LOG_FILE, maxBytes=Config.LOG_MAX_SIZE,
                                       backupCount=Config.LOG_BACKUP_COUNT,
                                       encoding='utf-8', delay=True)
        except (PermissionError, OSError) as e2:
            print(f"Warning: Cannot create rotating log handler: {e}, {e2}")
            return logging.FileHandler(Config.LOG_FILE, encoding='utf-8')


class StructuredLogger:
    """结构化日志管理器"""

    def __init__(self):
        self.loggers: Dict[str, logging.Logger] = {}
        self.run_tag = RunTagFilter()
        self.console_handler: Optional[logging.Handler] = None
        logging.addLevelName(SUCCESS_LEVEL, "SUCCESS")
        self.setup_logging()

    def setup_logging(self):
        log_dir = os.path.dirname(Config.LOG_FILE)
        if log_dir:
            os.makedirs(log_dir, exist_ok=True)

        root_logger = logging.getLogger()
        root_logger.setLevel(_level(Config.LOG_LEVEL))
        for handler in root_logger.handlers[:]:
            root_logger.removeHandler(handler)

        file_handler = _file_handler()
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(FileFormatter())
        file_handler.addFilter(self.run_tag)

        console_handler = TqdmConsoleHandler(sys.stdout)
        console_handler.setLevel(_level(Config.LOG_LEVEL))
        console_handler.setFormatter(ColoredFormatter())
        console_handler.addFilter(self.run_tag)
        self.console_handler = console_handler

        root_logger.addHandler(file_handler)
        root_logger.addHandler(console_handler)

        for name in QUIET_THIRD_PARTY:
            logging.getLogger(name).setLevel(logging.WARNING)

    def get_logger(self, name: str) -> logging.Logger:
        if name not in self.loggers:
            logger = logging.getLogger(name)
            logger.success = functools.partial(logger.log, SUCCESS_LEVEL)
            self.loggers[name] = logger
        return self.loggers[name]

    def log_system_info(self):
        import numpy
        import scipy

        logger = self.get_logger('system')
        logger.info("=" * 60)
        logger.info("Condensate Collision Simulator Starting")
        logger.info("=" * 60)
        logger.info(f"Python {sys.version.split()[0]}, numpy {numpy.__version__}, scipy {scipy.__version__}")
        logger.info(f"Working directory: {os.getcwd()}")
        logger.info(f"Log file: {Config.LOG_FILE} (level {Config.LOG_LEVEL})")
        logger.info(f"Trajectory workers: {Config.get_worker_count()}, FFT threads: {Config.get_fft_workers()}")
        logger.info("=" * 60)

    def log_configuration(self, run_config: Optional[Dict[str, Any]] = None):
        logger = self.get_logger('config')
        logger.info(f"Output root: {Config.OUTPUT_ROOT}")
        logger.info(f"Checkpoint interval: {Config.CHECKPOINT_INTERVAL} trajectories")
        logger.info(f"Divergence guard: |Psi|^2 > {Config.DIVERGENCE_FACTOR:g} * rho0, "
                    f"run fails above {Config.MAX_INVALID_FRACTION:.0%} discarded")
        if not run_config:
            return
        logger.info("Run configuration:")
        for section, values in run_config.items():
            if isinstance(values, dict):
                rendered = ', '.join(f"{k}={v}" for k, v in values.items())
                logger.info(f"  {section}: {rendered}")
            else:
                logger.info(f"  {section}: {values}")

    def close_handlers(self):
        for handler in logging.getLogger().handlers:
            handler.close()


_structured_logger: Optional[StructuredLogger] = None


def _manager() -> StructuredLogger:
    global _structured_logger
    if _structured_logger is None:
        _structured_logger = StructuredLogger()
    return _structured_logger


def get_logger(name: str = None) -> logging.Logger:
    """Named logger with a .success() method; the caller's module name by default."""
    if name is None:
        frame = sys._getframe(1)
        name = frame.f_globals.get('__name__', 'unknown')
    return _manager().get_logger(name)


def bind_run(config_hash: Optional[str], seed: Optional[int] = None):
    """Tag subsequent log lines with the run's short hash; None clears the tag."""
    _manager().run_tag.bind(config_hash, seed)


def log_system_startup(run_config: Optional[Dict[str, Any]] = None):
    manager = _manager()
    manager.log_system_info()
    manager.log_configuration(run_config)


def log_system_shutdown():
    logger = get_logger('system')
    logger.info("=" * 60)
    logger.info("Condensate Collision Simulator Shutting Down")
    logger.info(f"Shutdown time: {datetime.now().strftime(DATE_FORMAT)}")
    logger.info("=" * 60)
    if _structured_logger:
        _structured_logger.close_handlers()


def log_performance(func_name: str, execution_time: float, **kwargs):
    from utils.error_formatter import ErrorFormatter
    extra = ' '.join(f"{k}={v}" for k, v in kwargs.items())
    get_logger('performance').info(
        f"{func_name} completed in {ErrorFormatter.format_duration_seconds(execution_time)} {extra}".rstrip())


def log_error_with_context(error: Exception, context: dict = None):
    """Error line plus the exception's own context merged with the caller's."""
    logger = get_logger('error')
    logger.error(f"Error occurred: {type(error).__name__}: {error}")

    merged = dict(getattr(error, 'context', None) or {})
    merged.update(context or {})
    if merged:
        logger.error("Context information:")
        for key, value in merged.items():
            logger.error(f"  {key}: {value}")

    logger.debug("Stack trace:", exc_info=True)


def log_execution_time(logger_name: str = None):
    """装饰器：记录函数执行时间，失败时记录上下文后重新抛出"""
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            start = time.perf_counter()
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                context = {'function': func.__name__,
                           'execution_time': f"{time.perf_counter() - start:.3f}s"}
                if logger_name:
                    context['logger'] = logger_name
                log_error_with_context(e, context)
                raise
            log_performance(func.__name__, time.perf_counter() - start)
            return result

        return wrapper
    return decorator


class LogLevel:
    """
    Temporarily change a logger's level. For the root logger ('') the
    console handler follows, so --debug and --quiet reach the terminal.
    """

    def __init__(self, logger_name: str, level: str):
        self.logger = get_logger(logger_name)
        self.new_level = _level(level)
        self.original_level = self.logger.level
        self.console = _manager().console_handler if not logger_name else None
        self.original_console_level = self.console.level if self.console else None

    def __enter__(self):
        self.logger.setLevel(self.new_level)
        if self.console:
            self.console.setLevel(self.new_level)
        return self.logger

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.logger.setLevel(self.original_level)
        if self.console:
            self.console.setLevel(self.original_console_level)
