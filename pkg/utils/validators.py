import os
import sys
from typing import Dict, List, Optional, Sequence

import psutil

from config import Config
from utils.logger import get_logger

logger = get_logger(__name__)

COMPLEX_BYTES = 16


def validate_environment(output_root: Optional[str] = None) -> bool:
    """
    验证运行环境和依赖

    Returns:
        bool: 环境验证是否通过
    """
    logger.info("开始验证运行环境...")

    try:
        if not _check_python_version():
            return False

        if not _check_required_packages():
            return False

        root = output_root or Config.OUTPUT_ROOT
        if not _check_directory_permissions(root, create=True):
            logger.error(f"输出目录权限不足: {root}")
            return False

        problems = Config.validate()
        if problems:
            for problem in problems:
                logger.error(f"配置错误: {problem}")
            return False

        logger.success("环境验证通过")
        return True

    except Exception as e:
        logger.error(f"环境验证过程中出错: {e}")
        return False


def _check_python_version() -> bool:
    version = sys.version_info
    required_version = (3, 9)

    if version < required_version:
        logger.error(f"Python版本过低: 当前 {version.major}.{version.minor}, "
                     f"需要 >= {required_version[0]}.{required_version[1]}")
        return False

    logger.debug(f"Python版本检查通过: {version.major}.{version.minor}.{version.micro}")
    return True


def _check_required_packages() -> bool:
    """检查必要的Python包"""
    # 映射pip包名到Python模块名
    required_packages = {
        'numpy': 'numpy',
        'scipy': 'scipy',
        'pyyaml': 'yaml',
        'python-dotenv': 'dotenv',
        'colorama': 'colorama',
        'tqdm': 'tqdm',
        'psutil': 'psutil',
    }

    missing_required = []
    for pip_name, module_name in required_packages.items():
        try:
            __import__(module_name)
        except ImportError:
            missing_required.append(pip_name)

    if missing_required:
        logger.error(f"缺少必要依赖包: {', '.join(missing_required)}")
        logger.error("请运行: pip install -r requirements.txt")
        return False

    logger.debug("依赖包检查通过")
    return True


def _check_directory_permissions(directory: str, create: bool = False) -> bool:
    """检查目录权限"""
    try:
        if create:
            os.makedirs(directory, exist_ok=True)

        if not os.path.exists(directory):
            return False

        if not os.access(directory, os.R_OK | os.W_OK):
            return False

        test_file = os.path.join(directory, '.permission_test')
        try:
            with open(test_file, 'w') as f:
                f.write('test')
            os.remove(test_file)
            return True
        except OSError:
            return False

    except OSError:
        return False


def estimate_memory(lattice_shape: Sequence[int], sample_count: int, workers: int) -> Dict[str, float]:
    """
    Bytes a collision run plans to hold: each worker's two fields, FFT
    scratch and sampled copies, finished contributions of one batch
    (2 x workers trajectories) and the ensemble accumulators.
    """
    points = 1
    for n in lattice_shape:
        points *= int(n)
    field = COMPLEX_BYTES * points
    per_trajectory = field * (6 + 2 * sample_count)
    batch = 2 * workers * field * 3 * sample_count
    accumulators = field * 7 * sample_count
    return {
        'per_trajectory': float(per_trajectory),
        'accumulators': float(accumulators),
        'total': float(workers * per_trajectory + batch + accumulators),
    }


def plan_workers(lattice_shape: Sequence[int], sample_count: int, requested: Optional[int] = None) -> int:
    """
    Largest worker count up to `requested` whose memory estimate fits in
    Config.MEMORY_SAFETY_FRACTION of available memory; never below one.
    """
    workers = max(1, requested or Config.get_worker_count())
    budget = Config.MEMORY_SAFETY_FRACTION * psutil.virtual_memory().available
    planned = workers
    while planned > 1 and estimate_memory(lattice_shape, sample_count, planned)['total'] > budget:
        planned -= 1

    estimate = estimate_memory(lattice_shape, sample_count, planned)['total']
    if planned < workers:
        logger.warning(f"Reducing trajectory workers from {workers} to {planned} to fit "
                       f"{budget / 2 ** 30:.1f} GiB of available memory")
    if estimate > budget:
        logger.warning(f"Planned memory {estimate / 2 ** 30:.2f} GiB exceeds the budget "
                       f"{budget / 2 ** 30:.2f} GiB even with one worker")
    return planned


def validate_json_structure(json_data: Dict, required_fields: List[str]) -> List[str]:
    """Missing top-level fields of a loaded artifact."""
    return [name for name in required_fields if name not in json_data]
