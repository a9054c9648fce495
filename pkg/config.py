import os
from dotenv import load_dotenv

load_dotenv()

class Config:
    # 日志配置
    LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')
    LOG_FILE = os.getenv('LOG_FILE', 'logs/collision.log')
    LOG_MAX_SIZE = int(os.getenv('LOG_MAX_SIZE', str(10 * 1024 * 1024)))  # 10MB
    LOG_BACKUP_COUNT = int(os.getenv('LOG_BACKUP_COUNT', '5'))

    # 并行配置
    COLLISION_WORKERS = int(os.getenv('COLLISION_WORKERS', str(os.cpu_count() or 1)))
    FFT_WORKERS = int(os.getenv('FFT_WORKERS', '1'))  # threads inside a single FFT call
    MEMORY_SAFETY_FRACTION = float(os.getenv('MEMORY_SAFETY_FRACTION', '0.8'))

    # 输出与检查点
    OUTPUT_ROOT = os.getenv('OUTPUT_ROOT', './runs')
    CHECKPOINT_INTERVAL = int(os.getenv('CHECKPOINT_INTERVAL', '50'))  # trajectories
    SCHEMA_DIR = os.getenv('SCHEMA_DIR', os.path.join(os.path.dirname(os.path.abspath(__file__)), 'data_schemas'))

    # 随机轨迹配置
    DIVERGENCE_FACTOR = float(os.getenv('DIVERGENCE_FACTOR', '1e6'))  # |Psi|^2 > factor * rho0 trips the guard
    MAX_INVALID_FRACTION = float(os.getenv('MAX_INVALID_FRACTION', '0.5'))

    # 基态求解配置
    GROUNDSTATE_TOLERANCE = float(os.getenv('GROUNDSTATE_TOLERANCE', '1e-8'))
    GROUNDSTATE_MAX_ITERATIONS = int(os.getenv('GROUNDSTATE_MAX_ITERATIONS', '20000'))
    GROUNDSTATE_RESIDUAL_TOLERANCE = float(os.getenv('GROUNDSTATE_RESIDUAL_TOLERANCE', '1e-3'))
    GROUNDSTATE_MAX_OUTER_ITERATIONS = int(os.getenv('GROUNDSTATE_MAX_OUTER_ITERATIONS', '30'))
    GROUNDSTATE_TARGET_TOLERANCE = float(os.getenv('GROUNDSTATE_TARGET_TOLERANCE', '1e-3'))
    GROUNDSTATE_BOUNDARY_MARGIN = int(os.getenv('GROUNDSTATE_BOUNDARY_MARGIN', '4'))  # lattice spacings

    # 精确少模求解器
    ORACLE_LEAKAGE_TOLERANCE = float(os.getenv('ORACLE_LEAKAGE_TOLERANCE', '1e-6'))
    ORACLE_MAX_DIMENSION = int(os.getenv('ORACLE_MAX_DIMENSION', '20000'))  # per number sector
    ORACLE_MAX_CUTOFF_DOUBLINGS = int(os.getenv('ORACLE_MAX_CUTOFF_DOUBLINGS', '3'))
    ORACLE_Z_THRESHOLD = float(os.getenv('ORACLE_Z_THRESHOLD', '3.0'))

    # 统计判定
    SIGMA_THRESHOLD = float(os.getenv('SIGMA_THRESHOLD', '3.0'))  # standard errors for pass/fail checks
    G2_MIN_DENOMINATOR = float(os.getenv('G2_MIN_DENOMINATOR', '1e-12'))
    CONSISTENCY_OUTLIER_FRACTION = float(os.getenv('CONSISTENCY_OUTLIER_FRACTION', '0.05'))  # bins beyond SIGMA_THRESHOLD
    MEAN_FIELD_MIN_OCCUPATION = float(os.getenv('MEAN_FIELD_MIN_OCCUPATION', '1.0'))  # atoms per bin in |<Psi>|^2

    # 验证评分权重
    VALIDATION_ERROR_WEIGHT = float(os.getenv('VALIDATION_ERROR_WEIGHT', '25'))
    VALIDATION_WARNING_WEIGHT = float(os.getenv('VALIDATION_WARNING_WEIGHT', '5'))

    @classmethod
    def get_worker_count(cls) -> int:
        """Trajectory workers, never below one."""
        return max(1, cls.COLLISION_WORKERS)

    @classmethod
    def get_fft_workers(cls) -> int:
        return max(1, cls.FFT_WORKERS)

    @classmethod
    def validate(cls):
        """验证配置参数，返回问题列表"""
        errors = []

        if cls.COLLISION_WORKERS < 1:
            errors.append(f"COLLISION_WORKERS must be >= 1, got {cls.COLLISION_WORKERS}")

        if not 0.0 < cls.MEMORY_SAFETY_FRACTION <= 1.0:
            errors.append(f"MEMORY_SAFETY_FRACTION must be in (0, 1], got {cls.MEMORY_SAFETY_FRACTION}")

        if not 0.0 < cls.MAX_INVALID_FRACTION <= 1.0:
            errors.append(f"MAX_INVALID_FRACTION must be in (0, 1], got {cls.MAX_INVALID_FRACTION}")

        if cls.DIVERGENCE_FACTOR <= 1.0:
            errors.append(f"DIVERGENCE_FACTOR must exceed 1, got {cls.DIVERGENCE_FACTOR}")

        if cls.GROUNDSTATE_TOLERANCE <= 0 or cls.GROUNDSTATE_RESIDUAL_TOLERANCE <= 0:
            errors.append("Ground-state tolerances must be positive")

        if cls.CHECKPOINT_INTERVAL < 1:
            errors.append(f"CHECKPOINT_INTERVAL must be >= 1, got {cls.CHECKPOINT_INTERVAL}")

        if not os.path.isdir(cls.SCHEMA_DIR):
            errors.append(f"Schema directory not found: {cls.SCHEMA_DIR}")

        return errors
