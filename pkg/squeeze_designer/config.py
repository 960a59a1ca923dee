"""Application configuration settings."""
import os
from dotenv import load_dotenv

load_dotenv()


def _flag(name: str, default: str) -> bool:
    return os.getenv(name, default).strip().lower() in ('1', 'true', 'yes', 'on')


class Config:
    """Base configuration class."""

    # Database configuration (results archive)
    DATABASE_URL = os.getenv('DATABASE_URL', 'sqlite:///./squeeze_designer.db')
    PERSIST_RESULTS = _flag('PERSIST_RESULTS', 'true')

    # Redis configuration
    REDIS_URL = os.getenv('REDIS_URL', 'redis://localhost:6379/0')

    # Celery configuration
    CELERY_BROKER_URL = REDIS_URL
    CELERY_RESULT_BACKEND = REDIS_URL
    CELERY_TASK_SERIALIZER = 'json'
    CELERY_ACCEPT_CONTENT = ['json']
    CELERY_RESULT_SERIALIZER = 'json'
    CELERY_TIMEZONE = 'UTC'
    CELERY_ENABLE_UTC = True
    # Without a deployed broker every task runs in-process
    CELERY_ALWAYS_EAGER = _flag('CELERY_ALWAYS_EAGER', 'true')

    # Logging
    LOG_LEVEL = os.getenv('SQUEEZE_DESIGNER_LOG', 'INFO').upper()

    # Capacity limits
    MAX_DIMENSION = int(os.getenv('MAX_DIMENSION', str(2 ** 22)))
    MAX_DENSITY_DIMENSION = int(os.getenv('MAX_DENSITY_DIMENSION', '4096'))
    MAX_ORACLE_DIMENSION = 4096
    MAX_ORDERING_SOURCES = int(os.getenv('MAX_ORDERING_SOURCES', '9'))

    # Physics / numerics
    REPETITION_RATE_HZ = 1e8  # 10 ns pump period
    NO_SUPPORT_FLOOR = 1e-300
    FIDELITY_GAP_FLOOR = 1e-30
    HERMITIAN_TOL = 1e-12
    PSD_TOL = 1e-10

    # Default cutoffs per mode role
    DEFAULT_CUTOFF_POLARIZATION = 3
    DEFAULT_CUTOFF_NOON_MAIN = 6
    DEFAULT_CUTOFF_ANCILLA = 8
    RECHECK_CUTOFF_INCREMENT = 2

    # Convergence recheck tolerances
    RECHECK_FIDELITY_TOL = 1e-4
    RECHECK_PROBABILITY_RTOL = 1e-3

    # Pruning
    PRUNE_THRESHOLD = 1e-3

    # Descriptor schema
    SCHEMA_VERSION = 1


# Loss weights (w1..w5) per detection scheme; tuned by hand, overridable
WEIGHT_PRESETS = {
    'postselected': (1.0, 4.0, 0.0, 0.0, 50.0),
    'heralded': (1.0, 6.0, 0.0, 0.0, 50.0),
    'noon': (1.0, 8.0, 0.0, 0.0, 100.0),
    'probability': (1.0, 0.0, 0.0, 0.0, 0.0),
}

DEFAULT_OPTIMIZER = {
    'max_iters': 300,
    'restarts': 2,
    'seed': 0,
    'step_init': 0.05,
    'e_ceiling': 1e-4,
    'tolerance': 1e-10,
}

DEFAULT_F0_SCHEDULE = (0.75, 0.99, 0.005)
