"""
Process-level configuration management
Settings come from the environment (optionally a .env file) with typed getters
"""

import os
from typing import Any, Callable, Dict, Optional, Type

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

DEFAULT_SEED = 20240601

_TRUTHY = frozenset({'true', '1', 't', 'y', 'yes', 'on'})

# run-length settings that the environment may default for every experiment
SIM_ENVIRONMENT = {'dt': 'KMF_DT', 'T': 'KMF_T'}


class Config:
    """
    Typed access to environment variables with defaults.
    Values are read at call time so tests and the CLI can change them.
    """

    @staticmethod
    def get(key: str, default: Optional[str] = None) -> Optional[str]:
        return os.getenv(key, default)

    @staticmethod
    def _typed(key: str, default, cast: Callable):
        raw = os.getenv(key)
        if raw is None or not raw.strip():
            return default
        try:
            return cast(raw.strip())
        except ValueError:
            return default

    @staticmethod
    def get_bool(key: str, default: bool = False) -> bool:
        return Config._typed(key, default, lambda raw: raw.lower() in _TRUTHY)

    @staticmethod
    def get_int(key: str, default: int = 0) -> int:
        return Config._typed(key, default, int)

    @staticmethod
    def get_float(key: str, default: float = 0.0) -> float:
        return Config._typed(key, default, float)

    @staticmethod
    def sim_default(key: str, fallback: Any) -> Any:
        """KMF_DT / KMF_T when set, else the experiment's own default"""
        name = SIM_ENVIRONMENT.get(key)
        if name is None:
            return fallback
        return Config.get_float(name, fallback)

    @staticmethod
    def threads() -> int:
        """Worker cap from KMF_THREADS; 0 means one worker per CPU"""
        requested = Config.get_int('KMF_THREADS', 0)
        if requested <= 0:
            return os.cpu_count() or 1
        return requested

    @staticmethod
    def default_seed() -> int:
        return Config.get_int('KMF_SEED', DEFAULT_SEED)

    @staticmethod
    def timestamps_enabled() -> bool:
        return Config.get_bool('KMF_TIMESTAMP', True)

    @staticmethod
    def get_logging_config() -> Dict[str, Any]:
        """Get logging configuration"""
        return {
            'LOG_LEVEL': Config.get('LOG_LEVEL', 'INFO'),
            'LOG_FORMAT': Config.get('LOG_FORMAT', '%(asctime)s %(name)s %(levelname)s: %(message)s'),
        }


class BaseConfig:
    """Base configuration with common settings"""

    OUTPUT_DIR = os.getenv('KMF_OUTPUT_DIR', 'results')

    # Exact assignment is O(n^3); above this size callers must go entropic
    ASSIGNMENT_CAP = int(os.getenv('KMF_ASSIGNMENT_CAP', '4096'))

    # Fixed row-chunk width of the pairwise interaction sum
    PAIRWISE_CHUNK = int(os.getenv('KMF_PAIRWISE_CHUNK', '256'))

    # Replicas simulated together in one array batch
    REPLICA_BATCH = int(os.getenv('KMF_REPLICA_BATCH', '1024'))

    LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')


class DevelopmentConfig(BaseConfig):
    """Development configuration"""

    LOG_LEVEL = 'DEBUG'


class TestingConfig(BaseConfig):
    """Testing configuration"""

    LOG_LEVEL = 'WARNING'
    REPLICA_BATCH = 256


class ProductionConfig(BaseConfig):
    """Long desk-scale acceptance runs"""

    LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')


# Configuration mapping
config: Dict[str, Type[BaseConfig]] = {
    'development': DevelopmentConfig,
    'testing': TestingConfig,
    'production': ProductionConfig,
    'default': ProductionConfig
}


def get_config(config_name: Optional[str] = None) -> Type[BaseConfig]:
    """Get configuration class by name"""
    if config_name is None:
        config_name = os.getenv('KMF_ENV', 'default')

    return config.get(config_name, config['default'])


def validate_config() -> Dict[str, Any]:
    """Validate process-level settings"""
    issues = []
    warnings = []

    if Config.get_int('KMF_THREADS', 0) < 0:
        issues.append("KMF_THREADS must be >= 0 (0 = auto)")

    cap = Config.get_int('KMF_ASSIGNMENT_CAP', 4096)
    if cap < 1:
        issues.append("KMF_ASSIGNMENT_CAP must be positive")
    elif cap > 8192:
        warnings.append("KMF_ASSIGNMENT_CAP above 8192 makes exact transport very slow")

    if Config.get_float('KMF_DT', 1.0) <= 0:
        issues.append("KMF_DT must be a positive time step")
    if Config.get_float('KMF_T', 0.0) < 0:
        issues.append("KMF_T must be non-negative")

    if Config.get('KMF_ENV') and Config.get('KMF_ENV') not in config:
        warnings.append(f"Unknown KMF_ENV '{Config.get('KMF_ENV')}', using defaults")

    return {
        'issues': issues,
        'warnings': warnings,
        'valid': len(issues) == 0
    }
