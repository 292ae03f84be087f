# FILE: src/config.py

import os
import sys
from dataclasses import dataclass
from functools import lru_cache

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


def _env_bool(name: str, default: bool) -> bool:
    raw = os.getenv(name)
    if raw is None:
        return default
    return raw.strip().strip('"').strip("'").lower() in ('1', 'true', 'yes', 'on')


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(name)
    if not raw:
        return default
    return float(raw.strip().strip('"').strip("'"))


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if not raw:
        return default
    return int(raw.strip().strip('"').strip("'"))


@dataclass(frozen=True)
class Settings:
    """Runtime settings read from the environment (or a .env file)"""

    verbose: bool = False
    output_dir: str = 'data/output'
    model_dir: str = 'data/models'
    max_steps: int = 200000
    wall_clock_limit: float = 600.0
    machine_tol: float = 1e-10
    random_seed: int = 20240601
    cfl_safety: float = 1.0

    @classmethod
    def from_env(cls) -> 'Settings':
        return cls(
            verbose=_env_bool('PHS_VERBOSE', False),
            output_dir=os.getenv('PHS_OUTPUT_DIR', 'data/output'),
            model_dir=os.getenv('PHS_MODEL_DIR', 'data/models'),
            max_steps=_env_int('PHS_MAX_STEPS', 200000),
            wall_clock_limit=_env_float('PHS_WALL_CLOCK_LIMIT', 600.0),
            machine_tol=_env_float('PHS_MACHINE_TOL', 1e-10),
            random_seed=_env_int('PHS_RANDOM_SEED', 20240601),
            cfl_safety=_env_float('PHS_CFL_SAFETY', 1.0),
        )


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    return Settings.from_env()


def reload_settings() -> Settings:
    """Re-read the environment, e.g. after a test changed it"""
    get_settings.cache_clear()
    return get_settings()


_force_verbose = False


def set_verbose(flag: bool):
    global _force_verbose
    _force_verbose = flag


def status(message: str):
    """Progress line on stderr; stdout is reserved for JSON / CSV output"""
    if _force_verbose or get_settings().verbose:
        print(message, file=sys.stderr)
