import os
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Optional

from sqlalchemy.pool import StaticPool
from sqlmodel import Session, SQLModel, create_engine

from litepolis import get_config

PACKAGE_DIR = Path(__file__).parent.resolve()

DEFAULT_CONFIG = {
    "database_url": "sqlite:///jpegxs_uep.db",
    "profile_dir": str(PACKAGE_DIR / "profiles"),
    "default_profile": "default",
    "block_packets": 255,
    "packet_len": 1500,
    "trials": 500,
    "base_seed": 2024,
    "rate_tol": 0.01,
    "psnr_ceiling": 99.0,
    "chain_scope": "frame",
    "hf_all_or_nothing": False,
    "workers": 1,
    "log_level": "WARNING",
}

CONFIG_SECTION = "jpegxs_uep"

# Keys that may be overridden from the environment, as JPEGXS_UEP_<KEY>
_ENV_KEYS = ("database_url", "profile_dir", "log_level", "workers")


class ParameterError(ValueError):
    """Invalid code, channel or experiment parameters."""


class RateRangeError(ValueError):
    """A source rate outside the grid of a codestream profile."""


class ProfileError(ValueError):
    """A codestream profile that cannot be parsed or breaks an invariant."""


class LayoutError(ValueError):
    """The codewords of an interleaving block do not fit in one packet."""


class ConvergenceError(RuntimeError):
    """The rate allocation solver did not reach a fixed point.

    The last iterate is kept on the exception so that callers can inspect
    how far the solver went.
    """

    def __init__(self, message: str, last_iterate: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.last_iterate = last_iterate or {}


class IntegrityError(RuntimeError):
    """Bytes recovered from an interleaving block differ from the sent ones."""


def _coerce(key: str, value: Any) -> Any:
    default = DEFAULT_CONFIG[key]
    if isinstance(default, bool):
        if isinstance(value, str):
            return value.strip().lower() in ("1", "true", "yes", "on")
        return bool(value)
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def _under_pytest() -> bool:
    return "PYTEST_CURRENT_TEST" in os.environ or "PYTEST_VERSION" in os.environ


def get_setting(key: str) -> Any:
    """Resolve one configuration value.

    Priority: 1. Environment variable, 2. LitePolis config, 3. Default
    """
    if key not in DEFAULT_CONFIG:
        raise KeyError(f"Unknown configuration key '{key}'")
    if key in _ENV_KEYS:
        env_value = os.environ.get(f"JPEGXS_UEP_{key.upper()}")
        if env_value:
            return _coerce(key, env_value)
    if not _under_pytest():
        try:
            value = get_config(CONFIG_SECTION, key)
            if value is not None:
                return _coerce(key, value)
        except (ValueError, Exception):
            # Config actor not available yet, use defaults
            pass
    return DEFAULT_CONFIG[key]


def configure_logging(level: Optional[str] = None) -> None:
    """Install a root handler for command line use. The library itself never does."""
    level_name = (level or get_setting("log_level")).upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


database_url = get_setting("database_url")


# Create engine with appropriate settings based on database type
def _create_engine_with_settings():
    """Create engine with settings appropriate for the database type."""
    if database_url.startswith("sqlite"):
        # SQLite: use StaticPool for single connection, check_same_thread=False for multi-threading
        return create_engine(
            database_url,
            connect_args={"check_same_thread": False},
            poolclass=StaticPool,
            pool_pre_ping=True,
        )
    return create_engine(
        database_url,
        pool_size=5,
        max_overflow=10,
        pool_timeout=60,
        pool_recycle=1800,  # Recycle connections after 30 minutes
        pool_pre_ping=True,
    )


engine = _create_engine_with_settings()

_tables_ready = False


def ensure_tables() -> None:
    """Creates the tables of every registered model, once per process.

    Skipped when ``JPEGXS_UEP_AUTO_CREATE_TABLES=false``. Commands that never
    open a session leave no database file behind.
    """
    global _tables_ready
    if _tables_ready:
        return
    if os.environ.get("JPEGXS_UEP_AUTO_CREATE_TABLES", "true").lower() != "false":
        SQLModel.metadata.create_all(engine)
    _tables_ready = True


@contextmanager
def get_session():
    ensure_tables()
    session = Session(engine, autoflush=False, autocommit=False)
    try:
        yield session
    finally:
        session.close()
