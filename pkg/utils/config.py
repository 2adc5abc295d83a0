"""
utils/config.py
----------------
Centralized run settings.

Everything numeric that is not part of a single experiment lives here and is
read once from the environment (a `.env` file is honored). Experiment-level
knobs (d, surface, N schedule, ...) live in `experiment.ExperimentConfig`.
"""
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

load_dotenv()


def _env_int(key: str, default: int) -> int:
    raw = os.getenv(key)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise RuntimeError(f"{key} must be an integer, got {raw!r}") from exc


def _env_bool(key: str, default: bool) -> bool:
    raw = os.getenv(key)
    if raw is None or raw == "":
        return default
    if raw.lower() in ("1", "true", "yes", "on"):
        return True
    if raw.lower() in ("0", "false", "no", "off"):
        return False
    raise RuntimeError(f"{key} must be a boolean, got {raw!r}")


@dataclass(frozen=True)
class Settings:
    out_dir: Path
    threads: int
    seed: int
    log_level: str
    lattice_cap: int
    pair_budget: int
    allow_rational_p: bool
    table_cache: Optional[Path]


def load_settings() -> Settings:
    table_cache = os.getenv("MT_TABLE_CACHE")
    settings = Settings(
        out_dir=Path(os.getenv("MT_OUT_DIR", "./runs")),
        threads=_env_int("MT_THREADS", 1),
        seed=_env_int("MT_SEED", 7),
        log_level=os.getenv("MT_LOG_LEVEL", "INFO").upper(),
        # --- combinatorial guards ---
        # |Q| and N*|Q| caps; the delta-model energy refuses beyond pair_budget.
        lattice_cap=_env_int("MT_LATTICE_CAP", 1_000_000),
        pair_budget=_env_int("MT_PAIR_BUDGET", 10_000_000),
        allow_rational_p=_env_bool("MT_ALLOW_RATIONAL_P", False),
        table_cache=Path(table_cache) if table_cache else None,
    )
    if settings.threads < 1:
        raise RuntimeError("MT_THREADS must be >= 1")
    return settings


settings = load_settings()
