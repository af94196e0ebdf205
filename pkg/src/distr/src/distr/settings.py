from functools import lru_cache
from pathlib import Path

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    log_level: str = "INFO"
    log_format: str = "{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}"

    # Seeds run in separate processes when > 1
    max_workers: int = 1

    # Output formatting
    float_format: str = "%.17g"
    run_log_name: str = "run.log"

    model_config = SettingsConfigDict(
        env_prefix="DISTR_",
        env_file=Path(__file__).parent / ".env",
        env_file_encoding="utf-8",
    )


@lru_cache
def get_settings() -> Settings:
    return Settings()
