# config.py
import os
from typing import Optional
from pydantic_settings import BaseSettings, SettingsConfigDict
from pydantic import field_validator
from functools import lru_cache


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", env_prefix="LAYERPOT_", extra="ignore")

    THREADS: Optional[int] = None  # Worker cap for quadrature chunks (default: cpu count)
    LOG_DIR: str = "logs"
    LOG_LEVEL: str = "INFO"

    LAMBDA_STAR: float = 0.05  # Admissibility threshold for the global Lipschitz constant
    B_NORM_LAMBDA_FLOOR: float = 0.01  # Modulus floor inside the B-norm weight

    CHUNK_SIZE: int = 256  # Target rows per dense quadrature chunk
    OUTPUT_DIR: str = "runs"

    @field_validator("THREADS", mode="before")
    @classmethod
    def empty_str_to_none(cls, v):
        """Convert empty strings to None"""
        if v == "" or v is None:
            return None
        return v

    @property
    def worker_count(self) -> int:
        if self.THREADS is not None and self.THREADS > 0:
            return self.THREADS
        return os.cpu_count() or 1


@lru_cache
def get_settings():
    return Settings()


settings = get_settings()
