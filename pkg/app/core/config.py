"""Configuration settings for the application."""
import os
from typing import List, Optional

from dotenv import load_dotenv
from pydantic import BaseModel

load_dotenv()


def _env_flag(name: str, default: str) -> bool:
    return os.environ.get(name, default).lower() in ("true", "1", "t")


class Settings(BaseModel):
    """Application settings."""
    api_host: str = os.environ.get("API_HOST", "localhost")
    api_port: int = int(os.environ.get("API_PORT", "8000"))
    api_workers: int = int(os.environ.get("API_WORKERS", "1"))
    debug: bool = _env_flag("DEBUG", "False")
    log_level: str = os.environ.get("LOG_LEVEL", "INFO").upper()
    allow_origins: List[str] = []

    def __init__(self, **data):
        super().__init__(**data)
        # Parse ALLOW_ORIGINS from environment variable
        allow_origins_str = os.environ.get("ALLOW_ORIGINS", "")
        if allow_origins_str:
            self.allow_origins = [origin.strip() for origin in allow_origins_str.split(",")]

    # Experiment defaults; the seed here has the lowest precedence
    default_seed: Optional[int] = int(os.environ["SPDE_SEED"]) if os.environ.get("SPDE_SEED") else None
    output_dir: str = os.environ.get("SPDE_OUTPUT_DIR", "./runs")
    threads: int = int(os.environ.get("SPDE_THREADS", "1"))
    figures: bool = _env_flag("SPDE_FIGURES", "True")
    progress: bool = _env_flag("SPDE_PROGRESS", "True")


# Create an instance of Settings
settings = Settings()
