import logging
import os
from functools import lru_cache

from dotenv import load_dotenv
from pydantic import BaseModel, Field

load_dotenv()

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class Settings(BaseModel):
    """Process-level settings read from the environment (or a .env file)."""
    log_level: str = "INFO"
    workers: int = Field(default=1, ge=1)
    block_trials: int = Field(default=65536, ge=1)
    default_seed: int = Field(default=0, ge=0)
    api_host: str = "0.0.0.0"
    api_port: int = 8000


@lru_cache()
def get_settings() -> Settings:
    return Settings(
        log_level=os.getenv("ENTANGLEMENT_LOG_LEVEL", "INFO"),
        workers=int(os.getenv("ENTANGLEMENT_WORKERS", "1")),
        block_trials=int(os.getenv("ENTANGLEMENT_BLOCK_TRIALS", "65536")),
        default_seed=int(os.getenv("ENTANGLEMENT_SEED", "0")),
        api_host=os.getenv("API_HOST", "0.0.0.0"),
        api_port=int(os.getenv("API_PORT", "8000")),
    )


def configure_logging(level: str = None) -> None:
    logging.basicConfig(
        level=(level or get_settings().log_level).upper(),
        format=LOG_FORMAT,
    )
