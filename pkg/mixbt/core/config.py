from pydantic_settings import BaseSettings
from dotenv import load_dotenv

load_dotenv()

class Settings(BaseSettings):
    """
    Process-level settings for mixbt.
    Run hyperparameters do not live here; they belong to `RunConfig` (see `mixbt.schemas`)
    and are read from the YAML run config. These fields only cover the environment:
    seeds, logging, progress output and selftest effort.
    """
    PROJECT_NAME: str = "mixbt"

    # Logging
    LOG_LEVEL: str = "INFO"  # e.g., DEBUG, INFO, WARNING, ERROR

    # Fallback seed when neither --seed nor the config file provides one
    MIXBT_SEED: int = 0

    # Outputs
    DEFAULT_RUN_DIR: str = "runs"
    SHOW_PROGRESS: bool = False  # tqdm bars on stderr

    # Evaluation
    EVAL_FEATURE_CHUNK: int = 1024  # rows per forward pass when extracting features

    # Selftest
    SELFTEST_TRIALS: int = 50

    class Config:
        env_file = ".env"
        env_file_encoding = 'utf-8'
        extra = 'ignore'  # Ignore extra fields from .env

settings = Settings()
