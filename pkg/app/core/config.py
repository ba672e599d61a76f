from pydantic_settings import BaseSettings
from pydantic import field_validator


class Settings(BaseSettings):
    PROJECT_NAME: str = "SimMST Forecasting Engine"
    VERSION: str = "1.0.0"
    DESCRIPTION: str = "Multi-mode spatial-temporal forecasting with learned cross-mode relations"

    # Default root for run directories when a command gets no --output
    SIMMST_OUTPUT_ROOT: str = "runs"

    # Logging
    LOG_LEVEL: str = "INFO"

    # Checkpoint archive format tag
    CHECKPOINT_FORMAT_VERSION: int = 1

    @field_validator("LOG_LEVEL", mode="before")
    @classmethod
    def normalize_log_level(cls, v: str) -> str:
        level = str(v).upper()
        if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"Unknown log level: {v}")
        return level

    class Config:
        case_sensitive = True
        env_file = ".env"


settings = Settings()
