from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    seed: int = 0
    workers: int = 1
    log_level: str = "WARNING"

    tol: float = 1e-10
    max_iter: int = 10000

    model_config = SettingsConfigDict(
        env_prefix="SEPCOR_", env_file=".env", env_file_encoding="utf-8", extra="ignore"
    )


def load_settings() -> Settings:
    """Read settings from the environment at call time (flags override these)."""
    return Settings()
