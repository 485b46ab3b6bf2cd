from functools import lru_cache
from settings.config import Settings

@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Return application settings."""
    return Settings()
