# engagedetector package __init__.py
from .config import APP_VERSION as __version__  # noqa: F401
