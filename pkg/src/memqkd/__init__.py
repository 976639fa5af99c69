"""Memory-assisted MDI-QKD rate model: analytic rate equations plus a
global/local clock Monte Carlo engine for synchronous and asynchronous
memory loading over free-space links."""

__version__ = "0.1.0"

from .core import SystemConfig, load_config, validate_config  # noqa: E402

__all__ = ["SystemConfig", "load_config", "validate_config", "__version__"]
