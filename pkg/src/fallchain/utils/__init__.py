from .logger import get_logger, setup_logger
from .seeding import derive_seed, stream

__all__ = ["get_logger", "setup_logger", "derive_seed", "stream"]
