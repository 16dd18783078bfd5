"""Decentralized horizontal knowledge transfer between small dense classifiers."""
from .config import RunConfig, load_config
from .experiment import run_once

__all__ = ["RunConfig", "load_config", "run_once"]
__version__ = "0.1.0"
