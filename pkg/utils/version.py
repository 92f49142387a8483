"""
Version utility module for loading toolkit information from version.json
"""

import json
import logging
from pathlib import Path
from typing import Dict, Any

logger = logging.getLogger(__name__)

VERSION_FILE = Path(__file__).resolve().parent.parent / "version.json"

DEFAULT_INFO = {
    "version": "1.0.0",
    "date": "2026-10-19",
    "name": "Backstepping Kernel Toolkit",
    "description": "Boundary controllers and observers for coupled reaction-diffusion systems",
    "version_description": "Initial release",
    "branch": "main",
}


def load_version_info() -> Dict[str, Any]:
    """Load version information from version.json with fallback values."""
    try:
        if VERSION_FILE.exists():
            with open(VERSION_FILE, "r", encoding="utf-8") as f:
                return {**DEFAULT_INFO, **json.load(f)}
        logger.warning("version.json not found, using default version info")
    except Exception as e:
        logger.error(f"Error loading version info: {e}")
    return dict(DEFAULT_INFO)


def get_toolkit_name() -> str:
    return load_version_info().get("name", DEFAULT_INFO["name"])


def get_toolkit_version() -> str:
    return load_version_info().get("version", DEFAULT_INFO["version"])
