from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

from .config import LOG_FILENAME, OUTPUT_DIR


def configure_logging(level: int = logging.INFO, log_dir: Optional[Path] = None) -> Path:
    target_dir = log_dir or OUTPUT_DIR
    target_dir.mkdir(parents=True, exist_ok=True)
    log_path = target_dir / LOG_FILENAME
    logging.basicConfig(
        level=level,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        handlers=[
            logging.FileHandler(log_path, encoding="utf-8"),
            logging.StreamHandler(),
        ],
        force=True,
    )
    return log_path
