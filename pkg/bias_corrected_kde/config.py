from __future__ import annotations

import os
from pathlib import Path

try:
    import psutil
except ModuleNotFoundError:  # pragma: no cover - optional dependency
    psutil = None  # type: ignore[assignment]


BASE_DIR = Path(__file__).resolve().parent
OUTPUT_DIR = Path(os.environ.get("BCKDE_OUTPUT_DIR", BASE_DIR.parent / "output"))
LOG_FILENAME = "bias_corrected_kde.log"

WORKERS_ENV = "BCKDE_WORKERS"

# Quadrature lattices
GRID_MIN_POINTS = 401
GRID_RESOLUTION = 4.0  # lattice spacing <= scale / GRID_RESOLUTION
GRID_MAX_POINTS = 400_001
SUPPORT_SDS = 10.0
CONVOLUTION_SUPPORT_BANDWIDTHS = 6.0
PILOT_MARGIN_BANDWIDTHS = 8.0
KERNEL_CHUNK_ELEMENTS = 1 << 20

# Pilot values below this at a sample point cannot be inverted safely
PILOT_FLOOR = 1e-300

# Kernel constants by quadrature
VARIANCE_CONSTANT_HALF_WIDTH = 12.0
VARIANCE_CONSTANT_POINTS = 4_801

# Finite differences: step = narrowest component sd * FD_STEP_FRACTION
FD_STEP_FRACTION = 1.0 / 50.0
FD_HALF_WIDTH = 4

# Oracle bandwidth search
SEARCH_POINTS = 40
SEARCH_LOWER_FRACTION = 1.0 / 50.0
SEARCH_UPPER_RANGE_MULTIPLE = 2.0
SEARCH_RELATIVE_TOLERANCE = 1e-3

# Simulation
DEFAULT_REPS = 1_000
DEFAULT_SEED = 1
FAILURE_RATE_LIMIT = 0.01
ISE_SCALE = 1e5

REPLICATION_HEADER = ("rep", "kind", "h_star", "min_ise", "sample_hash")
SUMMARY_HEADER = ("density", "n", "kind", "reps", "mean_min_ise_e5", "se_e5")


def ensure_directories(output_dir: Path = OUTPUT_DIR) -> Path:
    """Ensure the output directory exists and return it."""
    output_dir.mkdir(parents=True, exist_ok=True)
    return output_dir


def default_workers() -> int:
    """Worker count from BCKDE_WORKERS, else physical cores."""
    raw = os.environ.get(WORKERS_ENV)
    if raw:
        try:
            value = int(raw)
        except ValueError:
            value = 0
        if value >= 1:
            return value

    if psutil is not None:
        cores = psutil.cpu_count(logical=False)
        if cores:
            return int(cores)
    return os.cpu_count() or 1
