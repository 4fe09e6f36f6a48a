# Numerical settings and defaults shared across levylab components
import os

# Environment
WORKERS_ENV = "LEVYLAB_WORKERS"
FFT_WORKERS_ENV = "LEVYLAB_FFT_WORKERS"
DEFAULT_WORKERS = 2


def worker_count(explicit: int | None = None) -> int:
    """Return the scenario pool size: explicit value, then env var, then default."""
    if explicit is not None and explicit > 0:
        return int(explicit)
    raw = os.environ.get(WORKERS_ENV, "")
    try:
        value = int(raw)
    except ValueError:
        return DEFAULT_WORKERS
    return value if value > 0 else DEFAULT_WORKERS


def fft_workers() -> int:
    """Threads handed to scipy.fft."""
    try:
        return max(1, int(os.environ.get(FFT_WORKERS_ENV, "1")))
    except ValueError:
        return 1


# Grid
MIN_POINTS_PER_DIM = 8
DEALIAS_FRACTION = 2.0 / 3.0

# Symbol quadrature
QUADRATURE = {
    "r_min": 1e-6,
    "gauss_order": 16,
    "initial_panels": 64,
    "max_panels": 4096,
    "rel_tol": 1e-8,
    "chunk": 128,
    "series_cutoff": 1e-3,
}

KERNEL_PROFILES = ("stable", "truncated-stable", "two-exponent")

# Heat-kernel resolution: width sqrt(2t) must span this many cells
HEAT_MIN_CELLS = 3.0

# Mollifier
MOLLIFIER_MASS_TOL = 1e-8
DIVERGENCE_TOL = 1e-10

# Solver
SOLVER_DEFAULTS = {
    "scheme": "imex-spectral",
    "picard_tol": 1e-10,
    "max_iters": 60,
    "min_window_nodes": 8,
    "contraction_target": 0.5,
    "dt": 0.01,
    "store_every": 1,
    "norm_p": 2.0,
}
TAYLOR_MAX_TERMS = 60
TAYLOR_TOL = 1e-17
MOLLIFIER_FLOOR_CELLS = 2.0
MIN_VISCOSITY_RUNS = 3
CALIBRATION_MARGIN = 1.25
CALIBRATION_PROBES = 4
CALIBRATION_POWER_ITERS = 6
CALIBRATION_STARTS = 3

# Verifiers
VERIFIER_TOL = 1e-6
TRANSFER_TOL = 1e-5
SYMBOL_FIT_SLACK = 0.10
BESOV_SLACK = 0.25

# Molecules
CORONA_RATIO = 5.0
EPS_STEP = 0.1
ZETA_LADDER = tuple(2.0**k for k in range(1, 21))
NU_LADDER = tuple(2.0**-k for k in range(1, 31))
ETA_PREFACTOR = 1e-4
AMPLITUDE_SATURATION = 0.9
MIN_MOLECULE_CELLS = 4
P_FRACTION = 0.25
OVERSHOOT = 1.25
NU1_RATIO = 0.1
MOMENT_TOL = 1e-10
SPLIT_TOL = 1e-6
CENTER_STEPS = 16

# Holder probe
CENTER_STRIDE = 4
GAMMA_PROBE = tuple(round(0.05 * k, 2) for k in range(1, 20))
STABILITY_TOL = 0.10
MIN_FIT_R2 = 0.9
MIN_FIT_SCALES = 3
AGREEMENT_TOL = 0.15
FLAT_THRESHOLD = 1e-12

# Field binary format
FIELD_MAGIC = b"LVYF"
FIELD_VERSION = 1
SYMBOL_MAGIC = b"LVYS"

# Reporting
REPORT_FILENAME = "report.json"
TIMING_FILENAME = "timing.json"
