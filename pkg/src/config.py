import logging
import os
from dotenv import load_dotenv

load_dotenv()

# Generator
CURVATURE_EPS = float(os.getenv("SENS_CURVATURE_EPS", "1e-2"))
RESAMPLE_ATTEMPTS = int(os.getenv("SENS_RESAMPLE_ATTEMPTS", "20"))

# Interior-point solver
SOLVER_TOL = float(os.getenv("SENS_SOLVER_TOL", "1e-10"))
SOLVER_MAX_ITER = int(os.getenv("SENS_SOLVER_MAX_ITER", "100"))
SOLVER_REG = float(os.getenv("SENS_SOLVER_REG", "1e-10"))

# Assumption checks
TOL_ACT = float(os.getenv("SENS_TOL_ACT", "1e-7"))
TOL_SC = float(os.getenv("SENS_TOL_SC", "1e-7"))
SECOND_ORDER_TOL = float(os.getenv("SENS_SECOND_ORDER_TOL", "1e-9"))
LICQ_TOL = float(os.getenv("SENS_LICQ_TOL", "1e-9"))

# Linear algebra
ZERO_TOL = float(os.getenv("SENS_ZERO_TOL", "1e-14"))
SINGULAR_RTOL = float(os.getenv("SENS_SINGULAR_RTOL", "1e-13"))

# Distributed scheme
DIST_TOL = float(os.getenv("SENS_DIST_TOL", "1e-10"))

# Experiments
TIMING_REPS = int(os.getenv("SENS_TIMING_REPS", "20"))
OUTPUT_DIR = os.getenv("SENS_OUTPUT_DIR", "outputs")
FORMAT_VERSION = os.getenv("SENS_FORMAT_VERSION", "1.0")

# Logging
LOG_LEVEL = os.getenv("SENS_LOG_LEVEL", "INFO")


def configure_logging(level: str = LOG_LEVEL):
    """Configure root logging once for scripts, the CLI and the API."""
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
