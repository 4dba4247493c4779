import logging
import os

from robowatt.errors import InputError

log = logging.getLogger("robowatt.config")


def _is_true(env_var):
    return str(os.getenv(env_var, "false")).lower() in [
        "1",
        "t",
        "true",
    ]


LOG_LEVEL_GLOBAL = os.getenv("LOG_LEVEL_GLOBAL", "INFO").upper()
LOG_LEVEL_APP = os.getenv("LOG_LEVEL_APP", "INFO").upper()
DEBUG_VERBOSE = _is_true("DEBUG_VERBOSE")

# one of: left_riemann, trapezoid
DEFAULT_INTEGRATION_RULE = os.getenv("DEFAULT_INTEGRATION_RULE", "left_riemann")

# worker threads used to evaluate trajectory samples / sweep scales, 1 means sequential
PROFILE_POOL_SIZE = int(os.getenv("PROFILE_POOL_SIZE", 1))
SWEEP_POOL_SIZE = int(os.getenv("SWEEP_POOL_SIZE", 4))

FD_RELATIVE_STEP = float(os.getenv("FD_RELATIVE_STEP", 1e-4))
RICHARDSON_TOLERANCE = float(os.getenv("RICHARDSON_TOLERANCE", 1e-4))
GOLDEN_RELATIVE_TOLERANCE = float(os.getenv("GOLDEN_RELATIVE_TOLERANCE", 1e-4))
MASS_MATRIX_SYMMETRY_TOLERANCE = float(os.getenv("MASS_MATRIX_SYMMETRY_TOLERANCE", 1e-8))
GRADCHECK_MAX_GAP_RATIO = float(os.getenv("GRADCHECK_MAX_GAP_RATIO", 10.0))

DEFAULT_GRAVITY = (0.0, 0.0, -9.81)

PUBLISHED_PARAMS_FILE = os.getenv("PUBLISHED_PARAMS_FILE", "published_params.yaml")

REPORT_VERSION = "1"

_INTEGRATION_RULES = ("left_riemann", "trapezoid")


def get_integration_rule(rule: str | None) -> str:
    """Resolve a rule name, accepting the CLI spelling 'left-riemann' as well."""
    resolved = (rule or DEFAULT_INTEGRATION_RULE).replace("-", "_").lower()
    if resolved not in _INTEGRATION_RULES:
        log.error("invalid integration rule %s, expected one of %s", rule, _INTEGRATION_RULES)
        raise InputError(f"invalid integration rule: {rule}")
    return resolved
