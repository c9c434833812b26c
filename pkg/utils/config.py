import logging
import os

from dotenv import load_dotenv

# Load environment variables
load_dotenv()


def _int_env(name, default):
    raw = os.getenv(name, "")
    try:
        return int(raw) if raw.strip() else default
    except ValueError:
        logging.warning(f"Ignoring non-integer {name}={raw!r}; using {default}")
        return default


# Output locations
OUTPUT_DIR = os.getenv("DEBIAS_OUTPUT_DIR", "runs")

# Worker pools
WORKERS = _int_env("DEBIAS_WORKERS", os.cpu_count() or 1)
PROBE_WORKERS = _int_env("DEBIAS_PROBE_WORKERS", 1)

LOG_LEVEL = os.getenv("DEBIAS_LOG_LEVEL", "INFO").upper()

# Statistics and monitoring defaults
BOOTSTRAP_ITERATIONS = _int_env("DEBIAS_BOOTSTRAP_ITERATIONS", 10000)
SPECTATORS = _int_env("DEBIAS_SPECTATORS", 20)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def load_config():
    """Load and return the environment settings as a dictionary"""
    return {
        "output_dir": OUTPUT_DIR,
        "workers": WORKERS,
        "probe_workers": PROBE_WORKERS,
        "log_level": LOG_LEVEL,
        "bootstrap_iterations": BOOTSTRAP_ITERATIONS,
        "spectators": SPECTATORS,
    }


def validate_config(experiment=None):
    """
    Validate the environment settings and, optionally, an experiment dictionary

    Args:
        experiment: raw experiment dictionary (already merged with defaults)

    Returns:
        {"valid": bool, "issues": [str, ...]}
    """
    issues = []
    if WORKERS < 1:
        issues.append(f"DEBIAS_WORKERS must be >= 1, got {WORKERS}")
    if PROBE_WORKERS < 1:
        issues.append(f"DEBIAS_PROBE_WORKERS must be >= 1, got {PROBE_WORKERS}")
    if BOOTSTRAP_ITERATIONS < 1000:
        issues.append(f"DEBIAS_BOOTSTRAP_ITERATIONS must be >= 1000, got {BOOTSTRAP_ITERATIONS}")
    if SPECTATORS < 0:
        issues.append(f"DEBIAS_SPECTATORS must be >= 0, got {SPECTATORS}")
    if LOG_LEVEL not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        issues.append(f"DEBIAS_LOG_LEVEL must be a logging level name, got {LOG_LEVEL}")

    if experiment is not None:
        from cli.experiment import experiment_issues

        issues.extend(experiment_issues(experiment))

    return {"valid": len(issues) == 0, "issues": issues}


__all__ = [
    "OUTPUT_DIR",
    "WORKERS",
    "PROBE_WORKERS",
    "LOG_LEVEL",
    "BOOTSTRAP_ITERATIONS",
    "SPECTATORS",
    "LOG_FORMAT",
    "load_config",
    "validate_config",
]
