"""
Utils package for the debiasing experiments
Contains configuration, the run ledger, JSON helpers and report exporters
"""

from .config import (
    load_config,
    validate_config,
    OUTPUT_DIR,
    WORKERS,
    PROBE_WORKERS,
    LOG_LEVEL,
    LOG_FORMAT,
)

from .run_ledger import (
    RunLedger,
    init_db,
    log_event,
    get_cell,
)

from .json_helper import (
    dumps,
    read_json,
    write_json,
    safe_json_loads,
    safe_json_dumps,
)

__all__ = [
    'load_config',
    'validate_config',
    'OUTPUT_DIR',
    'WORKERS',
    'PROBE_WORKERS',
    'LOG_LEVEL',
    'LOG_FORMAT',
    'RunLedger',
    'init_db',
    'log_event',
    'get_cell',
    'dumps',
    'read_json',
    'write_json',
    'safe_json_loads',
    'safe_json_dumps',
]
