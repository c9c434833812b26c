"""
Runners package
Grid cell execution with safe_run error capture and message passing back to the orchestrator
"""

from .runner_base import Runner
from .message_protocol import CellMessage, MessageBus
from .cell_runner import CellRunner, run_cell_task
from .grid_runner import GridResult, GridRunner, run_grid

__all__ = [
    "Runner",
    "CellMessage",
    "MessageBus",
    "CellRunner",
    "run_cell_task",
    "GridResult",
    "GridRunner",
    "run_grid",
]
