"""
Base Runner Class
Common error capture and logging for everything the grid executes
"""

import logging
from abc import ABC, abstractmethod

logger = logging.getLogger(__name__)


class Runner(ABC):
    """Base class for all runners"""

    def __init__(self, name):
        self.name = name
        self.logger = logging.getLogger(f"Runner.{name}")

    @abstractmethod
    def run(self, payload):
        """
        Main method to be implemented by subclasses

        Args:
            payload: Input dictionary for the runner

        Returns:
            Result data
        """
        raise NotImplementedError("Implement in subclass")

    def safe_run(self, payload):
        """
        Wrapper for run that turns any exception into a failure result

        Args:
            payload: Input dictionary for the runner

        Returns:
            dict: {"success", "data", "error", "runner"}
        """
        try:
            self.logger.info(f"Running {self.name}...")
            result = self.run(payload)
            self.logger.info(f"{self.name} completed successfully")
            return {"success": True, "data": result, "error": None, "runner": self.name}
        except Exception as e:
            self.logger.error(f"Error in {self.name}: {type(e).__name__}: {e}")
            return {"success": False, "data": None, "error": f"{type(e).__name__}: {e}", "runner": self.name}
