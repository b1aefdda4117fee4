"""
Debug utilities for the SGP registration toolkit.
"""

import logging
import os
import sys
from typing import Any, Optional, TextIO

LOG_FORMAT = "%(levelname)s: %(name)s: %(message)s"


class DebugLogger:
    """Debug switch that also configures the package-wide logging handler."""

    def __init__(self, name: str = "sgp"):
        # Check for debug mode via environment variable or command line
        self.debug_enabled = (
            os.getenv('SGP_DEBUG', '').lower() in ('1', 'true', 'yes') or
            '--debug' in sys.argv or
            '-d' in sys.argv
        )
        self._logger = logging.getLogger(name)

    def configure(self, stream: Optional[TextIO] = None, debug: Optional[bool] = None) -> None:
        """
        Install a single stream handler on the root logger.

        Args:
            stream: Destination stream (default: stderr)
            debug: Override the detected debug flag
        """
        if debug is not None:
            self.debug_enabled = debug

        root = logging.getLogger()
        for handler in list(root.handlers):
            if getattr(handler, '_sgp_handler', False):
                root.removeHandler(handler)

        handler = logging.StreamHandler(stream if stream is not None else sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._sgp_handler = True
        root.addHandler(handler)
        root.setLevel(logging.DEBUG if self.debug_enabled else logging.INFO)

    def debug(self, message: str, *args: Any) -> None:
        """Log a debug message (visible only in debug mode)."""
        self._logger.debug(message, *args)

    def info(self, message: str, *args: Any) -> None:
        """Log an info message."""
        self._logger.info(message, *args)


# Global debug logger instance
logger = DebugLogger()


def configure_logging(debug: Optional[bool] = None, stream: Optional[TextIO] = None) -> None:
    """Configure logging for command-line use."""
    logger.configure(stream=stream, debug=debug)
