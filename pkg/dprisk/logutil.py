"""
Logging helpers shared by the long-running dprisk components.

Components write to a timestamped file under ``tmp/`` and echo to the
console.
"""

import logging
import os
from datetime import datetime

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'


class LoggingMixin:
    """Adds ``_log_info``/``_log_warning``/``_log_error`` to a component.

    Subclasses call ``self._setup_logging(name)`` from ``__init__`` after
    setting ``self.enable_logging``.
    """

    enable_logging = False
    verbose = True
    logger = None
    log_dir = "tmp"

    def _setup_logging(self, name: str):
        """Attach a timestamped file handler for this component."""
        self.logger = logging.getLogger(f"dprisk.{name}")
        if not self.enable_logging:
            return
        if not os.path.exists(self.log_dir):
            try:
                os.makedirs(self.log_dir)
            except Exception as e:
                print(f"Warning: Could not create {self.log_dir} directory: {e}")
                self.enable_logging = False
                return

        log_filename = os.path.join(
            self.log_dir, f"{name}_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log"
        )
        try:
            handler = logging.FileHandler(log_filename)
            handler.setFormatter(logging.Formatter(LOG_FORMAT))
            # one file per component instance
            for old in list(self.logger.handlers):
                if isinstance(old, logging.FileHandler):
                    self.logger.removeHandler(old)
                    old.close()
            self.logger.addHandler(handler)
            self.logger.setLevel(logging.INFO)
            self.logger.info(f"{type(self).__name__} initialized")
        except Exception as e:
            print(f"Warning: Could not set up logging to {log_filename}: {e}")
            self.enable_logging = False

    def _log_info(self, message):
        """Log info message, echoing to the console."""
        if self.logger is not None:
            try:
                self.logger.info(message)
            except Exception:
                pass
        if self.enable_logging and self.verbose:
            print(message)

    def _log_warning(self, message):
        """Log warning message, echoing to the console."""
        if self.logger is not None:
            try:
                self.logger.warning(message)
            except Exception:
                pass
        if self.enable_logging and self.verbose:
            print(f"WARNING: {message}")

    def _log_error(self, message):
        """Log error message, echoing to the console."""
        if self.logger is not None:
            try:
                self.logger.error(message)
            except Exception:
                pass
        if self.enable_logging and self.verbose:
            print(f"ERROR: {message}")
