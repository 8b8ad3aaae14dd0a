"""\
Copyright (c) 2026, blurba developers
All rights reserved.

"""
import logging
from datetime import datetime

import humanize

LOGGER = logging.getLogger(__name__)

ENABLED = False
LEVEL = 0


class MeasureExecution:
    """Context manager which measures wall-clock execution time of a phase"""
    def __init__(self, name):
        """
        :param name: name of the phase being measured
        """
        self.name = name
        self.start_time = None
        self.duration = None

    def __enter__(self):
        global LEVEL  # pylint: disable=global-statement
        self.start_time = datetime.now()
        LEVEL += 1
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        global LEVEL  # pylint: disable=global-statement
        self.duration = datetime.now() - self.start_time
        if ENABLED:
            LOGGER.debug("%s%s: took %.2fs (%s)", "  " * (LEVEL - 1), self.name,
                         self.duration.total_seconds(), humanize.precisedelta(self.duration))

        LEVEL -= 1
        return False  # propagate exceptions (if any)

    @property
    def seconds(self):
        """Measured duration in seconds, or None if the context hasn't exited yet"""
        return None if self.duration is None else self.duration.total_seconds()
