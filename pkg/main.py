"""
ssep-lab: exclusion-process fluctuations against their Gaussian limit
Entry point for the command line.
"""

import os
import sys
import traceback

# Ensure the project root is on sys.path
PROJECT_ROOT = os.path.dirname(os.path.abspath(__file__))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

from cli.commands import LOG_FILE, main


def exception_hook(exc_type, exc_value, exc_tb):
    """Global fallback: unexpected errors go to stderr with a pointer to the log."""
    tb_text = "".join(traceback.format_exception(exc_type, exc_value, exc_tb))
    sys.stderr.write(f"Unhandled exception:\n{tb_text}")
    sys.stderr.write(f"See {LOG_FILE} in the output directory for details.\n")
    sys.exit(1)


if __name__ == "__main__":
    sys.excepthook = exception_hook
    sys.exit(main())
