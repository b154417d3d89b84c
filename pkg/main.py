#!/usr/bin/env python3
"""coordcap command-line entry point."""

import sys
from typing import List, Optional

from config.logger import get_logger
from config.settings import settings
from models.errors import CoordcapError
from models.schemas import ErrorResponse
from routers import spec_io
from routers.commands import build_parser, dispatch

logger = get_logger()

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2


# Global exception handler
def handle_exception(exc: BaseException, command: Optional[str]) -> int:
    """Write an ErrorResponse to stderr and return the process exit code."""

    if isinstance(exc, CoordcapError):
        logger.error("Command failed", command=command, error_code=exc.error_code, error=exc.message)
        response = ErrorResponse(error_code=exc.error_code, error_message=exc.message, details=exc.details or None)
        code = exc.exit_code
    else:
        logger.exception("Unhandled exception", command=command, error=str(exc))
        response = ErrorResponse(error_code="internal_error", error_message=str(exc) or type(exc).__name__,
                                 details={"type": type(exc).__name__})
        code = EXIT_UNEXPECTED
    print(spec_io.to_json(response), file=sys.stderr)
    return code


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK

    get_logger().setLevel(args.log_level or settings.log_level)
    try:
        dispatch(args)
    except Exception as exc:
        return handle_exception(exc, args.command)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
