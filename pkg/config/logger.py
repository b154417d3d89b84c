import sys

from aws_lambda_powertools import Logger

from config.settings import settings


def get_logger() -> Logger:
    """Structured JSON logger shared by every module; stdout stays reserved for results."""
    return Logger(service=settings.service_name, level=settings.log_level, stream=sys.stderr)
