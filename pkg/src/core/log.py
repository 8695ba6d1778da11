import sys

from loguru import logger

HUMAN_FORMAT = (
    "<green>{time:HH:mm:ss}</green> | <level>{level: <7}</level> | "
    "<cyan>{name}</cyan> | {message}"
)


def configure_logging(level: str = "INFO", json_logs: bool = False) -> None:
    """
    Route all loguru output to stderr.
    json_logs=True writes one serialized record per line (machine readable).
    """
    logger.remove()
    if json_logs:
        logger.add(sys.stderr, level=level.upper(), serialize=True)
    else:
        logger.add(sys.stderr, level=level.upper(), format=HUMAN_FORMAT)
