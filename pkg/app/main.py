from typing import List, Optional
import logging
import sys

from app.api.cli import dispatch
from app.core.config import settings

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def configure_logging(level: str = settings.LOG_LEVEL) -> None:
    # Configure root logger to ERROR to suppress most third-party logs
    logging.basicConfig(
        level=logging.ERROR,
        format=LOG_FORMAT,
        handlers=[
            logging.StreamHandler(sys.stdout)
        ]
    )

    # Configure app-specific logging
    app_logger = logging.getLogger('app')
    app_logger.setLevel(level)
    handler = logging.StreamHandler(sys.stdout)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    app_logger.handlers = [handler]  # Replace any existing handlers
    app_logger.propagate = False

    # Explicitly set third-party loggers to ERROR
    logging.getLogger('matplotlib').setLevel(logging.ERROR)
    logging.getLogger('numexpr').setLevel(logging.ERROR)

    app_logger.debug(f"App logging configured at {level} level")


def main(argv: Optional[List[str]] = None) -> int:
    configure_logging()
    return dispatch(argv)


if __name__ == "__main__":
    sys.exit(main())
