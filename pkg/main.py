#!/usr/bin/env python3
"""
Main entry point for the Interface Averaging Toolkit CLI
"""

import logging
import sys

from app.cli.app import run_cli
from app.config.settings import settings

# Configure logging
logging.basicConfig(
    level=getattr(logging, settings.LOG_LEVEL),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)


def main() -> None:
    """Main function: dispatch the command line and exit with its status"""
    logger.debug(f"{settings.APP_TITLE} v{settings.APP_VERSION}")

    # Validate settings
    if not settings.validate():
        logger.warning("Some settings are not properly configured")

    sys.exit(run_cli())


if __name__ == "__main__":
    main()
