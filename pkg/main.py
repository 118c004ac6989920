import logging
import os
import sys

from dotenv import load_dotenv

from app.routes.cli_routes import run_cli

# Load environment variables
load_dotenv()

# Configure logging
logging.basicConfig(
    level=os.getenv("TUNELAB_LOG_LEVEL", "INFO").upper(),
    format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    stream=sys.stderr,
)
logger = logging.getLogger(__name__)


def main() -> int:
    """Entry point."""
    return run_cli(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
