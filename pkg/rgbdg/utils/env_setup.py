from dotenv import load_dotenv
import logging
import os
import sys

# Load environment variables from .env file
load_dotenv()

# Configure root logger (if not already configured).
# stdout is reserved for the CLI summary table, so logs go to stderr.
logging.basicConfig(
    level=os.getenv("RGBDG_LOG_LEVEL", "INFO").upper(),
    format='%(asctime)s [%(levelname)s] %(name)s: %(message)s',
    handlers=[
        logging.StreamHandler(sys.stderr),
    ]
)

# Generic import for logger
from .logger import get_logger, set_level
