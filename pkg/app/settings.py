"""Environment settings read from .env."""
import os

from dotenv import load_dotenv

load_dotenv()

WORKERS = int(os.environ.get("LANDSCAPE_WORKERS") or os.cpu_count() or 1)
OUTPUT_DIR = os.environ.get("LANDSCAPE_OUTPUT_DIR", "runs")
LOG_LEVEL = os.environ.get("LANDSCAPE_LOG_LEVEL", "INFO").upper()
