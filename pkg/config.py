import logging
import os

from dotenv import load_dotenv

load_dotenv()


class Config:
    """Process-wide settings for the PRPN toolkit"""

    # Storage settings
    STORAGE_DIR = os.environ.get("PRPN_STORAGE_DIR", "prpn_runs")
    DB_PATH = os.environ.get("PRPN_DB_PATH", os.path.join(STORAGE_DIR, "runs.db"))

    # Preset experiment configs shipped with the repo
    CONFIG_DIR = os.environ.get(
        "PRPN_CONFIG_DIR",
        os.path.join(os.path.dirname(os.path.abspath(__file__)), "configs"),
    )

    # Logging
    LOG_LEVEL = os.environ.get("PRPN_LOG_LEVEL", "INFO")
    LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

    # Evaluation parallelism (threads sharing immutable parameters)
    NUM_WORKERS = int(os.environ.get("PRPN_NUM_WORKERS", "4"))

    DEFAULT_SEED = int(os.environ.get("PRPN_SEED", "1111"))

    @classmethod
    def setup_logging(cls, level: str = None):
        """Configure root logging once for CLI and scripts"""
        logging.basicConfig(
            level=getattr(logging, (level or cls.LOG_LEVEL).upper(), logging.INFO),
            format=cls.LOG_FORMAT,
        )

    @classmethod
    def ensure_storage_dir(cls):
        """Create storage directory if it doesn't exist"""
        os.makedirs(cls.STORAGE_DIR, exist_ok=True)

    @classmethod
    def preset_path(cls, name: str) -> str:
        """Resolve a preset name such as 'ptb-char' to its JSON file"""
        filename = name if name.endswith(".json") else f"{name}.json"
        return os.path.join(cls.CONFIG_DIR, filename)
