"""
Settings Manager for the MAFFSRN toolkit
Loads data/maffsrn_settings.json and exposes defaults for the CLI
"""

import copy
import json
import logging
import os
from typing import Any, Dict, Optional

logger = logging.getLogger(__name__)

THREADS_ENV = "MAFFSRN_THREADS"
BLAS_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

DEFAULT_SETTINGS: Dict[str, Any] = {
    "app_version": "1.0.0",
    "log_file": "data/maffsrn.log",
    "threads": 1,
    "default_config": "data/configs/maffsrn_x2.json",
    "training": {
        "lr0": 2e-4,
        "batch": 16,
        "patch": 48,
        "epochs": 1000,
        "halve_every": 200,
        "optimizer": "adamp",
        "loss": "l1",
        "checkpoint_every": 50,
        "prefetch": 4,
    },
    "evaluation": {
        # None means "use the scale factor"
        "border": None,
    },
}


def _merge(defaults: Dict[str, Any], loaded: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(defaults)
    for key, value in loaded.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


class SettingsManager:
    """
    Manages application settings (log file, thread cap, training and eval defaults)
    """

    def __init__(self, settings_file: str = "data/maffsrn_settings.json"):
        self.settings_file = settings_file
        self.settings: Dict[str, Any] = copy.deepcopy(DEFAULT_SETTINGS)
        self.load_settings()

    def load_settings(self):
        """Load settings from file, writing defaults when it is missing"""
        try:
            if os.path.exists(self.settings_file):
                with open(self.settings_file, 'r', encoding='utf-8') as f:
                    loaded = json.load(f)
                if not isinstance(loaded, dict):
                    raise ValueError("settings root must be a JSON object")
                self.settings = _merge(DEFAULT_SETTINGS, loaded)
                logger.info(f"Loaded settings from {self.settings_file}")
            else:
                self.save_settings()
                logger.info("Created default settings")
        except Exception as e:
            logger.error(f"Error loading settings: {e}")
            self.settings = copy.deepcopy(DEFAULT_SETTINGS)

    def save_settings(self):
        try:
            directory = os.path.dirname(self.settings_file)
            if directory:
                os.makedirs(directory, exist_ok=True)
            with open(self.settings_file, 'w', encoding='utf-8') as f:
                json.dump(self.settings, f, indent=2, ensure_ascii=False)
            logger.debug(f"Saved settings to {self.settings_file}")
        except Exception as e:
            logger.error(f"Error saving settings: {e}")

    def get(self, key: str, default: Any = None) -> Any:
        """Dotted lookup, e.g. get('training.lr0')"""
        node: Any = self.settings
        for part in key.split('.'):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node

    def set(self, key: str, value: Any, save: bool = True):
        parts = key.split('.')
        node = self.settings
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
        if save:
            self.save_settings()

    def thread_cap(self) -> int:
        """MAFFSRN_THREADS wins over the settings file; always >= 1"""
        raw: Optional[str] = os.environ.get(THREADS_ENV)
        value: Any = raw if raw else self.get('threads', 1)
        try:
            return max(1, int(value))
        except (TypeError, ValueError):
            logger.warning(f"Ignoring invalid thread cap {value!r}")
            return 1

    def training_defaults(self) -> Dict[str, Any]:
        return dict(self.get('training', {}))

    def eval_border(self, scale: int) -> int:
        border = self.get('evaluation.border')
        return scale if border is None else int(border)


def apply_thread_cap(threads: int):
    """Export the cap to BLAS env vars; only effective before numpy is imported"""
    for var in BLAS_THREAD_VARS:
        os.environ[var] = str(threads)


# Global settings manager instance
_settings_manager_instance = None


def get_settings_manager(settings_file: Optional[str] = None) -> SettingsManager:
    """Get global settings manager instance"""
    global _settings_manager_instance
    if _settings_manager_instance is None or (
            settings_file is not None and settings_file != _settings_manager_instance.settings_file):
        _settings_manager_instance = SettingsManager(settings_file or "data/maffsrn_settings.json")
    return _settings_manager_instance
