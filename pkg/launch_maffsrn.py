#!/usr/bin/env python3
"""
MAFFSRN Launcher

Sets up logging and the thread cap, checks dependencies, then runs the CLI.
"""

import sys
import os
import logging
import traceback

# Add current directory to Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.utils.settings_manager import apply_thread_cap, get_settings_manager


def setup_logging(log_file: str):
    """Setup logging configuration; logs go to stderr and the log file, never stdout"""
    debug_mode = '--debug' in sys.argv or '-d' in sys.argv
    log_level = logging.DEBUG if debug_mode else logging.INFO

    handlers = [logging.StreamHandler(sys.stderr)]
    try:
        directory = os.path.dirname(log_file)
        if directory:
            os.makedirs(directory, exist_ok=True)
        handlers.append(logging.FileHandler(log_file))
    except OSError as e:
        print(f"Cannot open log file {log_file}: {e}", file=sys.stderr)

    logging.basicConfig(
        level=log_level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers
    )

    if debug_mode:
        logging.getLogger(__name__).debug("Debug mode enabled - detailed logging active")


def check_dependencies():
    """Check if all required dependencies are installed"""
    required_packages = ['numpy', 'PIL', 'skimage']
    missing_packages = []

    for package in required_packages:
        try:
            __import__(package)
        except ImportError:
            missing_packages.append(package)

    if missing_packages:
        print(f"Missing required packages: {', '.join(missing_packages)}", file=sys.stderr)
        print("Please install them using: pip install -r requirements.txt", file=sys.stderr)
        return False

    return True


def main():
    """Main launcher function"""
    settings = get_settings_manager()
    setup_logging(settings.get('log_file', 'data/maffsrn.log'))
    logger = logging.getLogger(__name__)

    # must happen before numpy is imported
    threads = settings.thread_cap()
    apply_thread_cap(threads)
    logger.debug(f"Thread cap: {threads}")

    try:
        if not check_dependencies():
            return 1

        from main import MaffsrnApp

        app = MaffsrnApp()
        return app.run()

    except ImportError as e:
        logger.error(f"Import error: {e}")
        logger.error("Make sure all required dependencies are installed")
        return 1
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return 130
    except Exception as e:
        logger.error(f"Unexpected error: {e}")
        logger.error(traceback.format_exc())
        return 1


if __name__ == "__main__":
    sys.exit(main())
