#!/usr/bin/env python3
"""
Adversarial debiasing experiments - Main Entry Point
Run `python run.py --help` for the subcommands
"""

import logging
import sys
from pathlib import Path

# Add the project root to Python path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

# Configure logging
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)


def main():
    """Main application entry point"""
    try:
        from cli.main import main as cli_main
    except ImportError as e:
        print(f"❌ Import Error: {e}")
        print("Please ensure all dependencies are installed: `pip install -r requirements.txt`")
        return 1
    return cli_main()


if __name__ == "__main__":
    sys.exit(main())
