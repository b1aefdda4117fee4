#!/usr/bin/env python3
"""
Standalone entry point for the SGP registration toolkit.

Works both from a source checkout and when frozen with PyInstaller; in the
frozen case the bundled ``src`` directory lives under ``sys._MEIPASS``.
"""

import sys
from pathlib import Path


def setup_paths() -> Path:
    """
    Put the package sources on ``sys.path``.

    Returns:
        Path of the directory that holds ``src``
    """
    if getattr(sys, 'frozen', False):
        # PyInstaller extracts bundled modules to a temporary directory
        bundle_dir = Path(getattr(sys, '_MEIPASS', Path(sys.executable).parent))
    else:
        bundle_dir = Path(__file__).parent

    src_path = bundle_dir / 'src'
    if not src_path.exists():
        src_path = Path(sys.executable).parent / 'src'
    sys.path.insert(0, str(src_path))
    return bundle_dir


def main():
    """Resolve paths, then hand the arguments to the command-line interface."""
    setup_paths()
    try:
        from main import cli
    except ImportError as e:
        print(f"Import error: {e}", file=sys.stderr)
        print("Please ensure all dependencies are installed (pip install -r requirements.txt).",
              file=sys.stderr)
        sys.exit(1)
    try:
        sys.exit(cli(sys.argv[1:]))
    except KeyboardInterrupt:
        print("Interrupted by user", file=sys.stderr)
        sys.exit(130)


if __name__ == "__main__":
    main()
