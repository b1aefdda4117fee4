#!/usr/bin/env python3
"""
Build script for a standalone ``sgp`` command-line executable.

Usage:
    python packaging/build.py [--clean]

    --clean: Remove build/ and dist/ before building
"""

import argparse
import shutil
import subprocess
import sys
from pathlib import Path

PROJECT_ROOT = Path(__file__).parent.parent
EXECUTABLE_NAME = 'sgp'
REQUIRED_MODULES = ['numpy', 'scipy']
# modules PyInstaller does not discover through the src/ sys.path insert
HIDDEN_IMPORTS = ['scipy.spatial', 'scipy.sparse', 'controllers.sgp_controller']


def clean_build_dirs():
    """Remove existing build and dist directories."""
    for dir_name in ('build', 'dist'):
        target = PROJECT_ROOT / dir_name
        if target.exists():
            print(f"Removing {dir_name}/")
            shutil.rmtree(target)
    for spec_file in PROJECT_ROOT.glob('*.spec'):
        print(f"Removing {spec_file.name}")
        spec_file.unlink()


def check_dependencies() -> bool:
    """Check that PyInstaller and the runtime dependencies are importable."""
    try:
        import PyInstaller
        print(f"PyInstaller version: {PyInstaller.__version__}")
    except ImportError:
        print("ERROR: PyInstaller not found. Install with: pip install pyinstaller")
        return False

    missing = []
    for module in REQUIRED_MODULES:
        try:
            __import__(module)
        except ImportError:
            missing.append(module)
    if missing:
        print(f"ERROR: Missing required modules: {', '.join(missing)}")
        print("Install with: pip install -r requirements.txt")
        return False
    return True


def build_command() -> list:
    separator = ';' if sys.platform == 'win32' else ':'
    cmd = [sys.executable, '-m', 'PyInstaller', '--onefile', '--console',
           '--name', EXECUTABLE_NAME,
           '--paths', str(PROJECT_ROOT / 'src'),
           '--add-data', f"{PROJECT_ROOT / 'src'}{separator}src"]
    for module in HIDDEN_IMPORTS:
        cmd += ['--hidden-import', module]
    cmd.append(str(PROJECT_ROOT / 'main.py'))
    return cmd


def build_executable() -> bool:
    """Run PyInstaller from the project root."""
    cmd = build_command()
    print("Building executable:")
    print(' '.join(cmd))
    try:
        subprocess.run(cmd, check=True, capture_output=True, text=True, cwd=PROJECT_ROOT)
        print("Build completed successfully!")
        return True
    except subprocess.CalledProcessError as e:
        print(f"Build failed with error code {e.returncode}")
        print("STDOUT:", e.stdout)
        print("STDERR:", e.stderr)
        return False


def test_executable() -> bool:
    """Run the built executable with --help."""
    suffix = '.exe' if sys.platform == 'win32' else ''
    executable_path = PROJECT_ROOT / 'dist' / f'{EXECUTABLE_NAME}{suffix}'
    if not executable_path.exists():
        print(f"ERROR: Executable not found at {executable_path}")
        return False
    print(f"Executable created at: {executable_path}")
    print(f"File size: {executable_path.stat().st_size / (1024 * 1024):.1f} MB")
    try:
        result = subprocess.run([str(executable_path), '--help'], timeout=60, capture_output=True, text=True)
    except (subprocess.TimeoutExpired, OSError) as e:
        print(f"Executable test failed: {e}")
        return False
    if result.returncode != 0 or 'gen-data' not in result.stdout:
        print(f"Executable test failed with exit code {result.returncode}")
        return False
    print("Executable test completed")
    return True


def main():
    """Main build script entry point."""
    parser = argparse.ArgumentParser(description='Build the sgp executable')
    parser.add_argument('--clean', action='store_true', help='Clean build directories before building')
    args = parser.parse_args()

    if args.clean:
        print("Cleaning build directories...")
        clean_build_dirs()
    if sys.prefix == getattr(sys, 'base_prefix', sys.prefix):
        print("WARNING: Not running in a virtual environment")
    if not check_dependencies():
        sys.exit(1)
    if not build_executable():
        sys.exit(1)
    if not test_executable():
        print("WARNING: Executable test failed, but build completed")


if __name__ == "__main__":
    main()
