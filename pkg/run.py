#!/usr/bin/env python3
"""
Command-line entry point for the Backstepping Kernel Toolkit.

Commands: kernels, simulate, verify, spectrum.
Exit codes: 0 ok, 1 verification failure, 2 usage or configuration error.
"""

import argparse
import sys
import asyncio
from pathlib import Path

# Add the project directory to Python path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

COMMANDS = {
    "kernels": "solve all kernel families and export CSV surfaces and gains",
    "simulate": "run the configured scenario and export trajectories",
    "verify": "run the acceptance suite and write the verification report",
    "spectrum": "print the dominant open-loop growth rate",
}

SCENARIOS = [
    "open_loop",
    "state_feedback",
    "output_feedback_anticollocated",
    "output_feedback_collocated",
    "observer_only_anticollocated",
    "observer_only_collocated",
]


def build_parser() -> argparse.ArgumentParser:
    from utils.version import get_toolkit_name, get_toolkit_version

    parser = argparse.ArgumentParser(
        prog="run.py",
        description=f"{get_toolkit_name()}: backstepping kernels, observers and closed-loop "
                    "simulation for coupled reaction-diffusion systems.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {get_toolkit_version()}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in COMMANDS.items():
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="key = value run configuration")
        cmd.add_argument("--out", default="output", help="directory for CSV files and manifest")
        cmd.add_argument("--n", type=int, help="kernel grid intervals (overrides config)")
        cmd.add_argument("--nx", type=int, help="simulation grid intervals (overrides config)")
        cmd.add_argument("--scenario", choices=SCENARIOS, help="scenario (overrides config)")
    return parser


async def run_toolkit(args) -> int:
    from core import BacksteppingToolkit

    async with BacksteppingToolkit() as toolkit:
        return await toolkit.run_command(args.command, args)


def main(argv=None) -> int:
    """Main entry point for the Backstepping Kernel Toolkit."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2

    if sys.version_info < (3, 9):
        print(f"❌ Python 3.9+ is required!\nCurrent version: {sys.version}")
        return 2

    try:
        from dotenv import load_dotenv

        # Optional: logging and cache settings
        env_file = project_root / ".env"
        if env_file.exists():
            load_dotenv(env_file)

        if not Path(args.config).exists():
            print(f"❌ Configuration file not found: {args.config}")
            return 2

        return asyncio.run(run_toolkit(args))

    except ImportError as e:
        print(f"❌ Missing dependencies: {e}\n\n"
              "Please install dependencies:\n"
              "pip install -r requirements.txt")
        return 2
    except KeyboardInterrupt:
        print("\n👋 Stopped by user")
        return 0


if __name__ == "__main__":
    sys.exit(main())
