#!/usr/bin/env python3
"""
Hambit CLI - Main entry point for the simulation and verification toolkit
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .core.config import Config
from .core.errors import ConfigError, HambitError
from .core.plugin_manager import PluginManager
from .executors.ensemble_executor import EnsembleExecutor

COMMANDS = ("simulate", "converge", "charfn", "project", "list")
EXIT_UNEXPECTED = 1


class HambitCLI:
    """Main CLI application class"""

    def __init__(self):
        self.plugin_manager = PluginManager()

    def list_experiments(self):
        """List all discovered experiments"""
        plugins = self.plugin_manager.get_all_plugins()
        if not plugins:
            print("📭 No experiments found")
            return
        print("📋 Available Experiments:")
        for name, plugin in plugins.items():
            print(f"  • {name}: {plugin.description}")

    def load_config(self, args: argparse.Namespace) -> Config:
        """Read the config file and apply command-line overrides"""
        if not args.config:
            raise ConfigError("config", f"--config is required for '{args.command}'")
        config = Config(Path(args.config))
        config.override(seed=args.seed, n_paths=args.paths, threads=args.threads, out_dir=args.out)
        return config

    def run_experiment(self, args: argparse.Namespace) -> int:
        """Validate, run one experiment and report its outputs; returns the exit code"""
        plugin = self.plugin_manager.get_plugin(args.command)
        if plugin is None:
            print(f"❌ Experiment '{args.command}' not found")
            return EXIT_UNEXPECTED

        try:
            run_config = self.load_config(args).build(args.command, plugin.required_sections)
        except ConfigError as e:
            print(f"❌ Invalid configuration: {e}")
            return e.exit_code

        executor = EnsembleExecutor(run_config.threads)
        print(f"🧮 Running {plugin.name} with {run_config.n_paths} paths (seed {run_config.seed})...")
        result = executor.run(lambda: plugin.run(run_config, executor))

        if not result["success"]:
            print(f"❌ {plugin.name} failed: {result['error']}")
            return result["exit_code"]
        print(f"✅ {plugin.name} completed")
        for name, path in result["outputs"].items():
            print(f"  • {name}: {path}")
        return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hambit",
        description="Hambit - simulate and verify Hilbert-space-valued ambit fields",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  hambit simulate --config hambit/examples/ou_gaussian.json
  hambit converge --config hambit/examples/convergence.json --paths 2000
  hambit charfn --config hambit/examples/compound_poisson.json --seed 7
  hambit project --config hambit/examples/ou_gaussian.json --out results
  hambit list
        """
    )

    parser.add_argument('command', choices=COMMANDS, help='Experiment to run')
    parser.add_argument('--config', '-c', help='Path to the JSON run configuration')
    parser.add_argument('--seed', type=int, help='Override the random seed')
    parser.add_argument('--paths', type=int, help='Override the number of Monte Carlo paths')
    parser.add_argument('--threads', type=int, help='Worker threads (default: available CPUs)')
    parser.add_argument('--out', help='Output directory for CSV reports')
    parser.add_argument('--verbose', '-v', action='store_true', help='Log debug details')
    return parser


def main(argv: Optional[List[str]] = None):
    """Main CLI entry point"""
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("hambit").setLevel(logging.DEBUG if args.verbose else logging.WARNING)

    try:
        cli = HambitCLI()
        if args.command == 'list':
            cli.list_experiments()
            code = 0
        else:
            code = cli.run_experiment(args)
    except KeyboardInterrupt:
        print("\n👋 Goodbye!")
        sys.exit(0)
    except HambitError as e:
        print(f"❌ Error: {e}")
        sys.exit(e.exit_code)
    except Exception as e:
        print(f"❌ Error: {e}")
        sys.exit(EXIT_UNEXPECTED)
    sys.exit(code)


if __name__ == '__main__':
    main()
