"""Command line front-end: `decoseed run [CONFIG ...] [--preset NAME ...]`"""

import argparse
import asyncio
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from .exc import DecoseedError, OracleMismatchError, ScenarioParseError, ScenarioValidationError
from .harness import RunArtifacts, ScenarioConfig, async_run_scenarios, load_scenario
from .presets import list_presets, load_preset

EXIT_OK = 0
EXIT_IO = 1
EXIT_INVALID = 2
EXIT_ORACLE = 3

_LOGGER = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='decoseed', description='Exactly soluble decoherence scenarios')
    parser.add_argument('--verbose', '-v', action='store_true', help='Enable debug logging')
    commands = parser.add_subparsers(dest='command', required=True)

    run = commands.add_parser('run', help='Run scenario documents or named presets')
    run.add_argument('configs', nargs='*', type=Path, help='Scenario documents')
    run.add_argument('--preset', action='append', default=[], metavar='NAME', help='Run a named preset')
    run.add_argument('--list-presets', action='store_true', help='Print the preset names and exit')
    run.add_argument('--output-dir', type=Path, help='Override output.directory')
    run.add_argument('--oracle', choices=('on', 'off'), help='Override oracle.enabled')
    return parser


def _load(args) -> List[ScenarioConfig]:
    configs = [load_scenario(path) for path in args.configs]
    configs.extend(load_preset(name) for name in args.preset)
    oracle = None if args.oracle is None else args.oracle == 'on'
    if args.output_dir is None:
        return [config.with_overrides(oracle=oracle) for config in configs]
    if len(configs) == 1:
        return [configs[0].with_overrides(str(args.output_dir), oracle)]
    return [config.with_overrides(str(args.output_dir / config.name), oracle) for config in configs]


def _exit_code(result) -> int:
    if isinstance(result, RunArtifacts):
        return EXIT_OK if result.passed else EXIT_INVALID
    if isinstance(result, OracleMismatchError):
        return EXIT_ORACLE
    if isinstance(result, (DecoseedError, ValueError)):
        return EXIT_INVALID
    if isinstance(result, OSError):
        return EXIT_IO
    raise result


def _report(config: ScenarioConfig, result) -> None:
    if isinstance(result, RunArtifacts):
        summary = result.summary
        status = 'passed' if summary.passed else f'FAILED ({", ".join(summary.hard_failures)})'
        deviation = '' if summary.oracle_deviation is None else f', oracle deviation {summary.oracle_deviation:.3e}'
        print(f'{config.name}: {status}{deviation} -> {result.directory}')
    else:
        print(f'{config.name}: {type(result).__name__}: {result}', file=sys.stderr)


def run(args) -> int:
    if args.list_presets:
        print('\n'.join(list_presets()))
        return EXIT_OK
    try:
        configs = _load(args)
    except ScenarioParseError as err:
        print(f'parse error: {err}', file=sys.stderr)
        return EXIT_INVALID
    except ScenarioValidationError as err:
        print('invalid scenario:\n  ' + '\n  '.join(err.errors), file=sys.stderr)
        return EXIT_INVALID
    except KeyError as err:
        print(err.args[0], file=sys.stderr)
        return EXIT_INVALID
    except OSError as err:
        print(f'cannot read scenario: {err}', file=sys.stderr)
        return EXIT_IO
    if not configs:
        print('nothing to run: give a scenario document or --preset', file=sys.stderr)
        return EXIT_INVALID

    results = asyncio.run(async_run_scenarios(configs))
    codes = []
    for config, result in zip(configs, results):
        _report(config, result)
        codes.append(_exit_code(result))
    # exit codes are ordered by severity
    return max(codes)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    )
    return run(args)


if __name__ == '__main__':
    sys.exit(main())
