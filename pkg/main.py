"""
Intersection Safety Twin - Command Line Entry Point
"""

import argparse
import logging
import os
import sys

# Add src to Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.models.pipeline import NETWORK_PROFILES
from src.services.risk_service import ROC_AXES, parse_grid
from src.utils.config import get_config
from src.utils.console import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, ConsoleInterface
from src.utils.exceptions import (
    ConfigurationError, DigitalTwinError, ParseError, ValidationError,
)
from src.utils.report_formatter import REPORT_FORMATS

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Intersection Safety Twin')
    parser.add_argument('--log-level', default=None, help='Override LOG_LEVEL')
    sub = parser.add_subparsers(dest='command', required=True)

    gen = sub.add_parser('generate', help='Generate a seeded random scenario')
    gen.add_argument('--seed', type=int, default=0)
    gen.add_argument('--pedestrians', type=int, default=10)
    gen.add_argument('--vehicles', type=int, default=4)
    gen.add_argument('--duration', type=float, default=60.0, help='Seconds')
    gen.add_argument('--dt', type=float, default=0.1)
    gen.add_argument('--px-per-meter', type=float, default=20.0)
    gen.add_argument('--demo', action='store_true', help='Write the head-on demo scenario instead')
    gen.add_argument('--out', required=True)

    run = sub.add_parser('run', help='Run a scenario through the pipeline')
    run.add_argument('--scenario', required=True)
    run.add_argument('--config', required=True)
    run.add_argument('--out', required=True, help='Output directory')
    run.add_argument('--network', choices=NETWORK_PROFILES, default=None)
    run.add_argument('--format', choices=REPORT_FORMATS, default='csv')
    run.add_argument('--external-broker', action='store_true', help='Publish to DT_MQTT_URL')

    roc = sub.add_parser('roc', help='Sweep warning thresholds over scenarios')
    roc.add_argument('--scenarios', nargs='+', required=True)
    roc.add_argument('--config', required=True)
    roc.add_argument('--axis', choices=ROC_AXES, default='ttc')
    roc.add_argument('--grid', default=None, help="'start:stop:step' or comma list")
    roc.add_argument('--format', choices=REPORT_FORMATS, default='csv')
    roc.add_argument('--out', required=True, help='Output directory')

    bench = sub.add_parser('uwb-bench', help='UWB accuracy and fix-rate benchmark')
    bench.add_argument('--scenario', required=True)
    bench.add_argument('--anchors', default=None, help='Anchor JSON; defaults to the config anchors')
    bench.add_argument('--config', required=True)
    bench.add_argument('--out', required=True, help='Output path')
    bench.add_argument('--format', choices=REPORT_FORMATS, default='csv')

    return parser


def dispatch(args, console: ConsoleInterface):
    if args.command == 'generate':
        if args.demo:
            return console.cmd_generate_demo(args.out)
        return console.cmd_generate(args.seed, args.pedestrians, args.vehicles, args.duration, args.out,
                                    dt=args.dt, px_per_meter=args.px_per_meter)
    if args.command == 'run':
        return console.cmd_run(args.scenario, args.config, args.out, network=args.network,
                               fmt=args.format, external_broker=args.external_broker)
    if args.command == 'roc':
        default_grid = '0.1:1.2:0.1' if args.axis == 'ttc' else '5:100:5'
        grid = parse_grid(args.grid or default_grid)
        return console.cmd_roc(args.scenarios, args.config, args.axis, grid, args.out, fmt=args.format)
    if args.command == 'uwb-bench':
        return console.cmd_uwb_bench(args.scenario, args.anchors, args.config, args.out, fmt=args.format)
    raise ValidationError('command', f'unknown command {args.command!r}')


def main(argv=None) -> int:
    """Main application entry point"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK

    cfg = get_config()
    logging.basicConfig(level=getattr(logging, (args.log_level or cfg.LOG_LEVEL).upper(), logging.INFO),
                        format=cfg.LOG_FORMAT)
    console = ConsoleInterface(cfg=cfg)
    try:
        dispatch(args, console)
    except (ConfigurationError, ValidationError) as e:
        print(f"error: {e.field}: {e.message}", file=sys.stderr)
        return EXIT_USAGE
    except ParseError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as e:
        print(f"error: {e.filename}: file not found", file=sys.stderr)
        return EXIT_USAGE
    except DigitalTwinError as e:
        logger.error(f"Command failed: {e}")
        return EXIT_RUNTIME
    except OSError as e:
        logger.error(f"I/O failure: {e}")
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
