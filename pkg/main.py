import argparse
import json
import sys
from typing import Any, Dict, List, Optional

import yaml

from config import Config
from processors.run_processor import RunProcessor, load_artifact_config
from run_config import RunConfig, list_presets, load_run_config, preset
from utils.error_formatter import (
    EXIT_FAILURE, EXIT_OK, ConfigError, ErrorFormatter, SimulationError,
)
from utils.logger import LogLevel, get_logger, log_error_with_context, log_system_shutdown, log_system_startup
from utils.validators import validate_environment

logger = get_logger(__name__)

# summary.json keys echoed to the terminal after run/analyze
HEADLINE_KEYS = (
    'N_sc', 'fraction', 'k0', 'delta_k', 'delta_k_spont',
    'g2_bb_0', 'g2_cl_0', 'sigma_x_bb', 'sigma_yz_bb', 'sigma_x_cl', 'sigma_yz_cl',
    'V_A-C', 'V_B-D', 'V_A-B', 'V_C-D', 'N_m', 'occupancy', 'g2_bb_estimate',
)


def parse_overrides(items: Optional[List[str]]) -> Dict[str, Any]:
    """`section.key=value` pairs to a nested override mapping (values parsed as YAML)."""
    overrides: Dict[str, Any] = {}
    for item in items or []:
        name, sep, text = item.partition('=')
        if not sep or not name:
            raise ConfigError(f"Override must look like section.key=value: {item}")
        value = yaml.safe_load(text)
        if '.' in name:
            section, key = name.split('.', 1)
            overrides.setdefault(section, {})[key] = value
        else:
            overrides[name] = value
    return overrides


def resolve_config(args: argparse.Namespace, default_preset: Optional[str] = None) -> RunConfig:
    if getattr(args, 'config', None) and getattr(args, 'preset', None):
        raise ConfigError("Give either --config or --preset, not both")
    if getattr(args, 'config', None):
        run_config = load_run_config(args.config)
    elif getattr(args, 'preset', None) or default_preset:
        run_config = preset(args.preset or default_preset)
    else:
        raise ConfigError("A run config is required: --config PATH or --preset NAME")

    overrides = parse_overrides(getattr(args, 'set', None))
    if overrides:
        run_config = run_config.with_overrides(overrides)
        logger.info(f"Applied overrides, config hash {run_config.short_hash}")
    return run_config


def print_table(title: str, rows: Dict[str, Any]):
    """Aligned `name  value` lines."""
    print(f"\n=== {title} ===")
    width = max((len(k) for k in rows), default=0)
    for key, value in rows.items():
        if isinstance(value, float):
            rendered = f"{value:.6g}"
        elif isinstance(value, (dict, list)):
            continue
        else:
            rendered = str(value)
        print(f"{key:<{width}}  {rendered}")


def cmd_ground(args) -> int:
    run_config = resolve_config(args)
    if not validate_environment(Config.OUTPUT_ROOT):
        return EXIT_FAILURE
    processor = RunProcessor(run_config, args.output, progress=not args.quiet)
    summary = processor.ground()
    print_table("Ground state", summary['ground_state'])
    print(f"\nOutput: {processor.output_dir}")
    return EXIT_OK


def cmd_run(args) -> int:
    run_config = resolve_config(args)
    if not validate_environment(Config.OUTPUT_ROOT):
        return EXIT_FAILURE
    processor = RunProcessor(run_config, args.output, workers=args.workers, progress=not args.quiet)
    summary = processor.run(resume=not args.no_resume)
    print_table("Collision summary", {k: summary[k] for k in HEADLINE_KEYS if k in summary})
    for warning in summary.get('warnings', []):
        print(f"warning: {warning}")
    print(f"\nOutput: {processor.output_dir}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    run_config = load_artifact_config(args.run_dir)
    processor = RunProcessor(run_config, args.run_dir, progress=False)
    summary = processor.analyze()
    if run_config.kind == 'fewmode':
        for system in summary.get('systems', []):
            status = 'passed' if system['passed'] else 'FAILED'
            print(f"M={system['modes']}: {status}, max |z| = {system['max_abs_z']:.2f}")
    else:
        print_table("Collision summary", {k: summary[k] for k in HEADLINE_KEYS if k in summary})
    return EXIT_OK


def cmd_predict(args) -> int:
    run_config = resolve_config(args)
    processor = RunProcessor(run_config, args.output, progress=False)
    summary = processor.predict()
    if args.json:
        print(json.dumps(summary['prediction'], indent=2, sort_keys=True, default=float))
    else:
        print_table("Analytic predictions", summary['prediction'])
    return EXIT_OK


def cmd_validate(args) -> int:
    run_config = resolve_config(args, default_preset='fewmode-validate')
    if not validate_environment(Config.OUTPUT_ROOT):
        return EXIT_FAILURE
    processor = RunProcessor(run_config, args.output, progress=not args.quiet)
    # ValidationFailure propagates to the exit-code mapping after the report is written
    document = processor.validate()
    for system in document['systems']:
        print(f"M={system['modes']}: passed, max |z| = {system['max_abs_z']:.2f}")
    print(f"\nReport: {processor.output_dir}/validation_report.json")
    return EXIT_OK


def cmd_preset(args) -> int:
    if args.list or not args.name:
        presets = list_presets()
        width = max(len(name) for name in presets)
        for name, description in presets.items():
            print(f"{name:<{width}}  {description}")
        return EXIT_OK
    run_config = preset(args.name)
    print(yaml.safe_dump(run_config.to_dict(), sort_keys=False, default_flow_style=None))
    return EXIT_OK


def _add_config_arguments(parser: argparse.ArgumentParser):
    parser.add_argument('--config', type=str, help='YAML run config')
    parser.add_argument('--preset', type=str, help='named scenario preset (see `preset --list`)')
    parser.add_argument('--set', action='append', metavar='SECTION.KEY=VALUE',
                        help='override one config value, repeatable')
    parser.add_argument('--output', type=str, help='run directory (default $OUTPUT_ROOT/<preset>-<hash>)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Positive-P simulator of colliding condensates")
    parser.add_argument('--debug', action='store_true', help='debug logging')
    parser.add_argument('--quiet', action='store_true', help='warnings only, no progress bar')
    commands = parser.add_subparsers(dest='command', required=True)

    ground = commands.add_parser('ground', help='solve the trapped ground state')
    _add_config_arguments(ground)
    ground.set_defaults(func=cmd_ground)

    run = commands.add_parser('run', help='ground state, collision ensemble and analysis')
    _add_config_arguments(run)
    run.add_argument('--workers', type=int, help='trajectory workers (default $COLLISION_WORKERS)')
    run.add_argument('--no-resume', action='store_true', help='ignore existing checkpoints')
    run.set_defaults(func=cmd_run)

    analyze = commands.add_parser('analyze', help='re-analyze a run directory from its checkpoints')
    analyze.add_argument('run_dir', type=str)
    analyze.set_defaults(func=cmd_analyze)

    predict = commands.add_parser('predict', help='analytic estimates for a config')
    _add_config_arguments(predict)
    predict.add_argument('--json', action='store_true', help='print JSON instead of a table')
    predict.set_defaults(func=cmd_predict)

    validate = commands.add_parser('validate', help='positive-P against exact few-mode evolution')
    _add_config_arguments(validate)
    validate.set_defaults(func=cmd_validate)

    presets = commands.add_parser('preset', help='list or show scenario presets')
    presets.add_argument('name', nargs='?')
    presets.add_argument('--list', action='store_true')
    presets.set_defaults(func=cmd_preset)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """主程序入口"""
    args = build_parser().parse_args(argv)

    if args.debug:
        Config.LOG_LEVEL = 'DEBUG'

    try:
        with LogLevel('', 'DEBUG' if args.debug else ('WARNING' if args.quiet else Config.LOG_LEVEL)):
            if args.command in ('ground', 'run', 'validate'):
                log_system_startup()
            return args.func(args)

    except KeyboardInterrupt:
        logger.warning("Interrupted; rerun the same command to resume from the last checkpoint")
        return EXIT_FAILURE

    except SimulationError as e:
        print(e.to_string(), file=sys.stderr)
        return ErrorFormatter.exit_code_for(e)

    except Exception as e:
        log_error_with_context(e, {'phase': 'main', 'command': args.command})
        return EXIT_FAILURE

    finally:
        if args.command in ('ground', 'run', 'validate'):
            log_system_shutdown()


if __name__ == "__main__":
    sys.exit(main())
