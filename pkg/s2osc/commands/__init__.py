"""Shared CLI plumbing: ExperimentConfig fields as flags, config loading, report output."""
import argparse
import json
import os
import typing

from s2osc.config import get_config
from s2osc.models.experiment_config import ExperimentConfig, load_config


def _flag_type(annotation):
    """(argparse kwargs) for a field annotation"""
    args = [a for a in typing.get_args(annotation) if a is not type(None)]
    origin = typing.get_origin(annotation)
    if origin is typing.Union and len(args) == 1:
        return _flag_type(args[0])
    if origin is typing.Literal:
        return {'choices': list(typing.get_args(annotation))}
    if origin in (list, typing.List):
        return {'type': args[0], 'nargs': '+'}
    if annotation is bool:
        return {'action': argparse.BooleanOptionalAction}
    return {'type': annotation}


def add_config_flags(parser, skip=()):
    """--config plus one flag per ExperimentConfig field; unset flags stay None"""
    parser.add_argument('--config', help='flat TOML experiment file')
    for name, field in ExperimentConfig.model_fields.items():
        if name in skip:
            continue
        key = field.alias or name
        parser.add_argument(f"--{key.replace('_', '-')}", dest=name, default=None,
                            help=f"default: {field.default!r}", **_flag_type(field.annotation))


def config_from_args(args, run_kind, **forced):
    """flags > file > defaults; an unset output_dir becomes <S2OSC_OUTPUT_ROOT>/<run_kind>-<digest>"""
    overrides = {name: getattr(args, name, None) for name in ExperimentConfig.model_fields}
    overrides.update(forced)
    cfg = load_config(args.config, overrides)
    if cfg.output_dir == ExperimentConfig.model_fields['output_dir'].default:
        cfg = cfg.with_overrides(output_dir=os.path.join(get_config().OUTPUT_ROOT, f"{run_kind}-{cfg.digest()}"))
    return cfg


def print_report(report):
    """Averages (and run-level scalars) as JSON on stdout"""
    summary = {'averages': report.averages}
    for key in ('forgetting', 'a_star', 'purity', 'k_sweep'):
        if key in report.extra:
            summary[key] = report.extra[key]
    print(json.dumps(summary, sort_keys=True, indent=2))
