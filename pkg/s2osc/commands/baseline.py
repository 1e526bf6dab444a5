from s2osc.commands import add_config_flags, config_from_args, print_report
from s2osc.services.experiment_service import ExperimentService


def register(subparsers):
    parser = subparsers.add_parser('baseline', help='max-softmax threshold baseline')
    actions = parser.add_subparsers(dest='action', required=True)
    run = actions.add_parser('run', help='flag unknown when the max softmax of f is below theta')
    add_config_flags(run, skip=('protocol',))
    run.set_defaults(handler=run_baseline)


def run_baseline(args):
    report = ExperimentService(config_from_args(args, 'baseline')).run_baseline_threshold()
    print_report(report)
    return 0
