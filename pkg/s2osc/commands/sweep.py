from s2osc.commands import add_config_flags, config_from_args, print_report
from s2osc.services.experiment_service import ExperimentService
from s2osc.services.plot_service import emit_plots


def register(subparsers):
    parser = subparsers.add_parser('sweep', help='parameter sweeps')
    actions = parser.add_subparsers(dest='action', required=True)
    k = actions.add_parser('k', help='osc run for every K in --k-values')
    add_config_flags(k, skip=('protocol', 'K'))
    k.set_defaults(handler=sweep_k)


def sweep_k(args):
    service = ExperimentService(config_from_args(args, 'sweep', protocol='osc'))
    report = service.sweep_k()
    emit_plots(report, service.layout.path('plots', ''))
    print_report(report)
    return 0
