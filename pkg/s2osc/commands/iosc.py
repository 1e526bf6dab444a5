from s2osc.commands import add_config_flags, config_from_args, print_report
from s2osc.services.experiment_service import ExperimentService
from s2osc.services.plot_service import emit_plots


def register(subparsers):
    parser = subparsers.add_parser('iosc', help='incremental open set classification over a stream')
    actions = parser.add_subparsers(dest='action', required=True)
    run = actions.add_parser('run', help='detect, query the oracle and update f window by window')
    add_config_flags(run, skip=('protocol',))
    run.add_argument('--plots', action='store_true', help='write plots after the run')
    run.set_defaults(handler=run_iosc)


def run_iosc(args):
    cfg = config_from_args(args, 'iosc', protocol='iosc')
    service = ExperimentService(cfg)
    report = service.run_iosc()
    if args.plots:
        emit_plots(report, service.layout.path('plots', ''),
                   service.layout.path('reports', 'embeddings.tsv'),
                   service.layout.path('reports', 'embeddings_meta.tsv'))
    print_report(report)
    return 0
