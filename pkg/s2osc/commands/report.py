from s2osc.models.report import RunReport
from s2osc.services.artifact_store import read_json
from s2osc.services.plot_service import emit_plots


def register(subparsers):
    parser = subparsers.add_parser('report', help='work with finished runs')
    actions = parser.add_subparsers(dest='action', required=True)
    plot = actions.add_parser('plot', help='plot a report.json')
    plot.add_argument('report', help='path to a report.json')
    plot.add_argument('--out', required=True, help='directory for the image files')
    plot.add_argument('--embeddings', help='embeddings TSV exported by a run')
    plot.add_argument('--metadata', help='metadata TSV matching --embeddings')
    plot.set_defaults(handler=plot_report)


def plot_report(args):
    report = RunReport.from_dict(read_json(args.report))
    for path in emit_plots(report, args.out, args.embeddings, args.metadata):
        print(path)
    return 0
