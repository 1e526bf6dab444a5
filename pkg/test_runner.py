import json
import os

import pytest

from s2osc import create_cli, main
from s2osc.errors import ConfigError, StageError
from s2osc.models.experiment_config import ExperimentConfig, load_config, parse_config
from s2osc.models.report import RunReport
from s2osc.services.artifact_store import read_json
from s2osc.services.experiment_service import ExperimentService
from s2osc.services.plot_service import emit_plots


def test_config_round_trip(tiny_config):
    assert ExperimentConfig.from_toml(tiny_config.to_toml()) == tiny_config
    assert ExperimentConfig.from_toml(ExperimentConfig().to_toml()) == ExperimentConfig()


def test_config_defaults():
    cfg = ExperimentConfig()
    assert (cfg.lambda_, cfg.alpha, cfg.lambda_u, cfg.tau, cfg.temperature) == (1.0, 0.3, 0.2, 0.85, 3.0)
    assert (cfg.K, cfg.memory_size, cfg.theta) == (300, 2000, 0.5)
    assert cfg.k_values == [50, 300, 1000, 2000]
    ssl = cfg.ssl_config()
    assert ssl.train.epochs == 30 and ssl.train.learning_rate == 0.005
    assert cfg.f_train_config().weight_decay == 0.001


def test_config_precedence(tmp_path):
    path = tmp_path / 'exp.toml'
    path.write_text('K = 50\ntau = 0.7\nlambda = 2.5\n')
    cfg = load_config(str(path), {'K': 70, 'alpha': None})
    assert cfg.K == 70
    assert cfg.tau == 0.7
    assert cfg.lambda_ == 2.5
    assert cfg.alpha == 0.3


def test_config_validation():
    with pytest.raises(ConfigError):
        parse_config({'tau': 1.0})
    with pytest.raises(ConfigError):
        parse_config({'unknown_field': 1})
    with pytest.raises(ConfigError):
        parse_config({'k_values': [0, 10]})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_toml('K = [')


def test_missing_dataset_is_a_stage_zero_error(tiny_config, tmp_path):
    cfg = tiny_config.with_overrides(images_path=str(tmp_path / 'nope'))
    with pytest.raises(StageError) as info:
        ExperimentService(cfg).run_osc()
    assert info.value.stage == 'config'
    assert info.value.to_dict()['error'] == 'ConfigError'


def test_run_osc_persists_artifacts(tiny_config):
    report = ExperimentService(tiny_config).run_osc()
    root = tiny_config.output_dir
    for name in ('config.snapshot', 'splits/split.json', 'checkpoints/f.ckpt', 'checkpoints/g.ckpt',
                 'filters/filter.json', 'reports/report.json', 'reports/windows.csv',
                 'reports/train_f.csv', 'reports/train_g.csv', 'reports/embeddings.tsv'):
        assert os.path.exists(os.path.join(root, name)), name

    assert len(report.windows) == 1
    window = report.windows[0]
    assert 0.0 <= window.accuracy <= 1.0
    assert report.averages['accuracy'] == window.accuracy
    assert report.extra['protocol'] == 'osc'
    assert isinstance(report.extra['warnings'], list)
    assert RunReport.from_dict(read_json(os.path.join(root, 'reports', 'report.json'))).to_json() == report.to_json()
    with open(os.path.join(root, 'config.snapshot')) as fh:
        assert ExperimentConfig.from_toml(fh.read()) == tiny_config


def test_run_osc_is_deterministic(tiny_config, tmp_path):
    first = ExperimentService(tiny_config.with_overrides(output_dir=str(tmp_path / 'a'))).run_osc()
    second = ExperimentService(tiny_config.with_overrides(output_dir=str(tmp_path / 'b'))).run_osc()
    with open(tmp_path / 'a' / 'reports' / 'report.json', 'rb') as a, \
            open(tmp_path / 'b' / 'reports' / 'report.json', 'rb') as b:
        assert a.read() == b.read()
    assert first.to_json() == second.to_json()


def test_run_osc_with_several_unknown_classes(tiny_config):
    cfg = tiny_config.with_overrides(n_unknown=2)
    report = ExperimentService(cfg).run_osc()
    window = report.windows[0]
    assert window.extra['variant'] == 'binary_superclass'
    assert len(window.extra['novel_classes']) == 2


def test_baseline_theta_extremes(tiny_config, tmp_path):
    low = ExperimentService(tiny_config.with_overrides(theta=0.0, output_dir=str(tmp_path / 'low')))
    report = low.run_baseline_threshold()
    assert report.windows[0].extra['n_flagged'] == 0
    assert report.windows[0].f_out == 0.0

    high = ExperimentService(tiny_config.with_overrides(theta=1.0, output_dir=str(tmp_path / 'high')))
    report = high.run_baseline_threshold()
    confusion = read_json(str(tmp_path / 'high' / 'reports' / 'predictions.json'))['unknown_confusion']
    (tn, fp), (fn, tp) = confusion
    assert fn == 0 and tn == 0
    assert tp / (tp + fn) == 1.0


def test_run_iosc(tiny_config):
    cfg = tiny_config.with_overrides(protocol='iosc', n_unknown=2)
    report = ExperimentService(cfg).run_iosc()
    assert [w.window_index for w in report.windows] == [1, 2]
    assert sorted(report.windows[0].acc_per_classset) == [0, 1]
    assert sorted(report.windows[1].acc_per_classset) == [0, 1, 2]
    assert report.extra['a_star'] > 0
    assert report.extra['forgetting'] is not None
    root = cfg.output_dir
    assert os.path.exists(os.path.join(root, 'splits', 'schedule.json'))
    assert read_json(os.path.join(root, 'reports', 'oracle.json'))['digest'] == cfg.digest()


def test_run_iosc_without_memory(tiny_config):
    cfg = tiny_config.with_overrides(protocol='iosc', n_unknown=1, use_memory=False)
    report = ExperimentService(cfg).run_iosc()
    assert len(report.windows) == 1
    assert report.extra['use_memory'] is False


def test_iosc_rejects_tiny_memory(tiny_config):
    cfg = tiny_config.with_overrides(protocol='iosc', memory_size=2)
    with pytest.raises(StageError) as info:
        ExperimentService(cfg).run_iosc()
    assert info.value.stage == 'split'


def test_sweep_k_and_plots(tiny_config):
    service = ExperimentService(tiny_config)
    report = service.sweep_k()
    assert [row['K'] for row in report.extra['k_sweep']] == [5, 10]
    assert os.path.exists(os.path.join(tiny_config.output_dir, 'K_10', 'reports', 'report.json'))

    files = emit_plots(report, os.path.join(tiny_config.output_dir, 'plots'))
    assert [os.path.basename(f) for f in files] == ['k_sensitivity.png']


def test_plots_skip_empty_embeddings(tmp_path):
    report = RunReport.from_dict({'windows': [{'window': 1, 'accuracy': 0.5, 'precision': 0.5, 'recall': 0.5,
                                                'weighted_f1': 0.5, 'f_out': None}]})
    empty = tmp_path / 'empty.tsv'
    empty.write_text('')
    files = emit_plots(report, str(tmp_path / 'plots'), str(empty))
    assert [os.path.basename(f) for f in files] == ['window_metrics.png']


def test_cli_osc_run(tiny_config, capsys):
    images_path, labels_path = tiny_config.images_path, tiny_config.labels_path
    status = main(['osc', 'run', '--images-path', images_path, '--labels-path', labels_path,
                   '--K', '10', '--f-epochs', '2', '--g-epochs', '1', '--embed-dim', '8',
                   '--output-dir', tiny_config.output_dir, '--plots'])
    assert status == 0
    summary = json.loads(capsys.readouterr().out)
    assert set(summary['averages']) >= {'accuracy', 'weighted_f1', 'f_out'}
    assert os.path.exists(os.path.join(tiny_config.output_dir, 'plots', 'embedding_pca.png'))


def test_cli_reports_stage_errors(tmp_path, capsys):
    status = main(['osc', 'run', '--images-path', str(tmp_path / 'missing'),
                   '--labels-path', str(tmp_path / 'missing'), '--output-dir', str(tmp_path / 'out')])
    assert status == 1
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error['stage'] == 'config'
    assert error['error'] == 'ConfigError'


def test_cli_rejects_bad_flags():
    with pytest.raises(SystemExit) as info:
        create_cli().parse_args(['osc', 'run', '--arch', 'resnet'])
    assert info.value.code == 2


def test_cli_report_plot(tiny_config, capsys):
    ExperimentService(tiny_config).run_osc()
    report_path = os.path.join(tiny_config.output_dir, 'reports', 'report.json')
    out = os.path.join(tiny_config.output_dir, 'replot')
    assert main(['report', 'plot', report_path, '--out', out]) == 0
    assert os.path.exists(os.path.join(out, 'window_metrics.png'))


def _trained(cfg, seed, name, **overrides):
    """Enough epochs at a higher rate for the blob images to separate"""
    return cfg.with_overrides(seed=seed, K=20, f_epochs=15, f_lr=0.05, g_epochs=15, g_lr=0.05,
                              u_epochs=15, u_lr=0.05, output_dir=os.path.join(cfg.output_dir, name),
                              **overrides)


@pytest.mark.parametrize('seed', [0, 1, 2])
def test_run_osc_detects_unknowns_and_beats_threshold(tiny_config, seed):
    cfg = _trained(tiny_config, seed, 'osc')
    report = ExperimentService(cfg).run_osc()
    predictions = read_json(os.path.join(cfg.output_dir, 'reports', 'predictions.json'))
    (_, fp), (_, tp) = predictions['unknown_confusion']
    assert fp + tp > 0
    assert report.windows[0].f_out > 0

    baseline = ExperimentService(_trained(tiny_config, seed, 'baseline')).run_baseline_threshold()
    assert report.windows[0].accuracy > baseline.windows[0].accuracy


@pytest.mark.parametrize('seed', [0, 1, 2])
def test_replay_lowers_forgetting_over_a_stream(tiny_config, seed):
    with_memory = _trained(tiny_config, seed, 'memory', protocol='iosc', n_unknown=3)
    without = _trained(tiny_config, seed, 'no_memory', protocol='iosc', n_unknown=3, use_memory=False)
    kept = ExperimentService(with_memory).run_iosc()
    dropped = ExperimentService(without).run_iosc()
    assert len(kept.windows) == len(dropped.windows) == 3
    assert kept.extra['forgetting'] < dropped.extra['forgetting']
