import io
import json
import os
import re

import pytest
from rich.console import Console

from src.model import StochasticModel
from src.model import load as load_model
from src.pair_fair import (HYPERPARAMETERS_FILE, MODEL_FILE, RUN_LOG_FILE, SUMMARY_FILE, format_result, run)
from src.solver import parse_run_log


def _run(argv):
    return run(argv, console=Console(file=io.StringIO(), width=120))


def _config(tmp_path, body, name='run.conf'):
    path = tmp_path / name
    path.write_text(body, encoding='utf-8')
    return str(path)


QUICK_SOLVER = "solver.iterations=100\nsolver.eta_theta=0.1\n"


@pytest.fixture(scope='module')
def trained_run(tmp_path_factory):
    """One small unconstrained run with a cross-group criterion for reporting"""
    root = tmp_path_factory.mktemp('trained')
    config = _config(root, "method=unconstrained\nsimulate.generator=two_group\nsimulate.queries=200\n"
                           "fairness.criterion=cross_group_eo\n" + QUICK_SOLVER)
    out = str(root / 'runs' / 'unconstrained')
    assert _run(['train', '--config', config, '--out', out]) == 0
    return config, out


def test_simulate_is_reproducible(tmp_path):
    first, second = str(tmp_path / 'a.csv'), str(tmp_path / 'b.csv')
    assert _run(['simulate', 'two_group', '--queries', '30', '--seed', '1', '--out', first]) == 0
    assert _run(['simulate', 'two_group', '--queries', '30', '--seed', '1', '--out', second]) == 0
    with open(first, encoding='utf-8') as a, open(second, encoding='utf-8') as b:
        lines = a.read().splitlines()
        assert lines == b.read().splitlines()
    assert len(lines) == 1 + 30 * 11

    with open(first + '.json', encoding='utf-8') as f:
        meta = json.load(f)
    assert meta['generator'] == 'two_group'
    assert meta['examples'] == 330
    assert meta['positives'] == 30
    assert sum(meta['group_counts']) == 330


def test_unknown_generator_is_a_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exit_info:
        _run(['simulate', 'four_group', '--out', str(tmp_path / 'x.csv')])
    assert exit_info.value.code != 0


def test_train_writes_artifacts(trained_run):
    _, out = trained_run
    for name in (MODEL_FILE, RUN_LOG_FILE, HYPERPARAMETERS_FILE, SUMMARY_FILE):
        assert os.path.isfile(os.path.join(out, name))
    with open(os.path.join(out, RUN_LOG_FILE), encoding='utf-8') as f:
        rows = parse_run_log(f.read())
    assert len(rows) == 101
    with open(os.path.join(out, HYPERPARAMETERS_FILE), encoding='utf-8') as f:
        hyper = json.load(f)
    assert hyper['method'] == 'unconstrained'
    assert hyper['eta_theta'] == 0.1


def test_train_rejects_incompatible_criterion(tmp_path):
    config = _config(tmp_path, "method=constrained\nsimulate.generator=two_group\n"
                               "fairness.criterion=continuous_eo\n" + QUICK_SOLVER)
    assert _run(['train', '--config', config, '--out', str(tmp_path / 'out')]) == 2
    assert not os.path.exists(tmp_path / 'out')


def test_train_rejects_unknown_keys(tmp_path):
    config = _config(tmp_path, "simulate.generator=two_group\nsolver.iterationz=5\n")
    assert _run(['train', '--config', config]) == 2


def test_constrained_train_writes_sparse_mixture(tmp_path):
    config = _config(tmp_path, "method=constrained\nsimulate.generator=two_group\nsimulate.queries=100\n"
                               "fairness.criterion=cross_group_eo\nfairness.epsilon=0.01\n" + QUICK_SOLVER)
    out = str(tmp_path / 'constrained')
    assert _run(['train', '--config', config, '--out', out]) in (0, 4)
    artifact = load_model(os.path.join(out, MODEL_FILE))
    assert isinstance(artifact, StochasticModel)
    assert len(artifact.models) <= 3


def test_evaluate_reproduces_final_log_row(trained_run, tmp_path, capsys):
    config, out = trained_run
    report_path = str(tmp_path / 'validation.json')
    code = _run(['evaluate', '--config', config, '--model', os.path.join(out, MODEL_FILE),
                 '--split', 'validation', '--out', report_path])
    assert code == 0
    with open(report_path, encoding='utf-8') as f:
        report = json.load(f)
    with open(os.path.join(out, RUN_LOG_FILE), encoding='utf-8') as f:
        final = parse_run_log(f.read())[-1]
    assert final['validation_objective'] == f"{report['auc']:.6f}"
    assert final['violation'] == f"{report['violations']['cross_group_eo']:.6f}"


def test_evaluate_prints_json_without_out(trained_run, capsys):
    config, out = trained_run
    assert _run(['evaluate', '--config', config, '--model', os.path.join(out, MODEL_FILE)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report['split'] == 'test'
    assert report['aggregation'] == 'per_query'
    assert set(report) >= {'matrix', 'counts', 'row_marginals', 'col_marginals', 'auc', 'mse', 'violations'}


def test_evaluate_rejects_mismatched_model(trained_run, tmp_path):
    config, _ = trained_run
    model_path = tmp_path / 'wide.txt'
    model_path.write_text("pairfair-model v1\nkind linear\ninput_dim 3\nhidden 0\ntheta 4\n1\n2\n3\n4\n",
                          encoding='utf-8')
    assert _run(['evaluate', '--config', config, '--model', str(model_path)]) == 3


def test_score_column_of_labels_is_perfect(tmp_path, capsys):
    data = str(tmp_path / 'sim.csv')
    assert _run(['simulate', 'two_group', '--queries', '60', '--seed', '2', '--out', data]) == 0
    config = _config(tmp_path, f"data.path={data}\ndata.groups=2\n")
    assert _run(['evaluate', '--config', config, '--score-column', 'label']) == 0
    report = json.loads(capsys.readouterr().out)
    assert report['auc'] == 1.0
    cells = [v for row in report['matrix'] for v in row if v is not None]
    assert cells and all(v == 1.0 for v in cells)


def test_report_formats_and_sorts(trained_run, tmp_path, capsys):
    _, out = trained_run
    runs = os.path.dirname(out)
    assert _run(['report', runs]) == 0
    line = capsys.readouterr().out.strip()
    assert re.fullmatch(r"unconstrained\t\d\.\d\d \(\d\.\d\d\)", line)

    for method, auc in (('robust', 0.81), ('constrained', 0.86)):
        run_dir = tmp_path / method
        run_dir.mkdir()
        (run_dir / RUN_LOG_FILE).write_text("iteration\tlambda\ttrain_objective\tvalidation_objective\t"
                                            "violation\tdeltas\nfinal\t-\t-\t0.8\t0.01\t-\n", encoding='utf-8')
        (run_dir / SUMMARY_FILE).write_text(json.dumps({'method': method, 'task': 'ranking', 'auc': auc,
                                                        'violation': 0.02}), encoding='utf-8')
    assert _run(['report', str(tmp_path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines == ["constrained\t0.86 (0.02)", "robust\t0.81 (0.02)"]


def test_report_flags_malformed_runs(tmp_path, capsys):
    broken = tmp_path / 'broken'
    broken.mkdir()
    (broken / RUN_LOG_FILE).write_text("not a run log\n", encoding='utf-8')
    (broken / SUMMARY_FILE).write_text("{}", encoding='utf-8')
    assert _run(['report', str(tmp_path)]) == 3
    assert 'MALFORMED' in capsys.readouterr().out


def test_report_on_empty_directory(tmp_path):
    assert _run(['report', str(tmp_path)]) == 3


def test_format_result():
    assert format_result({'task': 'ranking', 'auc': 0.923, 'violation': 0.281}) == "0.92 (0.28)"
    assert format_result({'task': 'regression', 'mse': 0.0234, 'violation': None}) == "0.023"
