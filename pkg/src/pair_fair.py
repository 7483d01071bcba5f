import argparse
import asyncio
import json
import logging
import os
import sys
from dataclasses import replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.progress import BarColumn, Progress, SpinnerColumn, TextColumn, TimeRemainingColumn
from rich.table import Table

from .config import RunConfig, load_config
from .dataset import REGRESSION, SPLITS, TEST, VALIDATION, Dataset, load_csv, split, write_csv
from .errors import ConfigError, DataError, PairFairError
from .fetchers.crime_fetcher import CrimeFetcher
from .metrics import EvaluationReport, evaluate_stochastic
from .model import LINEAR, Model, ModelSpec, StochasticModel
from .model import load as load_model
from .model import save as save_model
from .simgen import GENERATORS
from .solver import format_run_log, parse_run_log
from .trainers.base_trainer import RunResult, TrainingResult
from .trainers.constrained_trainer import ConstrainedTrainer
from .trainers.debiased_trainer import DebiasedTrainer
from .trainers.robust_trainer import RobustTrainer
from .trainers.unconstrained_trainer import UnconstrainedTrainer

logger = logging.getLogger(__name__)

TRAINERS = {
    'unconstrained': UnconstrainedTrainer,
    'debiased': DebiasedTrainer,
    'constrained': ConstrainedTrainer,
    'robust': RobustTrainer,
}

FETCHERS = {
    'crime': CrimeFetcher,
}

EXIT_OK = 0
EXIT_INFEASIBLE = 4
EXIT_INTERRUPTED = 130

MODEL_FILE = 'model.txt'
RUN_LOG_FILE = 'run.log'
HYPERPARAMETERS_FILE = 'hyperparameters.json'
SUMMARY_FILE = 'summary.json'


class PairFair:
    def __init__(self, console: Optional[Console] = None):
        self.console = console or Console()

    def cmd_simulate(self, generator: str, queries: int, seed: int, out: str) -> int:
        """Write a simulated dataset and its sidecar metadata (`<out>.json`)"""
        dataset = GENERATORS[generator](queries, seed)
        try:
            write_csv(dataset, out)
            counts = np.bincount(dataset.groups, minlength=dataset.num_groups)
            self.export_json({
                'generator': generator,
                'seed': seed,
                'queries': queries,
                'examples': len(dataset),
                'positives': int(np.sum(dataset.labels > 0)),
                'group_counts': counts.tolist(),
            }, out + '.json', quiet=True)
        except OSError as e:
            raise DataError(f"cannot write {out}: {e}")
        self.console.print(f"[green]Wrote {len(dataset)} examples ({queries} queries) to {out}[/green]")
        return EXIT_OK

    def make_trainer(self, config: RunConfig, dataset: Dataset):
        trainer_class = TRAINERS[config.method]
        return trainer_class(config.model_spec(dataset.dim), config.solver, fairness=config.fairness,
                             max_pairs=config.max_pairs, data_seed=config.data_seed)

    def train(self, config: RunConfig, dataset: Dataset) -> TrainingResult:
        trainer = self.make_trainer(config, dataset)
        grid = config.solver.grid()

        progress = Progress(
            SpinnerColumn(),
            TextColumn("[progress.description]{task.description}"),
            BarColumn(),
            TextColumn("[progress.percentage]{task.percentage:>3.0f}%"),
            TimeRemainingColumn(),
            console=self.console
        )

        progress.start()
        task = progress.add_task(f"Training {config.method} over {len(grid)} step sizes...", total=len(grid))

        def finished(run: Optional[RunResult]):
            if run is not None:
                progress.update(task, description=f"Finished eta={run.eta_theta:g}")
            progress.advance(task)

        try:
            result = asyncio.run(trainer.fit_async(dataset, finished))
            progress.update(task, description="Training completed")
        finally:
            progress.stop()

        if result.failed:
            failed = ", ".join(f"eta={eta:g}" for eta in result.failed)
            self.console.print(f"[yellow]Skipped step sizes that failed: {failed}[/yellow]")
        return result

    def cmd_train(self, config: RunConfig) -> int:
        dataset = config.load_dataset()
        result = self.train(config, dataset)
        best = result.best

        os.makedirs(config.output_dir, exist_ok=True)
        artifact = best.artifact
        save_model(artifact, os.path.join(config.output_dir, MODEL_FILE))

        criterion = config.fairness.criterion if config.fairness else None
        validation = evaluate_stochastic(best.stochastic, dataset, VALIDATION, config.fairness,
                                         max_pairs=config.max_pairs, seed=config.data_seed)
        with open(os.path.join(config.output_dir, RUN_LOG_FILE), 'w', encoding='utf-8') as f:
            f.write(format_run_log(best.snapshots, headline_objective(validation),
                                   validation.violations.get(criterion) if criterion else None))

        self.export_json({**result.hyperparameters(), 'config': config.to_dict()},
                         os.path.join(config.output_dir, HYPERPARAMETERS_FILE), quiet=True)

        test = evaluate_stochastic(best.stochastic, dataset, TEST, config.fairness,
                                   max_pairs=config.max_pairs, seed=config.data_seed).to_dict()
        summary = {
            'method': config.method,
            'task': dataset.task,
            'criterion': criterion,
            'epsilon': config.fairness.epsilon if config.fairness else None,
            'atoms': len(best.stochastic.models),
            'fallback': best.fallback,
            'auc': test['auc'],
            'mse': test['mse'],
            'violation': test['violations'].get(criterion) if criterion else None,
            'test': test,
        }
        self.export_json(summary, os.path.join(config.output_dir, SUMMARY_FILE), quiet=True)

        self.console.print(Panel(
            f"[bold]{config.method}[/bold]  eta_theta={best.eta_theta:g}  eta_lambda={best.eta_lambda:g}\n"
            f"test {format_result(summary)}  atoms={summary['atoms']}",
            title="Training summary", border_style="bright_black",
        ))
        self.console.print(f"[green]Artifacts written to {config.output_dir}[/green]")
        if best.fallback:
            logger.warning("No feasible mixture on validation; the least-violating snapshot was saved")
            return EXIT_INFEASIBLE
        return EXIT_OK

    def cmd_evaluate(self, config: RunConfig, model_path: Optional[str], split_name: str,
                     score_column: Optional[str] = None, out: Optional[str] = None) -> int:
        if score_column:
            dataset, smodel = score_column_scorer(config, score_column)
        else:
            if not model_path:
                raise ConfigError("evaluate needs --model or --score-column")
            dataset = config.load_dataset()
            artifact = load_model(model_path)
            smodel = artifact if isinstance(artifact, StochasticModel) else StochasticModel.deterministic(artifact)
            if smodel.models[0].spec.input_dim != dataset.dim:
                raise DataError(f"model expects {smodel.models[0].spec.input_dim} features, "
                                f"dataset has {dataset.dim}")

        report = evaluate_stochastic(smodel, dataset, split_name, config.fairness,
                                     max_pairs=config.max_pairs, seed=config.data_seed)
        self.display_report(report)
        if out:
            self.export_json(report.to_dict(), out)
        else:
            sys.stdout.write(json.dumps(report.to_dict(), indent=2) + '\n')
        return EXIT_OK

    def cmd_report(self, run_dir: str, out: Optional[str] = None) -> int:
        """Tab-separated `method<TAB>metric (violation)` rows, sorted by method"""
        runs = find_runs(run_dir)
        if not runs:
            raise DataError(f"{run_dir}: no runs found")
        rows, malformed = [], 0
        for path in runs:
            try:
                summary = read_run(path)
                rows.append((summary['method'], format_result(summary)))
            except (DataError, OSError, KeyError, ValueError) as e:
                rows.append((os.path.basename(os.path.normpath(path)), f"MALFORMED ({e})"))
                malformed += 1
        rows.sort(key=lambda row: row[0])
        text = ''.join(f"{method}\t{value}\n" for method, value in rows)
        if out:
            with open(out, 'w', encoding='utf-8') as f:
                f.write(text)
        sys.stdout.write(text)
        if malformed:
            raise DataError(f"{malformed} malformed run(s) in {run_dir}")
        return EXIT_OK

    def cmd_fetch(self, name: str, out_dir: str) -> int:
        paths = asyncio.run(FETCHERS[name]().fetch(out_dir))
        for path in paths:
            self.console.print(f"[green]Wrote {path}[/green]")
        return EXIT_OK

    def display_report(self, report: EvaluationReport):
        """Pairwise accuracy matrix with row marginals as last column and column marginals as last row"""
        data = report.to_dict()
        K = len(data['matrix'])
        title = f"Pairwise accuracies ({report.split or 'all'}, {report.aggregation})"
        if K:
            table = Table(title=title, show_lines=False)
            table.add_column("better \\ worse", style="bold")
            for j in range(K):
                table.add_column(f"G{j}", justify="right")
            table.add_column("row", justify="right", style="cyan")
            for i in range(K):
                table.add_row(f"G{i}", *[fmt_cell(v) for v in data['matrix'][i]], fmt_cell(data['row_marginals'][i]))
            table.add_row("col", *[fmt_cell(v) for v in data['col_marginals']], "", style="cyan")
            self.console.print(table)
        if 'continuous' in data:
            self.console.print(f"A[>] = {fmt_cell(data['continuous']['greater'])}   "
                               f"A[<] = {fmt_cell(data['continuous']['less'])}")
        headline = f"AUC = {fmt_cell(data['auc'])}"
        if data['mse'] is not None:
            headline += f"   MSE = {data['mse']:.3f}"
        self.console.print(headline)
        for criterion, value in data['violations'].items():
            self.console.print(f"  {criterion}: {fmt_cell(value)}")

    def export_json(self, payload: Dict[str, Any], output_file: str, quiet: bool = False):
        with open(output_file, 'w', encoding='utf-8') as f:
            json.dump(payload, f, indent=2)
        if not quiet:
            self.console.print(f"[green]Report exported to {output_file}[/green]")


def headline_objective(report: EvaluationReport) -> Optional[float]:
    if report.mse is not None:
        return -report.mse
    return report.auc


def fmt_cell(value: Optional[float]) -> str:
    return '-' if value is None else f"{value:.3f}"


def format_result(summary: Dict[str, Any]) -> str:
    """'0.92 (0.28)' for ranking, '0.123 (0.05)' with MSE for regression"""
    if summary.get('task') == REGRESSION:
        metric = f"{summary['mse']:.3f}"
    else:
        metric = f"{summary['auc']:.2f}"
    if summary.get('violation') is not None:
        metric += f" ({summary['violation']:.2f})"
    return metric


def find_runs(run_dir: str) -> List[str]:
    if not os.path.isdir(run_dir):
        raise DataError(f"{run_dir}: not a directory")
    if os.path.exists(os.path.join(run_dir, SUMMARY_FILE)) or os.path.exists(os.path.join(run_dir, RUN_LOG_FILE)):
        return [run_dir]
    return sorted(os.path.join(run_dir, d) for d in os.listdir(run_dir)
                  if os.path.isdir(os.path.join(run_dir, d)))


def read_run(path: str) -> Dict[str, Any]:
    """summary.json of a completed run; the run log must parse and end with its final row"""
    with open(os.path.join(path, RUN_LOG_FILE), encoding='utf-8') as f:
        parse_run_log(f.read())
    with open(os.path.join(path, SUMMARY_FILE), encoding='utf-8') as f:
        summary = json.load(f)
    if summary.get('task') == REGRESSION:
        if summary.get('mse') is None:
            raise DataError("summary has no test MSE")
    elif summary.get('auc') is None:
        raise DataError("summary has no test AUC")
    return summary


def score_column_scorer(config: RunConfig, column: str) -> Tuple[Dataset, StochasticModel]:
    """Dataset whose only feature is `column`, scored by the identity"""
    if not config.data_path:
        raise ConfigError("--score-column needs a dataset file (data.path)")
    schema = replace(config.schema, feature_columns=(column,))
    dataset = split(load_csv(config.data_path, schema), config.data_seed)
    identity = Model(ModelSpec(kind=LINEAR, input_dim=1), np.array([1.0, 0.0]))
    return dataset, StochasticModel.deterministic(identity)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Pairwise fairness for ranking and regression')
    parser.add_argument('--verbose', '-v', action='store_true', help='Debug logging')
    commands = parser.add_subparsers(dest='command', required=True)

    simulate = commands.add_parser('simulate', help='Write a simulated ranking dataset')
    simulate.add_argument('generator', choices=sorted(GENERATORS))
    simulate.add_argument('--queries', type=int, default=5000)
    simulate.add_argument('--seed', type=int, default=0)
    simulate.add_argument('--out', '-o', required=True, help='Output CSV file')

    train = commands.add_parser('train', help='Train a model from a run configuration')
    train.add_argument('--config', '-c', required=True)
    train.add_argument('--seed', type=int)
    train.add_argument('--out', '-o', help='Output directory (overrides output.dir)')

    evaluate = commands.add_parser('evaluate', help='Report pairwise metrics of a saved model')
    evaluate.add_argument('--config', '-c', required=True)
    evaluate.add_argument('--model', '-m')
    evaluate.add_argument('--split', choices=SPLITS, default=TEST)
    evaluate.add_argument('--score-column', help='Evaluate a dataset column as scores (debugging)')
    evaluate.add_argument('--seed', type=int)
    evaluate.add_argument('--out', '-o', help='Output file for the report (JSON format)')

    report = commands.add_parser('report', help='Summarize completed runs')
    report.add_argument('run_dir')
    report.add_argument('--out', '-o', help='Output file for the table (TSV format)')

    fetch = commands.add_parser('fetch', help='Download a public dataset')
    fetch.add_argument('dataset', choices=sorted(FETCHERS))
    fetch.add_argument('--out', '-o', default='data')
    return parser


def setup_logging(console: Console, verbose: bool):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, show_path=verbose)],
        force=True,
    )


def run(argv: Optional[List[str]] = None, console: Optional[Console] = None) -> int:
    args = build_parser().parse_args(argv)
    console = console or Console(stderr=True)
    setup_logging(console, args.verbose)
    app = PairFair(console)

    try:
        if args.command == 'simulate':
            return app.cmd_simulate(args.generator, args.queries, args.seed, args.out)
        if args.command == 'train':
            config = load_config(args.config).with_overrides(seed=args.seed, output_dir=args.out)
            return app.cmd_train(config)
        if args.command == 'evaluate':
            config = load_config(args.config).with_overrides(seed=args.seed)
            return app.cmd_evaluate(config, args.model, args.split, args.score_column, args.out)
        if args.command == 'report':
            return app.cmd_report(args.run_dir, args.out)
        return app.cmd_fetch(args.dataset, args.out)
    except KeyboardInterrupt:
        console.print("\n[red]Cancelled by user[/red]")
        return EXIT_INTERRUPTED
    except PairFairError as e:
        console.print(f"[red]{e.__class__.__name__}: {e}[/red]")
        return e.exit_code
    except Exception as e:
        logger.debug("Unexpected failure", exc_info=True)
        console.print(f"[red]An error occurred: {str(e)}[/red]")
        return PairFairError.exit_code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
