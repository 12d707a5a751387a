#!/usr/bin/env python3
"""
Conformal DeepONet CLI

A command-line tool for generating operator-learning datasets, training
probabilistic and quantile DeepONets, calibrating them with split conformal
prediction and reporting the coverage of the resulting intervals.
"""

import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import click
import pydantic
from rich.console import Console

from models import AblationKind, Fidelity, ModelKind, Problem, RunConfig, Split
from services.conformal import (
    check_record_compatible,
    check_record_trajectories,
    conformalize,
    predictor_for,
    read_record,
    score_kind_for,
    write_record,
)
from services.coverage_metrics import (
    ablation_adaptivity,
    ablation_calibration_size,
    pick_trajectory,
    trajectory_intervals,
)
from services.datagen import ProblemGenerator, assemble_dataset, assemble_trajectories
from services.datasets import read_trajectories, read_triplets, write_trajectories, write_triplets
from services.experiment_runner import ExperimentRunner, evaluate_model
from services.operator_nets import check_dataset_dims, model_kind_name, read_model, write_model
from utils.config_file import build_run_config
from utils.errors import ConformalDeepONetError, IncompatibleArtifactsError
from utils.filename_generator import ArtifactNamer
from utils.formatters import ReportWriter, ablation_table, format_loss_log_csv, print_summary, write_text
from utils.progress import ProgressManager
from utils.validators import parse_n_values, require_file, validate_alpha

logger = logging.getLogger(__name__)

console = Console()

PROBLEMS = [p.value for p in Problem]
EXPERIMENTS = {
    "pendulum": Problem.PENDULUM,
    "diffusion": Problem.DIFFUSION,
    "burgers": Problem.BURGERS,
    "multifidelity": Problem.JUMP_MF,
}

FLAG_NAMES = {
    "n_train": "--n-train",
    "n_calib": "--n-calib",
    "n_traj": "--n-traj",
    "n_eval": "--n-eval",
    "ensemble_size": "--ensemble-size",
    "batch_size": "--batch-size",
    "learning_rate": "--learning-rate",
}


def _setup_logging(verbose: bool) -> None:
    """Configure logging based on verbose flag."""
    if verbose:
        logging.basicConfig(
            level=logging.DEBUG,
            format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        )
    else:
        logging.basicConfig(level=logging.WARNING)


def _handle_pydantic_validation_error(e: pydantic.ValidationError) -> None:
    """Print pydantic validation errors as one readable line per field."""
    for error in e.errors():
        field = str(error["loc"][-1]) if error["loc"] else "unknown"
        msg = error["msg"].removeprefix("Value error, ")
        flag = FLAG_NAMES.get(field, f"--{field.replace('_', '-')}")
        console.print(f"[red]Error: Invalid {flag} value: {msg}[/red]")


class ExitCodeGroup(click.Group):
    """Click group mapping failures to exit codes: 1 usage, 2 data or I/O, 3 numerical."""

    def main(self, args: Optional[Sequence[str]] = None, prog_name: Optional[str] = None, **extra: Any) -> Any:
        standalone_mode = extra.pop("standalone_mode", True)
        try:
            rv = super().main(args=args, prog_name=prog_name, standalone_mode=False, **extra)
        except click.exceptions.Abort:
            console.print("[red]Aborted![/red]")
            code = 1
        except click.ClickException as e:
            e.show()
            code = 1 if isinstance(e, click.UsageError) else e.exit_code
        except ConformalDeepONetError as e:
            logger.debug(f"{e.error_code}: {e.context}")
            console.print(f"[red]Error: {e.message}[/red]")
            code = e.exit_code
        except pydantic.ValidationError as e:
            _handle_pydantic_validation_error(e)
            code = 1
        except OSError as e:
            console.print(f"[red]Error: {e}[/red]")
            code = 2
        else:
            if not standalone_mode:
                return rv
            sys.exit(rv if isinstance(rv, int) else 0)
        if not standalone_mode:
            return code
        sys.exit(code)


@click.group(name="conformal-deeponet", cls=ExitCodeGroup)
@click.version_option(version="1.0.0")
@click.option("--verbose", "-v", is_flag=True, help="Enable verbose logging for debugging")
@click.option("--quiet", "-q", is_flag=True, help="Hide progress bars")
@click.option("--threads", type=click.IntRange(min=1), default=None, help="Maximum worker threads")
@click.option(
    "--config",
    "config_path",
    type=click.Path(dir_okay=False),
    default=None,
    help="Run configuration file (key = value lines)",
)
@click.pass_context
def cli(ctx: click.Context, verbose: bool, quiet: bool, threads: Optional[int], config_path: Optional[str]) -> None:
    """Conformal DeepONet - calibrated uncertainty for neural operators.

    Generate data, train Prob-, Quantile- and ensemble DeepONets, conformalize
    them and measure the coverage of their prediction intervals.
    """
    _setup_logging(verbose)
    ctx.ensure_object(dict)
    ctx.obj.update({"quiet": quiet, "threads": threads, "config": config_path})


def _run_config(ctx: click.Context, problem: Optional[str] = None, **overrides: object) -> RunConfig:
    """Preset, then config file, then command-line flags."""
    overrides.setdefault("threads", ctx.obj.get("threads"))
    return build_run_config(
        problem=Problem(problem) if problem else None,
        config_path=ctx.obj.get("config"),
        overrides=overrides,
    )


def _progress(ctx: click.Context) -> ProgressManager:
    return ProgressManager(disable_live_display=ctx.obj.get("quiet", False), console=Console(stderr=True))


def _loss_log_path(model_path: Path) -> Path:
    return model_path.with_name(f"{model_path.stem}_loss.csv")


@cli.command()
@click.option("--problem", type=click.Choice(PROBLEMS), required=True, help="Synthetic problem")
@click.option(
    "--split", type=click.Choice([s.value for s in Split]), default="train", help="Dataset split (random stream)"
)
@click.option("--count", type=click.IntRange(min=1), default=None, help="Number of triplets (train/calib/pool)")
@click.option("--n-traj", type=click.IntRange(min=1), default=None, help="Test trajectories (test split)")
@click.option("--n-eval", type=click.IntRange(min=1), default=None, help="Points per test trajectory")
@click.option("--seed", type=int, default=None, help="Data seed")
@click.option("--m", "m", type=click.IntRange(min=2), default=None, help="Number of sensors")
@click.option(
    "--fidelity", type=click.Choice([f.value for f in Fidelity]), default="high", help="Fidelity (jump_mf only)"
)
@click.option("--out", "-o", type=click.Path(dir_okay=False), default=None, help="Output file")
@click.pass_context
def datagen(
    ctx: click.Context,
    problem: str,
    split: str,
    count: Optional[int],
    n_traj: Optional[int],
    n_eval: Optional[int],
    seed: Optional[int],
    m: Optional[int],
    fidelity: str,
    out: Optional[str],
) -> None:
    """Generate a triplet file (.opds) or a test trajectory file (.optraj)."""
    cfg = _run_config(ctx, problem, seed_data=seed, m=m, n_traj=n_traj, n_eval=n_eval)
    split_kind, fidelity_kind = Split(split), Fidelity(fidelity)
    generator = ProblemGenerator(cfg.problem, m=cfg.m, fidelity=fidelity_kind)
    path = Path(out) if out else ArtifactNamer().dataset(cfg.problem, split_kind, cfg.seed_data, fidelity_kind)
    common: Dict[str, Any] = {"generator": generator, "max_workers": cfg.threads}

    with _progress(ctx) as pm:
        if split_kind is Split.TEST:
            data = assemble_trajectories(
                cfg.problem, cfg.n_traj, cfg.n_eval, cfg.seed_data, split_kind, progress_manager=pm, **common
            )
            write_trajectories(path, data)
            size = f"{data.n_traj} trajectories x {data.n_eval} points"
        else:
            default = {Split.TRAIN: cfg.n_train, Split.CALIB: cfg.n_calib, Split.POOL: cfg.n_val}[split_kind]
            n = count or default
            data = assemble_dataset(cfg.problem, n, cfg.seed_data, split_kind, progress_manager=pm, **common)
            write_triplets(path, data)
            size = f"{len(data)} triplets"

    console.print(
        f"[green]✅ Wrote {size} ({cfg.problem.value}, {split}, m={data.m}, d={data.d}, seed={cfg.seed_data}) "
        f"to {path}[/green]"
    )


@cli.command()
@click.option(
    "--model", "model_kind", type=click.Choice([k.value for k in ModelKind]), required=True, help="Model kind"
)
@click.option("--data", type=click.Path(), required=True, help="Training triplet file")
@click.option("--problem", type=click.Choice(PROBLEMS), default=None, help="Problem preset for the architecture")
@click.option("--alpha", type=float, default=None, help="Miscoverage level (quantile heads)")
@click.option("--epochs", type=click.IntRange(min=0), default=None, help="Training epochs")
@click.option("--batch-size", type=click.IntRange(min=1), default=None, help="Minibatch size")
@click.option("--learning-rate", type=float, default=None, help="Initial Adam learning rate")
@click.option("--ensemble-size", type=click.IntRange(min=2), default=None, help="Ensemble members")
@click.option("--seed", type=int, default=None, help="Initialization seed")
@click.option("--shuffle-seed", type=int, default=None, help="Minibatch shuffling seed")
@click.option("--low-model", type=click.Path(), default=None, help="Low-fidelity point model (residual training)")
@click.option("--out", "-o", type=click.Path(dir_okay=False), default=None, help="Output model file")
@click.pass_context
def train(
    ctx: click.Context,
    model_kind: str,
    data: str,
    problem: Optional[str],
    alpha: Optional[float],
    epochs: Optional[int],
    batch_size: Optional[int],
    learning_rate: Optional[float],
    ensemble_size: Optional[int],
    seed: Optional[int],
    shuffle_seed: Optional[int],
    low_model: Optional[str],
    out: Optional[str],
) -> None:
    """Train a DeepONet and write the model file plus a CSV loss log."""
    if alpha is not None:
        validate_alpha(alpha)
    cfg = _run_config(
        ctx,
        problem,
        model_kind=model_kind,
        alpha=alpha,
        epochs=epochs,
        batch_size=batch_size,
        learning_rate=learning_rate,
        ensemble_size=ensemble_size,
        seed_init=seed,
        seed_shuffle=shuffle_seed,
    )
    dataset = read_triplets(require_file(data, "data file"))
    if dataset.m != cfg.m:
        raise IncompatibleArtifactsError(
            f"{data} has m={dataset.m} sensors but the configuration expects m={cfg.m}; set m in the config file",
            {"data": dataset.m, "config": cfg.m},
        )
    kind = ModelKind(model_kind)
    path = Path(out) if out else ArtifactNamer().model(cfg.problem, kind, cfg.seed_init)

    with _progress(ctx) as pm:
        runner = ExperimentRunner(cfg, pm)
        if low_model:
            if kind is not ModelKind.PROB:
                raise click.UsageError("--low-model trains a residual Prob-DeepONet; use --model prob")
            model, result = runner.train_residual(read_model(require_file(low_model, "model file")), dataset)
            histories = [result]
        else:
            model, histories = runner.train(kind, dataset)

    write_model(path, model)
    log_path = _loss_log_path(path)
    write_text(log_path, "".join(format_loss_log_csv(h.history) for h in histories))
    final = [h.final_loss for h in histories]
    console.print(f"[green]✅ Model ({model_kind_name(model)}) written to {path}[/green]")
    console.print(f"Final loss: {final[0]:.6g}" if len(final) == 1 else f"Final member losses: {', '.join(f'{v:.6g}' for v in final)}")
    console.print(f"[dim]Loss log: {log_path}[/dim]")


@cli.command()
@click.option("--model", "model_path", type=click.Path(), required=True, help="Model file")
@click.option("--data", type=click.Path(), required=True, help="Calibration triplet file")
@click.option("--alpha", type=float, default=None, help="Miscoverage level (default from config)")
@click.option("--out", "-o", type=click.Path(dir_okay=False), default=None, help="Calibration record file")
@click.option(
    "--n-eval", type=click.IntRange(min=1), default=None, help="Points per test trajectory the record applies to"
)
@click.pass_context
def calibrate(
    ctx: click.Context, model_path: str, data: str, alpha: Optional[float], out: Optional[str], n_eval: Optional[int]
) -> None:
    """Fit the conformal quantile q_hat on a calibration set."""
    if alpha is not None:
        validate_alpha(alpha)
    cfg = _run_config(ctx, alpha=alpha, n_eval=n_eval)
    model = read_model(require_file(model_path, "model file"))
    calib = read_triplets(require_file(data, "data file"))
    check_dataset_dims(model, calib.m, calib.d, data)
    record = conformalize(model, calib, cfg.alpha).model_copy(update={"n_eval": cfg.n_eval})

    model_file = Path(model_path)
    path = Path(out) if out else model_file.with_name(f"{model_file.stem}_a{cfg.alpha:g}.calib.json")
    write_record(path, record)
    console.print(
        f"q_hat = {record.q_hat:.10g}, k = {record.k} (n={record.n}, alpha={record.alpha:g}, "
        f"score={record.score_kind.value})"
    )
    if not record.is_bounded:
        console.print(
            f"[yellow]⚠️  k={record.k} exceeds n={record.n}: q_hat is unbounded and every interval "
            f"is (-inf, +inf). Use a larger calibration set.[/yellow]"
        )
    console.print(f"[green]✅ Calibration record written to {path}[/green]")


@cli.command()
@click.option("--model", "model_path", type=click.Path(), required=True, help="Model file")
@click.option("--record", "record_path", type=click.Path(), required=True, help="Calibration record file")
@click.option("--data", type=click.Path(), required=True, help="Test trajectory file")
@click.option("--out-dir", type=click.Path(file_okay=False), default=None, help="Directory for the report CSVs")
@click.option("--bins", type=click.IntRange(min=1), default=None, help="Coverage histogram bins")
@click.option(
    "--trajectory",
    type=click.IntRange(min=0),
    default=None,
    help="Test trajectory whose intervals are exported (default: drawn from the data seed)",
)
@click.pass_context
def evaluate(
    ctx: click.Context,
    model_path: str,
    record_path: str,
    data: str,
    out_dir: Optional[str],
    bins: Optional[int],
    trajectory: Optional[int],
) -> None:
    """Coverage of conformalized and baseline intervals on test trajectories."""
    cfg = _run_config(ctx, histogram_bins=bins)
    model = read_model(require_file(model_path, "model file"))
    record = read_record(require_file(record_path, "calibration record"))
    check_record_compatible(record, model)
    test = read_trajectories(require_file(data, "data file"))
    check_record_trajectories(record, test.n_eval, data)

    conformal, baseline = evaluate_model(model, record, test)
    target = Path(out_dir) if out_dir else Path(model_path).parent / f"{Path(model_path).stem}_eval"
    writer = ReportWriter(target)
    writer.write_reports([conformal, baseline], cfg.histogram_bins)
    index = pick_trajectory(test.n_traj, cfg.seed_data) if trajectory is None else trajectory
    writer.write_trajectory(trajectory_intervals(model, record, test, index))

    print_summary(console, [conformal, baseline])
    console.print(f"Mean coverage (conformalized): {100.0 * conformal.mean_coverage:.2f}%")
    console.print(f"[green]✅ Reports written to {target}[/green]")


@cli.command()
@click.option(
    "--kind", type=click.Choice([k.value for k in AblationKind]), required=True, help="Ablation study"
)
@click.option("--model", "model_path", type=click.Path(), required=True, help="Model file")
@click.option("--record", "record_path", type=click.Path(), default=None, help="Calibration record (adaptivity)")
@click.option("--data", type=click.Path(), default=None, help="Trajectory file (adaptivity) or pool triplets")
@click.option("--problem", type=click.Choice(PROBLEMS), default=None, help="Problem used to generate the pool")
@click.option("--n", "n_values", default=None, help="Calibration sizes, e.g. 500,1000,5000,10000")
@click.option("--rounds", type=click.IntRange(min=1), default=None, help="Shuffle rounds per calibration size")
@click.option("--n-val", type=click.IntRange(min=1), default=None, help="Validation triplets per round")
@click.option("--alpha", type=float, default=None, help="Miscoverage level")
@click.option("--seed", type=int, default=None, help="Data and shuffling seed")
@click.option("--bins", type=click.IntRange(min=1), default=None, help="Length histogram bins")
@click.option("--out-dir", type=click.Path(file_okay=False), default=".", help="Directory for the ablation CSVs")
@click.pass_context
def ablation(
    ctx: click.Context,
    kind: str,
    model_path: str,
    record_path: Optional[str],
    data: Optional[str],
    problem: Optional[str],
    n_values: Optional[str],
    rounds: Optional[int],
    n_val: Optional[int],
    alpha: Optional[float],
    seed: Optional[int],
    bins: Optional[int],
    out_dir: str,
) -> None:
    """Interval-length adaptivity or coverage versus calibration size."""
    if alpha is not None:
        validate_alpha(alpha)
    cfg = _run_config(
        ctx,
        problem,
        alpha=alpha,
        ablation_n_values=parse_n_values(n_values) if n_values else None,
        ablation_rounds=rounds,
        n_val=n_val,
        seed_data=seed,
        histogram_bins=bins,
    )
    model = read_model(require_file(model_path, "model file"))
    writer = ReportWriter(out_dir)

    if AblationKind(kind) is AblationKind.ADAPTIVITY:
        if record_path is None or data is None:
            raise click.UsageError("--kind adaptivity needs --record and a trajectory file in --data")
        record = read_record(require_file(record_path, "calibration record"))
        check_record_compatible(record, model)
        conformal, _ = evaluate_model(model, record, read_trajectories(require_file(data, "data file")))
        result = ablation_adaptivity(conformal, cfg.histogram_bins)
    else:
        with _progress(ctx) as pm:
            runner = ExperimentRunner(cfg, pm)
            if data:
                pool = read_triplets(require_file(data, "data file"))
                check_dataset_dims(model, pool.m, pool.d, data)
                result = ablation_calibration_size(
                    pool,
                    cfg.ablation_n_values,
                    cfg.ablation_rounds,
                    cfg.alpha,
                    predictor_for(model),
                    score_kind_for(model),
                    n_val=n_val,
                    seed=cfg.seed_data,
                    progress_manager=pm,
                )
            else:
                result = runner.run_calibration_size_ablation(model)

    written = writer.write_ablation(result)
    console.print(ablation_table(result))
    console.print(f"[green]✅ Wrote {len(written)} file(s) to {writer.out_dir}[/green]")


@cli.command()
@click.option("--experiment", type=click.Choice(list(EXPERIMENTS)), required=True, help="Experiment to reproduce")
@click.option(
    "--model",
    "model_kinds",
    type=click.Choice([ModelKind.PROB.value, ModelKind.QUANTILE.value, ModelKind.ENSEMBLE.value]),
    multiple=True,
    help="Model kinds to run (default: prob and quantile)",
)
@click.option("--alpha", type=float, default=None, help="Miscoverage level")
@click.option("--n-train", type=click.IntRange(min=1), default=None, help="Training triplets")
@click.option("--n-calib", type=click.IntRange(min=1), default=None, help="Calibration triplets")
@click.option("--n-traj", type=click.IntRange(min=1), default=None, help="Test trajectories")
@click.option("--epochs", type=click.IntRange(min=0), default=None, help="Training epochs")
@click.option("--seed", type=int, default=None, help="Data seed")
@click.option("--ablations/--no-ablations", default=True, help="Also run both ablation studies")
@click.option("--out-dir", type=click.Path(file_okay=False), default=None, help="Run directory")
@click.pass_context
def reproduce(
    ctx: click.Context,
    experiment: str,
    model_kinds: Sequence[str],
    alpha: Optional[float],
    n_train: Optional[int],
    n_calib: Optional[int],
    n_traj: Optional[int],
    epochs: Optional[int],
    seed: Optional[int],
    ablations: bool,
    out_dir: Optional[str],
) -> None:
    """Run datagen, train, calibrate, evaluate and the ablations for one experiment."""
    if alpha is not None:
        validate_alpha(alpha)
    problem = EXPERIMENTS[experiment]
    cfg = _run_config(
        ctx, problem.value, alpha=alpha, n_train=n_train, n_calib=n_calib, n_traj=n_traj, epochs=epochs, seed_data=seed
    )
    kinds: List[ModelKind] = (
        [ModelKind.PROB] if problem is Problem.JUMP_MF else [ModelKind(k) for k in model_kinds or ("prob", "quantile")]
    )
    root = Path(out_dir) if out_dir else ArtifactNamer().run_dir(problem, experiment, cfg.alpha, cfg.seed_data)
    reports = []

    with _progress(ctx) as pm:
        data = ExperimentRunner(cfg, pm).generate_data()
        for kind in kinds:
            runner = ExperimentRunner(cfg.model_copy(update={"model_kind": kind}), pm)
            result = runner.run(data)
            name = model_kind_name(result.model)
            run_dir = root / name
            write_model(run_dir / f"{name}.model", result.model)
            write_record(run_dir / f"{name}.calib.json", result.record)
            write_text(
                run_dir / f"{name}_loss.csv", "".join(format_loss_log_csv(h.history) for h in result.histories)
            )
            writer = ReportWriter(run_dir)
            writer.write_reports([result.conformal, result.baseline], cfg.histogram_bins)
            if result.trajectory is not None:
                writer.write_trajectory(result.trajectory)
            reports.extend([result.conformal, result.baseline])

            if ablations:
                adaptivity = runner.run_adaptivity_ablation(result.conformal)
                writer.write_ablation(adaptivity)
                console.print(ablation_table(adaptivity))
                if kind is kinds[0]:
                    calib_size = runner.run_calibration_size_ablation(result.model)
                    writer.write_ablation(calib_size)
                    console.print(ablation_table(calib_size))

    ReportWriter(root).write_reports(reports, cfg.histogram_bins)
    print_summary(console, reports, title=f"{experiment} (alpha={cfg.alpha:g}, seed={cfg.seed_data})")
    console.print(f"[green]✅ Run written to {root}[/green]")


def main(args: Optional[Sequence[str]] = None) -> None:
    """Main entry point for programmatic execution."""
    cli(args)


if __name__ == "__main__":
    main()
