import functools
import os
from dataclasses import replace
from typing import List, Optional, Sequence, Tuple

import click
from dotenv import load_dotenv
from rich.console import Console

# Load environment variables
load_dotenv()

# Initialize console for rich output
console = Console()

# Import after environment variables are loaded
import seeding
from ccam_probe import ProbeResult, run_probe
from checkpoint import CheckpointManager
from experiment_config import ExperimentConfig, resolve_config
from loss_landscape import LossLandscape, loss_landscape, make_grid
from report_writer import (ReportWriter, display_comparison, display_gradient_checks, display_report,
                           display_sweep, read_dataset)
from size_sweep import WidthResult, size_sweep
from sym_errors import FormatError, SymError, UsageError
from sym_parameter import Concentration, SymParameter, sample_dirichlet_batch
from toy_problem import (EvaluationReport, ToyModel, build_model, compare_reports, evaluate_grid, make_dataset,
                         to_training_data, toy_objective)
from trainer import LossHistory, SymTrainer

TRAIN_FILE = "train.csv"
EVAL_FILE = "eval.csv"
CHECKPOINT_DIR = "checkpoints"


def run_name(mode: str, fixed_weights: Optional[Sequence[float]] = None) -> str:
    """``sym`` or e.g. ``hyper_0.75_0.25``; names checkpoints and history files."""
    if mode == "sym" or fixed_weights is None:
        return mode
    return mode + "".join(f"_{w:g}" for w in fixed_weights)


def parse_floats(text: str, what: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",")]
    except ValueError:
        raise UsageError(f"cannot parse {what} '{text}', expected comma-separated numbers") from None


class SymExperimentRunner:
    """Runs the toy-problem, sampling and CCAM experiments into one output directory."""

    def __init__(self, config: ExperimentConfig):
        """Initialize the runner with a validated configuration."""
        self.config = config
        self.writer = ReportWriter(config.output_dir)
        self.checkpoints = CheckpointManager()

    def _objective(self, bce_scale: Optional[float] = None, clamp_eps: Optional[float] = None):
        model_cfg = self.config.model
        return toy_objective(model_cfg.bce_scale if bce_scale is None else bce_scale,
                             model_cfg.clamp_eps if clamp_eps is None else clamp_eps)

    def _dataset(self, name: str):
        path = self.writer.path(name)
        if not os.path.exists(path):
            raise FormatError(f"dataset {path} not found; run generate-data first")
        return to_training_data(read_dataset(path))

    def generate_data(self, n: Optional[int] = None, sampling: Optional[str] = None) -> Tuple[str, str]:
        """Write the training and evaluation datasets."""
        data_cfg = self.config.data
        sampling = sampling or data_cfg.sampling
        train = make_dataset(n if n is not None else data_cfg.n_train, sampling, self.config.seed, "train")
        evaluation = make_dataset(data_cfg.n_eval, sampling, self.config.seed, "eval")
        train_path = self.writer.write_dataset(train, TRAIN_FILE)
        eval_path = self.writer.write_dataset(evaluation, EVAL_FILE)
        console.print(f"[green]Wrote {len(train)} training and {len(evaluation)} evaluation samples "
                      f"(seed {self.config.seed})[/green]")
        return train_path, eval_path

    def train(self, mode: Optional[str] = None, fixed_weights: Optional[Sequence[float]] = None,
              epochs_limit: Optional[int] = None, resume: Optional[str] = None) -> Tuple[str, LossHistory]:
        """Train (or continue training) one toy model and write its checkpoint and loss history."""
        if epochs_limit is not None and epochs_limit < 0:
            raise UsageError(f"--epochs-limit must be >= 0, got {epochs_limit}")
        if resume:
            checkpoint = self.checkpoints.load(resume)
            model = self.checkpoints.restore_model(checkpoint)
            cfg = self.checkpoints.restore_config(checkpoint)
            state = self.checkpoints.restore_state(checkpoint, model)
            settings = checkpoint.loss_settings
            objective = self._objective(settings["bce_scale"], settings["clamp_eps"])
            trainer = SymTrainer(model, objective, cfg, state)
            console.print(f"[cyan]Resuming {cfg.mode} training at epoch {state.next_epoch}[/cyan]")
        else:
            cfg = self.config.train_config()
            cfg = replace(cfg, mode=mode or cfg.mode,
                          fixed_weights=list(fixed_weights) if fixed_weights is not None else cfg.fixed_weights)
            objective = self._objective()
            cfg.validate(objective.k)
            model = build_model(cfg.mode, cfg.seed, objective.k, self.config.model.width,
                                self.config.model.hidden_layers, cfg.fixed_weights if cfg.mode != "sym" else None)
            trainer = SymTrainer(model, objective, cfg)

        data = self._dataset(TRAIN_FILE)
        history = trainer.train(data, max_epochs=epochs_limit)

        # Save the checkpoint and history under the run name
        name = run_name(cfg.mode, cfg.fixed_weights)
        model_cfg = self.config.model
        settings = checkpoint.loss_settings if resume else {"bce_scale": model_cfg.bce_scale,
                                                            "clamp_eps": model_cfg.clamp_eps}
        snapshot = CheckpointManager.capture(model, trainer, settings["bce_scale"], settings["clamp_eps"])
        path = self.checkpoints.save(snapshot, self.writer.path(os.path.join(CHECKPOINT_DIR, f"{name}.json")))
        self.writer.write_history(history, f"history_{name}.csv", append=bool(resume))

        if history.rows:
            final = history.rows[-1]
            losses = ", ".join(f"{term} {value:.6f}" for term, value in zip(history.term_names, final.term_losses))
            console.print(f"[green]Finished epoch {trainer.next_epoch}/{cfg.total_epochs}: {losses}[/green]")
        if not trainer.finished:
            console.print(f"[yellow]Stopped early; resume with --resume {path}[/yellow]")
        return path, history

    def _load_model(self, path: str) -> Tuple[ToyModel, dict]:
        checkpoint = self.checkpoints.load(path)
        return self.checkpoints.restore_model(checkpoint), checkpoint.loss_settings

    def evaluate(self, checkpoint: str, hyper_checkpoints: Sequence[str] = (),
                 weight_grid: Optional[Sequence[SymParameter]] = None) -> EvaluationReport:
        """Evaluate a checkpoint over the weight grid, optionally against fixed-weight checkpoints."""
        grid = list(weight_grid) if weight_grid is not None else self.config.grid()
        data = self._dataset(EVAL_FILE)

        def report_for(path: str) -> EvaluationReport:
            model, settings = self._load_model(path)
            objective = self._objective(settings["bce_scale"], settings["clamp_eps"])
            return evaluate_grid(model, data, grid, objective,
                                 {"seed": self.config.seed, "dataset": EVAL_FILE, "checkpoint": path})

        report = report_for(checkpoint)
        name = run_name(report.metadata["mode"], report.metadata["fixed_weights"])
        self.writer.write_report(report, f"evaluation_{name}.csv")
        display_report(report, f"Evaluation of {name}")

        # Compare against fixed-weight models if any were given
        if hyper_checkpoints:
            hyper_reports = [report_for(path) for path in hyper_checkpoints]
            for path, hyper in zip(hyper_checkpoints, hyper_reports):
                if hyper.metadata["mode"] != "hyper":
                    raise UsageError(f"{path} is a '{hyper.metadata['mode']}' checkpoint, --hyper expects hyper models")
            comparison = compare_reports(report, hyper_reports)
            self.writer.write_comparison(comparison)
            display_comparison(comparison)
            missing = [row.weights for row in comparison if row.hyper is None]
            if missing:
                console.print(f"[yellow]No fixed-weight model for rows {missing}[/yellow]")
        return report

    def landscape(self, s_values: Optional[Sequence[float]] = None, unchecked: bool = False,
                  checkpoint: Optional[str] = None, pgm: bool = False) -> LossLandscape:
        """Loss surface for one S, with the model's outputs overlaid when a checkpoint is given."""
        land_cfg = self.config.landscape
        values = list(s_values) if s_values is not None else list(land_cfg.s)
        s = SymParameter.unchecked(values) if unchecked else SymParameter.from_values(values)
        model, settings = self._load_model(checkpoint) if checkpoint else (None, None)
        bce_scale = settings["bce_scale"] if settings else self.config.model.bce_scale
        clamp_eps = settings["clamp_eps"] if settings else self.config.model.clamp_eps
        result = loss_landscape(
            s,
            make_grid(land_cfg.x_points, tuple(land_cfg.x_range)),
            make_grid(land_cfg.y_points, tuple(land_cfg.y_range)),
            model,
            bce_scale,
            clamp_eps,
        )
        paths = self.writer.write_landscape(result, pgm=pgm)
        console.print(f"[green]Wrote {', '.join(paths)}[/green]")
        return result

    def sweep_size(self, widths: Optional[Sequence[int]] = None) -> List[WidthResult]:
        widths = list(widths) if widths is not None else list(self.config.sweep.widths)
        results = size_sweep(
            widths,
            self.config.train_config(),
            self._dataset(TRAIN_FILE),
            self._dataset(EVAL_FILE),
            self.config.model.hidden_layers,
            self.config.grid(),
            self.config.model.bce_scale,
            self.config.model.clamp_eps,
        )
        self.writer.write_sweep(results)
        display_sweep(results)
        return results

    def sample_dirichlet(self, n: int, alpha: Sequence[float]):
        """Draws from the seed's Dirichlet stream, written as CSV."""
        if n < 1:
            raise UsageError(f"--n must be >= 1, got {n}")
        try:
            concentration = Concentration(tuple(alpha))
        except SymError as e:
            raise UsageError(f"invalid --alpha: {e}") from None
        draws = sample_dirichlet_batch(concentration, seeding.stream(self.config.seed, "dirichlet"), n)
        path = self.writer.write_dirichlet_draws(draws)
        console.print(f"[green]Wrote {n} draws to {path}[/green]")
        console.print(f"  sample mean {draws.mean(axis=0).round(4).tolist()}, "
                      f"analytic {concentration.mean().round(4).tolist()}")
        return draws

    def ccam_probe(self) -> ProbeResult:
        result = run_probe(self.config.probe, self.config.seed)
        self.writer.write_attention_table(result.sensitivity)
        self.writer.write_gradient_checks(result.gradient_checks)
        display_gradient_checks(result.gradient_checks)
        colour = "green" if result.gating_learned else "yellow"
        console.print(f"[{colour}]CCAM MSE {result.ccam_mse:.6f} vs concat MSE {result.concat_mse:.6f} "
                      f"({result.ratio:.1f}x), gate spread {result.sensitivity.spread:.3f}[/{colour}]")
        return result


def handle_errors(command):
    """Report SymError and IO failures in red and exit with the matching code."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        ctx = click.get_current_context()
        try:
            return command(*args, **kwargs)
        except SymError as e:
            console.print(f"[red]{type(e).__name__}: {e}[/red]")
            ctx.exit(e.exit_code)
        except OSError as e:
            console.print(f"[red]IO error: {e}[/red]")
            ctx.exit(3)

    return wrapper


def _runner(ctx: click.Context, command: str) -> SymExperimentRunner:
    options = ctx.obj or {}
    config = resolve_config(options.get("config_path"), options.get("seed"), options.get("output_dir"))
    runner = SymExperimentRunner(config)
    runner.writer.write_metadata(command, config.seed)
    return runner


@click.group()
@click.option("--config", "config_path", default=None, help="YAML experiment config")
@click.option("--seed", type=int, default=None, help="64-bit seed for all random streams")
@click.option("--out", "output_dir", default=None, help="Output directory")
@click.pass_context
def cli(ctx, config_path, seed, output_dir):
    """Sym-parameter experiments: one model, a continuum of loss weightings."""
    ctx.obj = {"config_path": config_path, "seed": seed, "output_dir": output_dir}


@cli.command("generate-data")
@click.option("--n", "n", type=int, default=None, help="Number of training samples")
@click.option("--sampling", type=click.Choice(["uniform_grid", "uniform_random"]), default=None)
@click.pass_context
@handle_errors
def generate_data(ctx, n, sampling):
    """Create the training and evaluation datasets."""
    _runner(ctx, "generate-data").generate_data(n, sampling)


@cli.command()
@click.option("--mode", type=click.Choice(["sym", "hyper", "s_in"]), default=None)
@click.option("--fixed-weights", default=None, help="Loss weights for hyper/s_in, e.g. 0.5,0.5")
@click.option("--epochs-limit", type=int, default=None, help="Stop after this many epochs")
@click.option("--resume", default=None, help="Checkpoint to continue from")
@click.pass_context
@handle_errors
def train(ctx, mode, fixed_weights, epochs_limit, resume):
    """Train a toy model and write its checkpoint and loss history."""
    weights = parse_floats(fixed_weights, "--fixed-weights") if fixed_weights else None
    _runner(ctx, "train").train(mode, weights, epochs_limit, resume)


@cli.command()
@click.argument("checkpoint")
@click.option("--hyper", "hyper_checkpoints", multiple=True, help="Fixed-weight checkpoint to compare against")
@click.option("--grid", default=None, help="Weight rows, e.g. '1,0;0.5,0.5;0,1'")
@click.pass_context
@handle_errors
def evaluate(ctx, checkpoint, hyper_checkpoints, grid):
    """Evaluate a checkpoint over the weight grid."""
    rows = None
    if grid:
        try:
            rows = [SymParameter.from_values(parse_floats(part, "--grid")) for part in grid.split(";")]
        except SymError as e:
            raise UsageError(f"invalid --grid: {e}") from None
    _runner(ctx, "evaluate").evaluate(checkpoint, hyper_checkpoints, rows)


@cli.command()
@click.option("--s", "s_text", default=None, help="Sym-parameter, e.g. 0.5,0.5")
@click.option("--unchecked", is_flag=True, help="Allow S off the simplex")
@click.option("--checkpoint", default=None, help="Overlay this model's outputs")
@click.option("--pgm", is_flag=True, help="Also write a PGM image")
@click.pass_context
@handle_errors
def landscape(ctx, s_text, unchecked, checkpoint, pgm):
    """Write the weighted-loss landscape for one S."""
    values = parse_floats(s_text, "--s") if s_text else None
    _runner(ctx, "landscape").landscape(values, unchecked, checkpoint, pgm)


@cli.command("sweep-size")
@click.option("--widths", default=None, help="Comma-separated hidden widths")
@click.pass_context
@handle_errors
def sweep_size(ctx, widths):
    """Compare sym and fixed-weight models across hidden widths."""
    values = None
    if widths:
        parsed = parse_floats(widths, "--widths")
        if any(w != int(w) for w in parsed):
            raise UsageError(f"--widths must be integers, got '{widths}'")
        values = [int(w) for w in parsed]
    _runner(ctx, "sweep-size").sweep_size(values)


@cli.command("sample-dirichlet")
@click.option("--n", "n", type=int, default=100000, help="Number of draws")
@click.option("--alpha", default="0.5,0.5", help="Concentration vector")
@click.pass_context
@handle_errors
def sample_dirichlet(ctx, n, alpha):
    """Write Dirichlet draws as CSV."""
    _runner(ctx, "sample-dirichlet").sample_dirichlet(n, parse_floats(alpha, "--alpha"))


@cli.command("ccam-probe")
@click.pass_context
@handle_errors
def ccam_probe(ctx):
    """Train the CCAM and concat regressors on the synthetic gating task."""
    _runner(ctx, "ccam-probe").ccam_probe()


if __name__ == "__main__":
    cli()
