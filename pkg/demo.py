#!/usr/bin/env python3
"""
Demo script for the sym-parameter experiments
Runs a shortened version of the toy problem so results show up in seconds
"""

from rich.console import Console

from experiment_config import ExperimentConfig
from sym_experiments import SymExperimentRunner

console = Console()


def main():
    """Run a short end-to-end pass: dataset, sym training, weight-grid evaluation, landscape."""
    console.print("[bold cyan]Sym-parameter Demo[/bold cyan]")
    console.print("One network learns every weighting between a regression and a classification loss.\n")

    config = ExperimentConfig(output_dir="demo_run")
    config.data.n_train = 256
    config.train.epoch_schedule = [[20, 0.01], [10, 0.001]]
    config.train.log_every = 10
    config.landscape.x_points = 41
    config.landscape.y_points = 41

    runner = SymExperimentRunner(config)

    console.print("[bold]Generating datasets...[/bold]")
    runner.generate_data()

    console.print("\n[bold]Training the sym model (shortened schedule)...[/bold]")
    checkpoint, _ = runner.train(mode="sym")

    console.print("\n[bold]Evaluating over the weight grid...[/bold]")
    runner.evaluate(checkpoint)

    console.print("\n[bold]Computing the loss landscape at S=(0.5, 0.5)...[/bold]")
    runner.landscape([0.5, 0.5], checkpoint=checkpoint, pgm=True)

    console.print("\n[bold green]Demo completed![/bold green]")
    console.print("To run the full experiments:")
    console.print("1. Run 'python sym_experiments.py generate-data'")
    console.print("2. Run 'python sym_experiments.py train --mode sym'")
    console.print("3. Run 'python sym_experiments.py train --mode hyper --fixed-weights 1,0' for each weight row")
    console.print("4. Run 'python sym_experiments.py evaluate runs/checkpoints/sym.json --hyper runs/checkpoints/hyper_1_0.json'")


if __name__ == "__main__":
    main()
