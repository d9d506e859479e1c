"""Repeat the sym vs. fixed-weight comparison at several hidden widths."""

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

from rich.console import Console

from sym_errors import UsageError
from sym_parameter import SymParameter, default_weight_grid
from toy_problem import (BCE_SCALE, CLAMP_EPS, ComparisonRow, EvaluationReport, compare_reports, evaluate_grid,
                         max_gap, toy_objective, train_toy_model)
from trainer import TrainConfig, TrainingData

# Initialize console for rich output
console = Console()

DEFAULT_WIDTHS = [8, 16, 64]


@dataclass
class WidthResult:
    width: int
    sym_report: EvaluationReport
    hyper_reports: List[EvaluationReport]
    comparison: List[ComparisonRow]

    @property
    def max_gap(self) -> float:
        return max_gap(self.comparison)


def gap_trend_ok(results: Sequence[WidthResult]) -> bool:
    """True when the largest sym-vs-hyper gap never grows with width."""
    ordered = sorted(results, key=lambda result: result.width)
    return all(after.max_gap <= before.max_gap for before, after in zip(ordered[:-1], ordered[1:]))


def size_sweep(widths: Sequence[int], cfg: TrainConfig, train_data: TrainingData, eval_data: TrainingData,
               hidden_layers: int = 3, weight_grid: Optional[Sequence[SymParameter]] = None,
               bce_scale: float = BCE_SCALE, clamp_eps: float = CLAMP_EPS) -> List[WidthResult]:
    """Train one sym model and one hyper model per grid row for every width.

    Every model is seeded exactly as a standalone training run with the same
    config, so the width that matches the main experiment reproduces its report.
    """
    if not widths:
        raise UsageError("size sweep needs at least one width")
    for width in widths:
        if isinstance(width, bool) or not isinstance(width, int) or width < 1:
            raise UsageError(f"widths must be integers >= 1, got {width!r}")
    grid = list(weight_grid) if weight_grid is not None else default_weight_grid()
    objective = toy_objective(bce_scale, clamp_eps)

    results = []
    for width in widths:
        console.print(f"[cyan]Width {width}: training sym model and {len(grid)} hyper models[/cyan]")
        sym_cfg = replace(cfg, mode="sym", fixed_weights=None)
        sym_model, _ = train_toy_model(sym_cfg, train_data, width, hidden_layers, objective)
        sym_report = evaluate_grid(sym_model, eval_data, grid, objective, {"seed": cfg.seed})

        hyper_reports = []
        for s in grid:
            hyper_cfg = replace(cfg, mode="hyper", fixed_weights=list(s.values))
            hyper_model, _ = train_toy_model(hyper_cfg, train_data, width, hidden_layers, objective)
            hyper_reports.append(evaluate_grid(hyper_model, eval_data, grid, objective, {"seed": cfg.seed}))

        result = WidthResult(width, sym_report, hyper_reports, compare_reports(sym_report, hyper_reports))
        console.print(f"[green]Width {width}: largest sym/hyper gap {result.max_gap:.6f}[/green]")
        results.append(result)

    if not gap_trend_ok(results):
        console.print("[yellow]Warning: the sym/hyper loss gap grows with width in this sweep[/yellow]")
    return results
