import csv
import datetime
import os
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
import yaml
from rich.console import Console
from rich.table import Table

from ccam import SensitivityTable
from gradient_check import GradientCheckResult
from loss_landscape import LossLandscape, to_gray_levels
from size_sweep import WidthResult
from sym_errors import FormatError
from toy_problem import ComparisonRow, EvaluationReport, ToySample
from trainer import LossHistory

# Initialize console for rich output
console = Console()

DATASET_HEADER = ["x", "y_r", "y_c"]
REPORT_HEADER = ["w_r", "w_c", "L_total", "L_r", "L_c"]
METADATA_FILE = "run_metadata.yaml"


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


class ReportWriter:
    """Writes every experiment artifact into one output directory."""

    def __init__(self, output_dir: str):
        """Initialize the writer, creating the output directory if needed."""
        self.output_dir = output_dir
        os.makedirs(output_dir, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def _write_rows(self, name: str, header: Optional[Sequence[str]], rows: Iterable[Sequence[Any]],
                    append: bool = False) -> str:
        path = self.path(name)
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        write_header = header is not None and not (append and os.path.exists(path))
        with open(path, "a" if append else "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            if write_header:
                writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
        return path

    def write_dataset(self, samples: Sequence[ToySample], name: str) -> str:
        return self._write_rows(name, DATASET_HEADER, ((s.x, s.y_r, s.y_c) for s in samples))

    def write_history(self, history: LossHistory, name: str, append: bool = False) -> str:
        k = len(history.rows[0].s) if history.rows else len(history.term_names)
        header = ["epoch", "batch"] + [f"s_{i + 1}" for i in range(k)] + ["total_loss"] + list(history.term_names)
        rows = ([row.epoch, row.batch, *row.s, row.total_loss, *row.term_losses] for row in history.rows)
        return self._write_rows(name, header, rows, append=append)

    def write_report(self, report: EvaluationReport, name: str) -> str:
        rows = ([*row.weights, row.total, row.l_r, row.l_c] for row in report.rows)
        return self._write_rows(name, REPORT_HEADER, rows)

    def write_comparison(self, rows: Sequence[ComparisonRow], name: str = "comparison.csv") -> str:
        header = ["w_r", "w_c", "sym_L_total", "sym_L_r", "sym_L_c",
                  "hyper_L_total", "hyper_L_r", "hyper_L_c", "gap"]
        out = []
        for row in rows:
            hyper = (row.hyper.total, row.hyper.l_r, row.hyper.l_c) if row.hyper else (None, None, None)
            out.append([*row.weights, row.sym.total, row.sym.l_r, row.sym.l_c, *hyper, row.gap])
        return self._write_rows(name, header, out)

    def write_landscape(self, landscape: LossLandscape, prefix: str = "landscape", pgm: bool = False) -> List[str]:
        """Matrix CSV (rows = y descending, columns = x ascending), overlay CSV and optional PGM."""
        matrix = landscape.values.T[::-1]
        paths = [self._write_rows(f"{prefix}_values.csv", None, matrix)]
        if landscape.overlay is not None:
            paths.append(self._write_rows(f"{prefix}_overlay.csv", ["x", "f_out"],
                                          zip(landscape.x_grid, landscape.overlay)))
        if pgm:
            paths.append(self.write_pgm(landscape, f"{prefix}.pgm"))
        return paths

    def write_pgm(self, landscape: LossLandscape, name: str) -> str:
        """Plain-text grayscale image with the same orientation as the matrix CSV."""
        levels = to_gray_levels(landscape.values.T[::-1])
        height, width = levels.shape
        path = self.path(name)
        with open(path, "w", newline="") as f:
            f.write(f"P2\n{width} {height}\n255\n")
            for row in levels:
                f.write(" ".join(str(int(v)) for v in row) + "\n")
        return path

    def write_attention_table(self, table: SensitivityTable, name: str = "attention_table.csv") -> str:
        k = table.s_grid[0].k if table.s_grid else 0
        channels = table.maps.shape[1]
        header = [f"s_{i + 1}" for i in range(k)] + [f"M_{c + 1}" for c in range(channels)]
        return self._write_rows(name, header, ([*s.values, *m] for s, m in zip(table.s_grid, table.maps)))

    def write_dirichlet_draws(self, draws: np.ndarray, name: str = "dirichlet_draws.csv") -> str:
        header = [f"s_{i + 1}" for i in range(draws.shape[1])]
        return self._write_rows(name, header, draws)

    def write_gradient_checks(self, results: Sequence[GradientCheckResult], name: str = "gradient_checks.csv") -> str:
        rows = []
        for result in results:
            for key, error in result.max_relative_error.items():
                rows.append([result.name, key, error, result.tolerance, error < result.tolerance])
        return self._write_rows(name, ["check", "input", "max_relative_error", "tolerance", "passed"], rows)

    def write_sweep(self, results: Sequence[WidthResult], name: str = "size_sweep.csv") -> str:
        rows = []
        for result in results:
            for row in result.comparison:
                rows.append([result.width, *row.weights, row.sym.total,
                             row.hyper.total if row.hyper else None, row.gap])
        return self._write_rows(name, ["width", "w_r", "w_c", "sym_L_total", "hyper_L_total", "gap"], rows)

    def write_metadata(self, command: str, seed: int, extra: Optional[Dict[str, Any]] = None) -> str:
        """Sidecar for everything that must not enter the deterministic artifacts."""
        data = {
            "command": command,
            "seed": seed,
            "timestamp": datetime.datetime.now().isoformat(timespec="seconds"),
            "l_c_scaled": True,
        }
        data.update(extra or {})
        path = self.path(METADATA_FILE)
        with open(path, "w") as f:
            yaml.safe_dump(data, f, sort_keys=False)
        return path


def read_dataset(path: str) -> List[ToySample]:
    """Parse a dataset CSV written by :meth:`ReportWriter.write_dataset`."""
    with open(path, "r", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != DATASET_HEADER:
            raise FormatError(f"{path}: expected header {','.join(DATASET_HEADER)}, got {header}")
        samples = []
        for line, row in enumerate(reader, start=2):
            try:
                x, y_r, y_c = (float(v) for v in row)
            except ValueError:
                raise FormatError(f"{path}:{line}: expected three numbers, got {row}") from None
            if not np.all(np.isfinite([x, y_r, y_c])) or y_c not in (0.0, 1.0):
                raise FormatError(f"{path}:{line}: values must be finite with y_c in {{0, 1}}")
            samples.append(ToySample(x, y_r, y_c))
    if len(samples) < 2:
        raise FormatError(f"{path}: a dataset needs at least 2 samples, found {len(samples)}")
    return samples


def read_report(path: str) -> List[List[float]]:
    with open(path, "r", newline="") as f:
        reader = csv.reader(f)
        if next(reader, None) != REPORT_HEADER:
            raise FormatError(f"{path}: expected header {','.join(REPORT_HEADER)}")
        try:
            return [[float(v) for v in row] for row in reader]
        except ValueError as e:
            raise FormatError(f"{path}: {e}") from None


def _fmt(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.4f}"


def display_report(report: EvaluationReport, title: str = "Evaluation") -> None:
    table = Table(title=title)
    table.add_column("(w_r, w_c)", style="cyan")
    table.add_column("L_total", style="green")
    table.add_column("L_r", style="yellow")
    table.add_column("L_c", style="magenta")
    for row in report.rows:
        table.add_row(f"({row.weights[0]:g}, {row.weights[1]:g})", _fmt(row.total), _fmt(row.l_r), _fmt(row.l_c))
    console.print(table)


def display_comparison(rows: Sequence[ComparisonRow]) -> None:
    """Single sym model next to the fixed-weight models, one row per weight setting."""
    table = Table(title="Sym-parameter model vs. fixed-weight models")
    table.add_column("(w_r, w_c)", style="cyan")
    for block in ("Sym", "Hyper"):
        table.add_column(f"{block} L", style="green")
        table.add_column(f"{block} L_r", style="yellow")
        table.add_column(f"{block} L_c", style="magenta")
    table.add_column("Gap", style="blue")
    for row in rows:
        hyper = row.hyper
        table.add_row(
            f"({row.weights[0]:g}, {row.weights[1]:g})",
            _fmt(row.sym.total), _fmt(row.sym.l_r), _fmt(row.sym.l_c),
            _fmt(hyper.total if hyper else None), _fmt(hyper.l_r if hyper else None),
            _fmt(hyper.l_c if hyper else None), _fmt(row.gap),
        )
    console.print(table)


def display_sweep(results: Sequence[WidthResult]) -> None:
    table = Table(title="Network size sweep")
    table.add_column("Width", style="cyan")
    table.add_column("Max gap", style="green")
    for result in results:
        table.add_row(str(result.width), _fmt(result.max_gap))
    console.print(table)


def display_gradient_checks(results: Sequence[GradientCheckResult]) -> None:
    table = Table(title="Gradient checks")
    table.add_column("Check", style="cyan")
    table.add_column("Max relative error")
    table.add_column("Result")
    for result in results:
        verdict = "[green]pass[/green]" if result.passed else "[red]fail[/red]"
        table.add_row(result.name, f"{result.worst:.2e}", verdict)
    console.print(table)
