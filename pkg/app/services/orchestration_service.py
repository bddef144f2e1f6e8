"""
Experiment Orchestration Service

Runs one experiment configuration end to end (mesh, time loop, error
norms, output files) and drives convergence sweeps over (h, dt) cells.
"""

import logging
import time
from pathlib import Path
from typing import List, Optional

from app.config.experiments import get_experiment_box
from app.models.request import ExperimentConfig, SweepCell
from app.models.response import RunSummary, StepDiagnostics
from app.services.experiment_service import compute_error_norms, get_problem, observed_orders
from app.services.mesh_service import BackgroundMesh, build_kuhn_mesh
from app.services.output_service import (
    CONVERGENCE_COLUMNS,
    append_convergence_row,
    snapshot_name,
    write_band_table,
    write_mass_csv,
    write_matrix_triplets,
    write_mesh_vtk,
    write_rows,
    write_steps_csv,
    write_surface_vtk,
)
from app.services.time_integrator_service import StepRecord, TimeSchemeState, run_transient

logger = logging.getLogger(__name__)


def parse_sweep_file(path) -> List[SweepCell]:
    """
    Read (h, dt) cells, one per line as 'h dt' or 'h,dt'; '#' starts a comment.

    Raises:
        ValueError: If a line does not hold exactly two numbers
    """
    cells = []
    for number, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].replace(",", " ").strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{number}: expected 'h dt', got {line!r}")
        cells.append(SweepCell(h=parts[0], dt=parts[1]))
    if not cells:
        raise ValueError(f"{path}: no sweep cells found")
    return cells


def step_diagnostics(record: StepRecord) -> StepDiagnostics:
    return StepDiagnostics(
        n=record.n,
        t=record.t,
        active_dofs=record.active_dofs,
        band_dofs=record.band_dofs,
        solver_iterations=record.solver_iterations,
        solver_residual=record.solver_residual,
        mass=record.mass,
        err_l2=record.err_l2,
        err_h1=record.err_h1,
    )


class ExperimentOrchestrator:
    """
    Coordinates single runs and sweeps.

    Background meshes are cached per (experiment box, h) and shared by
    sweep cells with the same h.
    """

    def __init__(self):
        self._meshes = {}

    def get_mesh(self, experiment_id: int, h: float) -> BackgroundMesh:
        box = get_experiment_box(experiment_id)
        key = (box, h)
        if key not in self._meshes:
            mesh = build_kuhn_mesh(box, h)
            logger.info(f"📐 Shape regularity kappa={mesh.shape_regularity():.4f}")
            self._meshes[key] = mesh
        return self._meshes[key]

    def _snapshot_observer(self, config: ExperimentConfig, out: Path):
        if config.snapshot_every <= 0:
            return None

        def observer(state: TimeSchemeState) -> None:
            if state.n % config.snapshot_every == 0 or state.n == config.n_steps:
                write_surface_vtk(out / snapshot_name(state.n), state.surface, state.mesh, state.nodal)

        return observer

    def run(self, config: ExperimentConfig, out: Optional[Path] = None, **solver_options) -> RunSummary:
        """
        Run one experiment and write steps.csv, mass.csv and optional dumps.

        Args:
            config (ExperimentConfig): validated run configuration
            out (Path, optional): output directory (config.output_dir by default)
            **solver_options: forwarded to the GMRES solver

        Returns:
            RunSummary: one convergence-table row

        Raises:
            StepError: If a time step fails
        """
        out = Path(out or config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        logger.info(
            f"🎯 Experiment {config.experiment_id} | scheme={config.scheme.value} | h={config.h:g} | "
            f"dt={config.dt:g} | T={config.T_final:g} | nu={config.nu:g}"
        )
        started = time.perf_counter()
        mesh = self.get_mesh(config.experiment_id, config.h)
        if config.dump_mesh:
            write_mesh_vtk(out / "mesh.vtk", mesh)

        state = run_transient(
            get_problem(config.experiment_id),
            mesh,
            config.dt,
            config.n_steps,
            nu=config.nu,
            scheme=config.scheme,
            observer=self._snapshot_observer(config, out),
            **solver_options,
        )

        steps = [step_diagnostics(r) for r in state.records]
        write_steps_csv(out / "steps.csv", steps)
        write_mass_csv(out / "mass.csv", steps)
        if config.dump_matrix:
            if state.system is None:
                logger.warning("⚠️ No time step was taken; there is no matrix to dump")
            else:
                write_matrix_triplets(out / "matrix_final.txt", state.system.matrix)
        if config.dump_band:
            write_band_table(out / "band_final.txt", state.band)

        report = compute_error_norms(state.records, config.dt)
        summary = RunSummary(
            experiment_id=config.experiment_id,
            scheme=config.scheme.value,
            h=config.h,
            dt=config.dt,
            T_final=config.T_final,
            n_steps=config.n_steps,
            err_l2_h1=report.err_l2_h1,
            err_l2_l2=report.err_l2_l2,
            mass_initial=report.mass[0],
            mass_final=report.mass[-1],
            mass_error=abs(report.mass[-1] - report.mass[0]),
            max_iterations=max(r.solver_iterations for r in state.records),
        )
        logger.info(f"✅ Run finished in {time.perf_counter() - started:.1f}s | {summary.table_row()}")
        return summary

    def run_single(self, config: ExperimentConfig, **solver_options) -> RunSummary:
        """Run one configuration and write a one-row convergence.csv."""
        out = Path(config.output_dir)
        summary = self.run(config, out, **solver_options)
        write_rows(out / "convergence.csv", CONVERGENCE_COLUMNS, [summary])
        return summary

    def run_sweep(self, config: ExperimentConfig, cells: List[SweepCell], **solver_options) -> List[RunSummary]:
        """
        Run every (h, dt) cell with the remaining settings of ``config``.

        Each cell writes into its own subdirectory; convergence.csv in the
        output directory gets one row per cell as soon as the cell finishes.
        Observed orders between consecutive cells are logged.
        """
        out = Path(config.output_dir)
        convergence = out / "convergence.csv"
        write_rows(convergence, CONVERGENCE_COLUMNS, [])
        summaries = []
        for cell in cells:
            cell_config = ExperimentConfig(**{**config.dict(), "h": cell.h, "dt": cell.dt})
            cell_out = out / f"h{cell.h:g}_dt{cell.dt:g}"
            summary = self.run(cell_config, cell_out, **solver_options)
            append_convergence_row(convergence, summary)
            summaries.append(summary)

        if len(summaries) > 1 and all(s.err_l2_l2 for s in summaries):
            l2_orders = observed_orders([s.err_l2_l2 for s in summaries])
            h1_orders = observed_orders([s.err_l2_h1 for s in summaries])
            logger.info(
                "📈 Observed orders between consecutive cells | "
                f"L2(L2)={[round(o, 3) for o in l2_orders]} | L2(H1)={[round(o, 3) for o in h1_orders]}"
            )
        return summaries


experiment_orchestrator = ExperimentOrchestrator()
