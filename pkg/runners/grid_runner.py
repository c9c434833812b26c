"""
Grid Runner
Executes every (k, n, seed) cell of an experiment in a bounded worker pool,
skipping cells the ledger already holds; the orchestrator is the single
writer of cell records, the ledger and the grid summary
"""

import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from tqdm import tqdm

from cli.experiment import CellSpec, ExperimentConfig
from runners.cell_runner import run_cell_task
from runners.message_protocol import CellMessage, MessageBus
from runners.runner_base import Runner
from utils import config as settings
from utils.json_helper import read_json, write_json
from utils.run_ledger import RunLedger

logger = logging.getLogger(__name__)

OUTPUT_SUBDIRS = ("checkpoints", "probes", "reports", "cells")


@dataclass
class GridResult:
    """One record per completed (k, n, seed) cell, plus failures and skips"""

    output_dir: Path
    records: Dict[str, Dict] = field(default_factory=dict)
    failed: Dict[str, str] = field(default_factory=dict)
    skipped: List[str] = field(default_factory=list)
    trained: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failed

    def to_dict(self):
        return {
            "output_dir": str(self.output_dir),
            "completed": sorted(self.records),
            "trained": sorted(self.trained),
            "skipped": sorted(self.skipped),
            "failed": self.failed,
        }


class GridRunner(Runner):
    """Orchestrates a grid run"""

    def __init__(self, experiment: ExperimentConfig, workers: Optional[int] = None, progress: bool = True):
        super().__init__("grid")
        self.experiment = experiment
        self.workers = workers or settings.WORKERS
        self.progress = progress
        self.output_dir = experiment.output_dir
        for sub in OUTPUT_SUBDIRS:
            (self.output_dir / sub).mkdir(parents=True, exist_ok=True)
        self.ledger = RunLedger(self.output_dir / "reports" / "ledger.db")
        self.bus = MessageBus()
        self.result = GridResult(self.output_dir)
        self.bus.subscribe(self.name, self._receive)

    def record_path(self, cell_id: str) -> Path:
        return self.output_dir / "cells" / f"{cell_id}.json"

    def _payload(self, cell: CellSpec) -> Dict:
        return {
            "experiment": self.experiment.raw,
            "cell": {"k": cell.k, "n": cell.n, "seed": cell.seed},
            "content_hash": self.experiment.content_hash(cell),
        }

    def _receive(self, message: CellMessage):
        cell_id = message.cell_id
        if message.is_error():
            self.result.failed[cell_id] = message.data.get("error", "unknown error")
            self.ledger.mark_failed(cell_id, self.result.failed[cell_id])
            return
        path = write_json(self.record_path(cell_id), message.data)
        self.result.records[cell_id] = message.data
        self.result.trained.append(cell_id)
        self.ledger.mark_completed(cell_id, path)

    def _message_for(self, cell: CellSpec, text: str) -> CellMessage:
        """Decode a worker reply; replies that do not name their cell count as that cell failing"""
        message = CellMessage.from_json(text)
        if message.cell_id != cell.cell_id:
            error = message.data.get("error", "reply without cell id") if isinstance(message.data, dict) else "reply without cell id"
            message = CellMessage("cell", self.name, {"error": error}, "error", {"cell_id": cell.cell_id})
        return message

    def pending_cells(self) -> List[CellSpec]:
        pending = []
        for cell in self.experiment.cells:
            content_hash = self.experiment.content_hash(cell)
            if self.ledger.is_complete(cell.cell_id, content_hash):
                self.result.skipped.append(cell.cell_id)
                self.result.records[cell.cell_id] = read_json(self.record_path(cell.cell_id))
                logger.info(f"Skipping completed cell {cell.cell_id}")
                self.ledger.log_event(cell.cell_id, "skipped", content_hash)
            else:
                pending.append(cell)
        return pending

    def run(self, payload=None) -> GridResult:
        pending = self.pending_cells()
        self.logger.info(
            f"Grid {self.experiment.name}: {len(self.experiment.cells)} cells, "
            f"{len(pending)} to run, {self.workers} workers"
        )
        for cell in pending:
            self.ledger.mark_started(cell.cell_id, self.experiment.content_hash(cell), cell.k, cell.n, cell.seed)

        bar = tqdm(total=len(pending), desc="cells", disable=not self.progress)
        if self.workers == 1 or len(pending) <= 1:
            for cell in pending:
                self.bus.send_message(self._message_for(cell, run_cell_task(self._payload(cell))))
                bar.update(1)
        else:
            with ProcessPoolExecutor(max_workers=self.workers) as pool:
                futures = {pool.submit(run_cell_task, self._payload(cell)): cell for cell in pending}
                for future in as_completed(futures):
                    cell = futures[future]
                    try:
                        message = self._message_for(cell, future.result())
                    except Exception as e:
                        # worker crashed outside safe_run
                        message = CellMessage("cell", self.name, {"error": f"{type(e).__name__}: {e}"}, "error", {"cell_id": cell.cell_id})
                    self.bus.send_message(message)
                    bar.update(1)
        bar.close()

        statuses = Counter(row["status"] for row in self.ledger.cells())
        write_json(self.output_dir / "reports" / "grid_summary.json", {**self.result.to_dict(), "ledger": dict(statuses)})
        for message in self.bus.errors():
            self.logger.warning(f"Cell {message.cell_id} failed: {message.data.get('error')}")
        return self.result


def run_grid(experiment: ExperimentConfig, workers: Optional[int] = None, progress: bool = True) -> GridResult:
    """
    Run every cell of the experiment grid

    Completed cells whose content hash is unchanged are skipped. A failing
    cell is recorded and the others proceed.
    """
    return GridRunner(experiment, workers, progress).run()
