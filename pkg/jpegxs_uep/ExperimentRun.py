"""
This module stores simulation runs so that any CSV can be traced back to the
configuration, profile and tool version that produced it.

.. list-table:: Table Schema
   :header-rows: 1

   * - Column
     - Type
     - Description
   * - id
     - VARCHAR
     - Run id, digest of the configs and profile checksums (primary key)
   * - profile_checksum
     - VARCHAR
     - sha256 of the profile the run used
   * - manifest
     - JSON
     - `RunManifest`: config echo, tool version, seeds, timestamps
   * - report
     - JSON
     - Every `SimulationReport` of the run
   * - created
     - DATETIME
     - When the run was stored

A run with the same id replaces the stored one: equal ids mean equal configs,
so the reports are the same.

To use this module::

    from jpegxs_uep import UepActor

    run = UepActor.store_report([report], manifest)
    latest = UepActor.get_latest_run()
    ok = UepActor.verify_run_integrity(latest.id, profile)
"""

import json
import logging
from datetime import datetime, timezone
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from sqlalchemy import Column, Index, Text
from sqlmodel import SQLModel, Field, select

from .Codestream import CodestreamProfile
from .Simulator import SimulationReport, payload_digest, run_digest
from .utils import get_session

logger = logging.getLogger(__name__)


def tool_version() -> str:
    try:
        return version("jpegxs-uep")
    except PackageNotFoundError:
        return "0.0.0+local"


class RunManifest(SQLModel):
    run_id: str
    tool_version: str = Field(default_factory=tool_version)
    profile_checksum: str
    base_seed: Optional[int] = None
    configs: List[Dict[str, Any]] = Field(default_factory=list)
    outputs: List[str] = Field(default_factory=list)
    started: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))
    finished: Optional[datetime] = None

    @staticmethod
    def for_reports(reports: Sequence[SimulationReport], started: Optional[datetime] = None) -> "RunManifest":
        first = reports[0]
        return RunManifest(
            run_id=run_digest(reports),
            profile_checksum=first.profile_checksum,
            base_seed=first.config.base_seed,
            configs=[report.config.model_dump(mode="json") for report in reports],
            started=started or datetime.now(timezone.utc),
        )

    @staticmethod
    def for_command(command: str, config: Dict[str, Any], profile_checksum: str = "", started: Optional[datetime] = None) -> "RunManifest":
        """Manifest of an ``optimize`` or ``pmf`` output; ``base_seed`` stays unset."""
        echo = {"command": command, **config}
        return RunManifest(
            run_id=payload_digest({"config": echo, "profile": profile_checksum}),
            profile_checksum=profile_checksum,
            configs=[echo],
            started=started or datetime.now(timezone.utc),
        )


class ExperimentRun(SQLModel, table=True):
    __tablename__ = "experiment_runs"
    __table_args__ = (
        Index("ix_experiment_runs_created", "created"),
    )

    id: str = Field(primary_key=True)
    profile_checksum: str = Field(nullable=False)
    manifest: str = Field(default="{}", sa_column=Column(Text))
    report: str = Field(default="[]", sa_column=Column(Text))
    created: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))

    def get_manifest(self) -> RunManifest:
        return RunManifest.model_validate_json(self.manifest)

    def get_reports(self) -> List[SimulationReport]:
        return [SimulationReport.model_validate(item) for item in json.loads(self.report or "[]")]


class ExperimentRunManager:
    @staticmethod
    def create_run(data: Dict[str, Any]) -> ExperimentRun:
        """Creates a new ExperimentRun record.

        Args:
            data: Must include 'id' and 'profile_checksum'. 'manifest' and 'report'
                may be given as JSON strings or as plain dicts/lists.

        Returns:
            The created ExperimentRun instance.
        """
        with get_session() as session:
            run_data = data.copy()
            for key in ("manifest", "report"):
                if key in run_data and not isinstance(run_data[key], str):
                    run_data[key] = json.dumps(run_data[key], default=str, sort_keys=True)
            run = ExperimentRun(**run_data)
            session.add(run)
            session.commit()
            session.refresh(run)
            return run

    @staticmethod
    def read_run(run_id: str) -> Optional[ExperimentRun]:
        with get_session() as session:
            return session.get(ExperimentRun, run_id)

    @staticmethod
    def list_runs(page: int = 1, page_size: int = 10, order_by: str = "created", order_direction: str = "desc") -> List[ExperimentRun]:
        """Lists stored runs with pagination and sorting."""
        if page < 1:
            page = 1
        if page_size < 1:
            page_size = 10
        offset = (page - 1) * page_size
        order_column = getattr(ExperimentRun, order_by, ExperimentRun.created)
        sort_order = order_column.desc() if order_direction.lower() == "desc" else order_column.asc()
        with get_session() as session:
            return session.exec(
                select(ExperimentRun)
                .order_by(sort_order)
                .offset(offset)
                .limit(page_size)
            ).all()

    @staticmethod
    def get_latest_run() -> Optional[ExperimentRun]:
        with get_session() as session:
            return session.exec(
                select(ExperimentRun).order_by(ExperimentRun.created.desc()).limit(1)
            ).first()

    @staticmethod
    def delete_run(run_id: str) -> bool:
        """Deletes a run by id. Returns False when there is none."""
        with get_session() as session:
            run = session.get(ExperimentRun, run_id)
            if not run:
                return False
            session.delete(run)
            session.commit()
            return True

    @staticmethod
    def verify_run_integrity(run_id: str, profile: CodestreamProfile) -> bool:
        """Checks that ``profile`` is the profile the run was made with."""
        run = ExperimentRunManager.read_run(run_id)
        if not run:
            return False
        return run.profile_checksum == profile.checksum()

    @staticmethod
    def store_report(reports: Union[SimulationReport, Sequence[SimulationReport]], manifest: Optional[RunManifest] = None) -> ExperimentRun:
        """Stores the reports of one run, replacing a stored run with the same id.

        Args:
            reports: The reports of the run, in output order.
            manifest: Manifest of the run (default: one built from the reports).

        Returns:
            The stored ExperimentRun.
        """
        if isinstance(reports, SimulationReport):
            reports = [reports]
        manifest = manifest or RunManifest.for_reports(reports)
        if ExperimentRunManager.delete_run(manifest.run_id):
            logger.debug("Replacing stored run %s", manifest.run_id)
        run = ExperimentRunManager.create_run({
            "id": manifest.run_id,
            "profile_checksum": manifest.profile_checksum,
            "manifest": manifest.model_dump_json(),
            "report": [report.model_dump(mode="json") for report in reports],
        })
        logger.info("Stored run %s (%d reports)", run.id, len(reports))
        return run

    @staticmethod
    def write_manifest(manifest: RunManifest, output: Union[str, Path]) -> Path:
        """Writes ``<output>.manifest.json`` next to an output file."""
        path = Path(f"{output}.manifest.json")
        path.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
        return path
