import logging
from typing import Iterable, List, Optional

from sqlmodel import Session, select

from app.models.record import ExperimentRecord

logger = logging.getLogger(__name__)


class RecordController:
    def __init__(self, session: Session):
        self.session = session

    def save_records(self, records: Iterable[ExperimentRecord], run_id: Optional[str] = None) -> int:
        """Store sweep records, tagging them with run_id."""
        count = 0
        for record in records:
            row = ExperimentRecord.model_validate(record.model_dump(exclude={"id"}))
            if run_id is not None:
                row.run_id = run_id
            self.session.add(row)
            count += 1
        self.session.commit()
        logger.info(f"Stored {count} records for run {run_id}")
        return count

    def list_records(self, task: Optional[str] = None, run_id: Optional[str] = None) -> List[ExperimentRecord]:
        """Records in (task, k, trial) order, optionally filtered."""
        query = select(ExperimentRecord)
        if task is not None:
            query = query.where(ExperimentRecord.task == task)
        if run_id is not None:
            query = query.where(ExperimentRecord.run_id == run_id)
        query = query.order_by(ExperimentRecord.task, ExperimentRecord.k, ExperimentRecord.trial)
        return list(self.session.exec(query).all())

    def list_runs(self) -> List[str]:
        query = select(ExperimentRecord.run_id).distinct().order_by(ExperimentRecord.run_id)
        return [run for run in self.session.exec(query).all() if run is not None]
