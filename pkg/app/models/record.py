from datetime import datetime, timezone
from typing import Optional

from sqlmodel import Field, SQLModel

CSV_COLUMNS = ("task", "k", "seed", "trial", "mse", "psnr_db", "residual", "wall_ms")


class ExperimentRecordBase(SQLModel):
    task: str = Field(index=True)
    k: int = Field(ge=1)
    seed: int
    trial: int = Field(ge=0)
    mse: float = Field(ge=0)
    psnr_db: float
    residual: float = Field(ge=0)
    wall_ms: float = Field(default=0.0, ge=0)
    psnr_capped: bool = False
    validation: bool = False


class ExperimentRecord(ExperimentRecordBase, table=True):
    """One (k, trial) outcome of a sweep; rows of the results CSV."""

    id: Optional[int] = Field(default=None, primary_key=True)
    run_id: Optional[str] = Field(default=None, index=True)
    created_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))

    def csv_row(self) -> list:
        return [getattr(self, name) for name in CSV_COLUMNS]


class KSelection(SQLModel):
    k: int
    mean_mse: float
    criterion: str = "validation_mse"
