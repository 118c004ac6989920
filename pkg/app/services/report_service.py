import csv
import io
import logging
from pathlib import Path
from typing import Iterable, List, Sequence, Union

from app.controllers.theory_controller import TheoryRow
from app.models.record import CSV_COLUMNS, ExperimentRecord
from app.utils.errors import ConfigError

logger = logging.getLogger(__name__)

THEORY_COLUMNS = ("k", "closed_form", "mc_mean", "mc_std_error", "optimal", "rule")

PathLike = Union[str, Path]


def _format(value) -> str:
    # str() of a float is its shortest round-trip form
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _render(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_format(value) for value in row])
    return buffer.getvalue()


def records_csv(records: Iterable[ExperimentRecord]) -> str:
    return _render(CSV_COLUMNS, (record.csv_row() for record in records))


def theory_csv(rows: Iterable[TheoryRow]) -> str:
    return _render(THEORY_COLUMNS, rows)


def write_text(path: PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(text)
    logger.info(f"Wrote {path}")


def write_records(path: PathLike, records: Iterable[ExperimentRecord]) -> None:
    write_text(path, records_csv(records))


def read_records(path: PathLike) -> List[ExperimentRecord]:
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ConfigError(f"{path} is not a sweep CSV (header {reader.fieldnames})")
        try:
            return [
                ExperimentRecord(
                    task=row["task"],
                    k=int(row["k"]),
                    seed=int(row["seed"]),
                    trial=int(row["trial"]),
                    mse=float(row["mse"]),
                    psnr_db=float(row["psnr_db"]),
                    residual=float(row["residual"]),
                    wall_ms=float(row["wall_ms"]),
                )
                for row in reader
            ]
        except ValueError as e:
            raise ConfigError(f"Malformed row in {path}: {e}") from e
