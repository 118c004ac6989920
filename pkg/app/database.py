from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional, Union
import os

from sqlalchemy.engine import Engine
from sqlmodel import Session, SQLModel, create_engine

# Run registry: an SQLite file holding ExperimentRecord rows.
# TUNELAB_DB overrides the default location.
DEFAULT_DB_PATH = Path(os.getenv("TUNELAB_DB", "./tunelab.db"))


def make_engine(db_path: Optional[Union[str, Path]] = None) -> Engine:
    """Create an SQLite engine; ':memory:' gives a throwaway in-memory registry."""
    if str(db_path) == ":memory:":
        return create_engine("sqlite://", echo=False)
    path = Path(db_path) if db_path is not None else DEFAULT_DB_PATH
    path.parent.mkdir(parents=True, exist_ok=True)
    return create_engine(f"sqlite:///{path}", echo=False)


def init_db(engine: Engine) -> None:
    """Create tables if they do not exist."""
    # Registers the table with SQLModel.metadata
    from app.models.record import ExperimentRecord  # noqa: F401

    SQLModel.metadata.create_all(engine)


@contextmanager
def get_session(engine: Engine) -> Iterator[Session]:
    """Yield a database session."""
    with Session(engine, expire_on_commit=False) as session:
        yield session
