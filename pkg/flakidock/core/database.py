from contextlib import contextmanager
from pathlib import Path

from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import declarative_base, sessionmaker

# Monitor history lives in one SQLite file per state directory.
HISTORY_DB_NAME = "history.db"

Base = declarative_base()

_engines: dict[Path, Engine] = {}


def get_engine(state_dir: Path) -> Engine:
    db_path = (Path(state_dir) / HISTORY_DB_NAME).resolve()
    engine = _engines.get(db_path)
    if engine is None:
        db_path.parent.mkdir(parents=True, exist_ok=True)
        engine = create_engine(
            f"sqlite:///{db_path}", connect_args={"check_same_thread": False}
        )
        # Import registers the ORM tables on Base.metadata
        from flakidock import models  # noqa: F401

        Base.metadata.create_all(bind=engine)
        _engines[db_path] = engine
    return engine


@contextmanager
def get_db(state_dir: Path):
    SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=get_engine(state_dir))
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()
