import os
import threading
from contextlib import contextmanager
from pathlib import Path

from flakidock.core.errors import StateDirLocked


class ReadWriteLock:
    """Many readers or one writer.

    A waiting writer blocks new readers, so cleanup is not starved by a
    steady stream of builds. Neither side is reentrant.
    """

    def __init__(self):
        self._cond = threading.Condition(threading.Lock())
        self._readers = 0
        self._writer = False
        self._writers_waiting = 0

    @contextmanager
    def read(self):
        with self._cond:
            while self._writer or self._writers_waiting:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                if self._readers == 0:
                    self._cond.notify_all()

    @contextmanager
    def write(self):
        with self._cond:
            self._writers_waiting += 1
            try:
                while self._writer or self._readers:
                    self._cond.wait()
            finally:
                self._writers_waiting -= 1
            self._writer = True
        try:
            yield
        finally:
            with self._cond:
                self._writer = False
                self._cond.notify_all()


# Builds hold the shared side, engine cleanup the exclusive side (prune destroys shared state).
HOST_ENGINE_LOCK = ReadWriteLock()


class StateDirLock:
    """Lock file keeping one CLI process per state directory."""

    def __init__(self, state_dir: Path):
        self.path = Path(state_dir) / ".lock"
        self._fd: int | None = None

    def acquire(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError as exc:
            raise StateDirLocked(
                f"state directory {self.path.parent} is in use (remove {self.path} if stale)"
            ) from exc
        os.write(self._fd, str(os.getpid()).encode())

    def release(self) -> None:
        if self._fd is None:
            return
        os.close(self._fd)
        self._fd = None
        self.path.unlink(missing_ok=True)

    def __enter__(self) -> "StateDirLock":
        self.acquire()
        return self

    def __exit__(self, *exc) -> None:
        self.release()
