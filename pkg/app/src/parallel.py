import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

T = TypeVar("T")
R = TypeVar("R")

logger = logging.getLogger("app")


class WorkerPool:
    """
    Thread pool shared by simulation slices and sliced correlation.
    Results always come back in submission order, so callers that merge
    them see the same output for any worker count.
    """

    _executor: Optional[ThreadPoolExecutor]
    _started: bool = False

    def __init__(self, threads: int = 1):
        if threads < 1:
            raise ValueError(f"threads must be >= 1, got {threads}")
        self.threads = threads
        self._executor = None

    def start(self):
        if not self._started:
            if self.threads > 1:
                self._executor = ThreadPoolExecutor(
                    max_workers=self.threads, thread_name_prefix="homlab"
                )
            self._started = True
            logger.debug(f"Worker pool started with {self.threads} thread(s)")

    def map(self, fn: Callable[[T], R], items: Iterable[T]) -> List[R]:
        if not self._started:
            self.start()

        if self._executor is None:
            return [fn(item) for item in items]

        futures = [self._executor.submit(fn, item) for item in items]
        return [future.result() for future in futures]

    def stop(self):
        if self._started:
            if self._executor is not None:
                self._executor.shutdown(wait=True)
                self._executor = None
            self._started = False

    def __enter__(self) -> "WorkerPool":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()
