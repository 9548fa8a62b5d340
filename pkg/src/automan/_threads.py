"""Worker-thread cap for BLAS pools (``AUTOMAN_THREADS``, default 1).

The numba kernels are serial, so only the BLAS/OpenMP pools need capping.
"""
from __future__ import annotations

import contextlib
import os

from threadpoolctl import threadpool_limits


def thread_cap() -> int:
    raw = os.environ.get("AUTOMAN_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"AUTOMAN_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"AUTOMAN_THREADS must be a positive integer, got {raw!r}")
    return n


@contextlib.contextmanager
def limited_threads(n: int | None = None):
    n = thread_cap() if n is None else n
    with threadpool_limits(limits=n):
        yield n
