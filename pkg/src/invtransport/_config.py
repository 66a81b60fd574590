"""Worker-count configuration.

Numba reads ``NUMBA_NUM_THREADS`` once, when it is first imported, so the
worker count has to be settled before any kernel module loads.
"""

import os

WORKERS_ENV = "INVTRANSPORT_WORKERS"


def configured_workers():
    value = os.environ.get(WORKERS_ENV)
    if value is None:
        return os.cpu_count() or 1
    workers = int(value)
    if workers < 1:
        raise ValueError(f"{WORKERS_ENV} must be >= 1, got {value!r}")
    return workers


if WORKERS_ENV in os.environ:
    os.environ.setdefault("NUMBA_NUM_THREADS", str(configured_workers()))

# The TBB layer shipped in this environment is too old for numba and only
# produces a warning; the portable work-queue layer is always available.
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")
