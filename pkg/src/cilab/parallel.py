"""Worker-count plumbing.

One process per run; inner parallelism is bounded by a single knob set
from the CLI.  FFT batches and per-slice interpolation loops use it.
Results are reduced in fixed slice order, so a run is reproducible for a
fixed worker count.
"""

import os

_workers = int(os.environ.get("CILAB_THREADS", "1"))


def set_workers(n: int):
    global _workers
    _workers = max(1, int(n))


def fft_workers() -> int:
    return _workers
