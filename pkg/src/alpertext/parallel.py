"""Deterministic process-pool map.

Work items stay in the parent and are inherited by forked workers, so
closures and fields with callable sources never need to be pickled; only
results travel back.  Output order always matches input order.
"""
from __future__ import annotations

import multiprocessing as mp
from typing import Callable, Sequence

_STATE: dict = {}


def _call(i: int):
    return _STATE["fn"](_STATE["items"][i])


def pmap(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    items = list(items)
    if jobs <= 1 or len(items) < 2 or "fork" not in mp.get_all_start_methods():
        return [fn(x) for x in items]
    _STATE.update(fn=fn, items=items)
    try:
        with mp.get_context("fork").Pool(min(jobs, len(items))) as pool:
            return pool.map(_call, range(len(items)), chunksize=1)
    finally:
        _STATE.clear()
