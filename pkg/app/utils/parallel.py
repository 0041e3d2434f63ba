"""Chunked fan-out over a thread pool.

Work is always split into chunks of a fixed size, whatever the worker count,
and results come back in chunk order. Reductions done by callers over that
list are therefore bitwise identical for any number of threads.
"""
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, TypeVar

from config.settings import default_threads

T = TypeVar("T")

CHUNK_SIZE = 512


def resolve_threads(threads: Optional[int]) -> int:
  if threads is None:
    threads = default_threads()
  return max(1, int(threads))


def chunk_bounds(n: int, chunk: int = CHUNK_SIZE) -> List[slice]:
  return [slice(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]


def map_chunks(
  fn: Callable[[slice], T],
  n: int,
  threads: Optional[int] = None,
  chunk: int = CHUNK_SIZE,
) -> List[T]:
  bounds = chunk_bounds(n, chunk)
  workers = min(resolve_threads(threads), max(1, len(bounds)))
  if workers == 1:
    return [fn(b) for b in bounds]
  with ThreadPoolExecutor(max_workers=workers) as pool:
    return list(pool.map(fn, bounds))
