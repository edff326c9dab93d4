from __future__ import annotations

import asyncio
import json
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Sequence, Tuple

import numpy as np
import pandas as pd


def write_json(base_dir: Path | str, filename: str, payload: Any) -> Path:
    base = Path(base_dir)
    base.mkdir(parents=True, exist_ok=True)
    if not filename.endswith(".json"):
        filename = f"{filename}.json"
    out = base / filename
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as f:
        json.dump(to_jsonable(payload), f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")
    return out


def write_csv(base_dir: Path | str, filename: str, rows: Sequence[Dict[str, Any]] | pd.DataFrame, columns: Sequence[str] | None = None) -> Path:
    base = Path(base_dir)
    if not filename.endswith(".csv"):
        filename = f"{filename}.csv"
    out = base / filename
    out.parent.mkdir(parents=True, exist_ok=True)
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows), columns=list(columns) if columns else None)
    frame.to_csv(out, index=False, lineterminator="\n")
    return out


def to_jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays and tuples into plain JSON types."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        value = float(value)
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def resolve_positive_int(value: Any, fallback: int) -> int:
    try:
        candidate = int(value)
        if candidate > 0:
            return candidate
    except Exception:
        pass
    return fallback


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic child seed for (seed, keys...) independent of call order."""
    entropy = [int(seed) & 0xFFFFFFFF] + [int(k) & 0xFFFFFFFF for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint32)[0])


async def _gather_sync(callables: List[Callable[[], Any]], limit: int) -> Tuple[List[Any], List[Exception | None]]:
    sem = asyncio.Semaphore(limit)
    results: List[Any] = [None] * len(callables)
    errors: List[Exception | None] = [None] * len(callables)

    async def _runner(idx: int, fn: Callable[[], Any]) -> None:
        async with sem:
            try:
                results[idx] = await asyncio.to_thread(fn)
            except Exception as exc:
                errors[idx] = exc

    await asyncio.gather(*(_runner(i, fn) for i, fn in enumerate(callables)))
    return results, errors


def run_sync_tasks(callables: Iterable[Callable[[], Any]], limit: int = 1) -> Tuple[List[Any], List[Exception | None]]:
    """Run blocking callables with at most ``limit`` in flight.

    Results and errors come back in submission order. With ``limit`` 1 the callables run
    inline on the calling thread.
    """
    tasks = list(callables)
    max_workers = resolve_positive_int(limit, 1)
    if max_workers == 1 or len(tasks) <= 1:
        results: List[Any] = []
        errors: List[Exception | None] = []
        for fn in tasks:
            try:
                results.append(fn())
                errors.append(None)
            except Exception as exc:
                results.append(None)
                errors.append(exc)
        return results, errors
    return asyncio.run(_gather_sync(tasks, max_workers))


def run_sync_tasks_strict(callables: Iterable[Callable[[], Any]], limit: int = 1) -> List[Any]:
    """Like ``run_sync_tasks`` but re-raises the first error in submission order."""
    results, errors = run_sync_tasks(callables, limit)
    for err in errors:
        if err is not None:
            raise err
    return results
