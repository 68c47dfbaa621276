"""Machine-readable output files: CSV, JSON, manifests.

Reals are written with ``repr`` (shortest round-trip decimal, no locale), so
reruns with identical configuration and seed produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import platform
import time
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy


def _cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_cell(c) for c in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def file_sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir: Path, command: str, config: dict, seed: int,
                   model_path: Path | None, started: float) -> None:
    """Everything needed to re-run the experiment exactly."""
    import dynenvwalk
    doc = {
        "command": command,
        "config": config,
        "seed": seed,
        "model_sha256": file_sha256(model_path) if model_path else None,
        "wall_clock_seconds": round(time.time() - started, 3),
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "dynenvwalk": dynenvwalk.__version__,
        },
    }
    write_json(out_dir / "manifest.json", doc)


def blocks_csv_rows(block_replica: np.ndarray, block_dtau: np.ndarray,
                    block_dx: np.ndarray):
    """Rows for blocks.csv: replica, block_index, dtau, dx_1..dx_d.

    Blocks arrive time-ordered but replica-interleaved; emit them grouped by
    replica, each replica's blocks indexed from 0.
    """
    order = np.lexsort((np.arange(block_replica.size), block_replica))
    idx_within = np.zeros(block_replica.size, dtype=np.int64)
    counts: dict[int, int] = {}
    for pos in order:
        r = int(block_replica[pos])
        idx_within[pos] = counts.get(r, 0)
        counts[r] = idx_within[pos] + 1
    for pos in order:
        yield (int(block_replica[pos]), int(idx_within[pos]),
               int(block_dtau[pos]), *[int(c) for c in block_dx[pos]])
