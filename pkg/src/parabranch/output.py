"""Result artifacts: CSV tables and the JSON run manifest.

Floats are written with repr so a file round-trips bit-for-bit through
Python floats. The manifest deliberately records nothing environmental
beyond library versions (no timestamps, no absolute paths, no worker
counts): re-running the embedded config with the recorded seed must
reproduce every output file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import platform
from pathlib import Path
from typing import Any, Dict, Iterable, Sequence

import numpy as np
import scipy

from . import __version__

__all__ = [
    "MANIFEST_SCHEMA",
    "format_cell",
    "write_rows_csv",
    "file_sha256",
    "canonical_json",
    "write_manifest",
    "load_manifest",
]

MANIFEST_SCHEMA = 1


def format_cell(v: Any) -> str:
    if isinstance(v, float) or isinstance(v, np.floating):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_rows_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format_cell(v) for v in row) + "\n")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_manifest(
    out_dir,
    *,
    kind: str,
    seed: int,
    replicas,
    config: Dict[str, Any],
    outputs: Dict[str, Path],
) -> Path:
    """Write manifest.json next to the outputs and return its path.

    ``config`` is the resolved config table; loading the manifest as a
    config re-runs exactly this experiment. ``outputs`` maps artifact
    names to their files; only base names and digests are recorded.
    """
    out_dir = Path(out_dir)
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "kind": kind,
        "seed": seed,
        "replicas": replicas,
        "config": config,
        "config_sha256": hashlib.sha256(canonical_json(config).encode()).hexdigest(),
        "versions": {
            "parabranch": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "outputs": {name: file_sha256(p) for name, p in sorted(outputs.items())},
    }
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_manifest(path) -> Dict[str, Any]:
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or data.get("schema") != MANIFEST_SCHEMA:
        raise ValueError(f"{path}: not a schema-{MANIFEST_SCHEMA} manifest")
    return data
