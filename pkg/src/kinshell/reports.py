"""CSV and manifest emission.

Floats are serialized as shortest round-trip decimals and rows end with a
bare newline, so a rerun of the same config produces byte-identical files.
Every data row carries the config checksum, making tables self-identifying.
"""

from __future__ import annotations

import csv
import hashlib
import json
import platform
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "fmt",
    "write_csv",
    "sha256_file",
    "write_manifest",
]


def fmt(value) -> str:
    """Shortest decimal that round-trips the value."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
    return path


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(
    out_dir: Path,
    config_text: str,
    config_checksum: str,
    artifacts: Sequence[Path],
    extra: dict | None = None,
) -> Path:
    """Run manifest: config echo, library versions and artifact checksums.

    Deliberately contains no timestamps so reruns are byte-identical.
    """
    import matplotlib
    import scipy

    from . import __version__

    out_dir = Path(out_dir)
    manifest = {
        "kinshell_version": __version__,
        "python_version": platform.python_version(),
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
        "matplotlib_version": matplotlib.__version__,
        "config_checksum_sha256": config_checksum,
        "config": config_text,
        "artifacts": {
            str(Path(p).relative_to(out_dir)): sha256_file(p) for p in artifacts
        },
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
