"""
ssep-lab Output Writers
CSV tables with an embedded manifest header, JSON summaries, and the run manifest.
"""

import json
import logging
import os
import platform
from datetime import datetime
from typing import Any, Optional

import pandas as pd
import psutil

from cli import __version__

log = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def manifest_header(manifest: dict[str, Any]) -> str:
    """'# key: value' lines, sorted by key; never carries wall-clock."""
    lines = []
    for key in sorted(manifest):
        value = manifest[key]
        if isinstance(value, (dict, list)):
            value = json.dumps(value, sort_keys=True, separators=(",", ":"))
        lines.append(f"# {key}: {value}\n")
    return "".join(lines)


def write_csv(frame: pd.DataFrame, path: str, manifest: dict[str, Any], index: bool = False):
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(manifest_header(manifest))
        frame.to_csv(f, index=index, float_format=FLOAT_FORMAT, lineterminator="\n")
    log.debug("wrote %s (%d rows)", path, len(frame))


def read_csv(path: str) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def write_json(payload: dict[str, Any], path: str):
    with open(path, "w", encoding="utf-8", newline="") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def file_manifest(command: str, config_hash: str, master_seed: int, extra: Optional[dict] = None) -> dict[str, Any]:
    """Deterministic part of the manifest, embedded in every output file."""
    return {
        "command": command,
        "config_hash": config_hash,
        "master_seed": master_seed,
        "tool_version": __version__,
        **(extra or {}),
    }


def run_manifest(base: dict[str, Any], criteria: dict[str, str], exit_code: int, started: datetime) -> dict[str, Any]:
    """Full manifest for manifest.json: adds wall-clock, outcome and host resources."""
    process = psutil.Process()
    finished = datetime.now()
    return {
        **base,
        "criteria": criteria,
        "exit_code": exit_code,
        "started_at": started.isoformat(),
        "finished_at": finished.isoformat(),
        "wall_clock_seconds": (finished - started).total_seconds(),
        "resources": {
            "python": platform.python_version(),
            "physical_cores": psutil.cpu_count(logical=False),
            "logical_cores": psutil.cpu_count(logical=True),
            "memory_total_mb": round(psutil.virtual_memory().total / 1024 ** 2, 1),
            "peak_rss_mb": round(process.memory_info().rss / 1024 ** 2, 1),
        },
    }


def output_path(out_dir: str, name: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    return os.path.join(out_dir, name)
