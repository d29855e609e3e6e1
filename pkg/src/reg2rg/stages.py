"""Content-addressed stage tracking and the per-run-directory writer lock."""

from __future__ import annotations

import hashlib
import json
import os
import time
from contextlib import contextmanager
from pathlib import Path

from .errors import Reg2RGError


class RunLockedError(Reg2RGError):
    """Another process holds the run directory lock."""


@contextmanager
def run_lock(run_dir):
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    lock_path = run_dir / ".lock"
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RunLockedError(
            f"run directory {run_dir} is locked by another process "
            f"(remove {lock_path} if that process is gone)"
        ) from None
    try:
        os.write(fd, f"{os.getpid()} {time.time()}\n".encode())
        os.close(fd)
        yield
    finally:
        lock_path.unlink(missing_ok=True)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def config_digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def stage_manifest_path(run_dir, stage: str) -> Path:
    return Path(run_dir) / f"{stage}.stage.json"


def stage_up_to_date(run_dir, stage: str, input_hashes: dict, outputs: list) -> bool:
    """True when the stage already ran with identical inputs and outputs exist."""
    path = stage_manifest_path(run_dir, stage)
    if not path.exists():
        return False
    try:
        recorded = json.loads(path.read_text())
    except json.JSONDecodeError:
        return False
    if recorded.get("input_hashes") != input_hashes:
        return False
    return all(Path(p).exists() for p in recorded.get("outputs", []))


def write_stage_manifest(run_dir, stage: str, input_hashes: dict, outputs: list) -> None:
    payload = {
        "stage": stage,
        "input_hashes": input_hashes,
        "outputs": [str(p) for p in outputs],
        "completed": True,
    }
    stage_manifest_path(run_dir, stage).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")
