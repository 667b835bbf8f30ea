"""
Run configuration, on-disk cache and report writing for the command line.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .errors import BadParams

COMMANDS = ("spectrum", "splitting", "verify", "regularity", "holder", "dichotomy")

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "oseledets run configuration",
    "type": "object",
    "additionalProperties": False,
    "required": ["system", "command"],
    "properties": {
        "system": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"type": "string"},
                "params": {"type": "object"},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "command": {"enum": list(COMMANDS)},
        "horizon": {"type": "integer", "minimum": 10},
        "samples": {"type": "integer", "minimum": 1},
        "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "epsilon": {"oneOf": [{"const": "auto"}, {"type": "number", "exclusiveMinimum": 0}]},
        "split_index": {"oneOf": [{"const": "all"}, {"type": "integer", "minimum": 1}]},
        "eps0": {"type": "number", "exclusiveMinimum": 0},
        "window": {"type": "integer", "minimum": 1},
        "x": {"type": "array", "items": {"type": "number"}},
        "output_dir": {"type": "string"},
        "cache": {"type": "boolean"},
        "threads": {"type": "integer", "minimum": 1},
    },
}


@dataclass(frozen=True)
class RunConfig:
    system: dict
    command: str
    horizon: int = 1000
    samples: int = 50
    delta: float = 0.1
    epsilon: object = "auto"
    split_index: object = "all"
    eps0: float = 0.05
    window: int = 50
    x: tuple | None = None
    output_dir: str = "oseledets-out"
    cache: bool = True
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        try:
            jsonschema.validate(doc, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise BadParams(f"invalid configuration: {exc.message}") from None
        doc = dict(doc)
        sysdoc = dict(doc.pop("system"))
        sysdoc.setdefault("params", {})
        sysdoc.setdefault("seed", 0)
        if doc.get("x") is not None:
            doc["x"] = tuple(float(v) for v in doc["x"])
        return cls(system=sysdoc, **doc)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["x"] = list(self.x) if self.x is not None else None
        return out

    def numeric_dict(self) -> dict:
        """Config fields that influence numbers (excludes paths and threads)."""
        out = self.to_dict()
        for key in ("output_dir", "cache", "threads"):
            out.pop(key)
        return out


# --- cache -------------------------------------------------------------------


def default_cache_dir() -> Path:
    env = os.environ.get("OSELEDETS_CACHE_DIR")
    return Path(env) if env else Path.home() / ".cache" / "oseledets"


def cache_key(*parts) -> str:
    """Content hash of JSON-able parts and arrays, salted with the version."""
    h = hashlib.sha256(__version__.encode())
    for p in parts:
        if isinstance(p, np.ndarray):
            h.update(str(p.dtype).encode() + str(p.shape).encode())
            h.update(np.ascontiguousarray(p).tobytes())
        else:
            h.update(json.dumps(p, sort_keys=True, default=str).encode())
        h.update(b"\0")
    return h.hexdigest()


class ArrayCache:
    """npz files under one directory; writes go through an atomic rename."""

    def __init__(self, root=None, enabled: bool = True):
        self.root = Path(root) if root is not None else default_cache_dir()
        self.enabled = enabled
        self.hits = 0
        self.misses = 0

    def _path(self, key: str) -> Path:
        return self.root / f"{key}.npz"

    def get(self, key: str):
        if not self.enabled:
            return None
        path = self._path(key)
        if not path.exists():
            self.misses += 1
            return None
        try:
            with np.load(path, allow_pickle=False) as data:
                out = {k: data[k] for k in data.files}
        except (OSError, ValueError, zipfile.BadZipFile, EOFError):
            # never trust a damaged entry
            path.unlink(missing_ok=True)
            self.misses += 1
            return None
        self.hits += 1
        return out

    def put(self, key: str, arrays: dict):
        if not self.enabled:
            return
        self.root.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                np.savez(fh, **arrays)
            os.replace(tmp, self._path(key))
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise


# --- writing -------------------------------------------------------------------


def dumps_json(doc) -> str:
    # repr-based floats round-trip exactly in double precision
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_bundle(output_dir, files: dict, manifest: dict):
    """Write every file plus manifest.json; the single writer stage."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out / name).write_text(text)
    manifest = dict(manifest, files=sorted(files))
    (out / "manifest.json").write_text(dumps_json(manifest))
