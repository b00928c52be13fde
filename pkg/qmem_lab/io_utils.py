from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError

PRESET_DIR = Path(__file__).resolve().parent / 'presets'


def upload_path(file_obj):
    if isinstance(file_obj, (str, Path)):
        return Path(file_obj)
    # Gradio uploads expose the temp path as ``.name``.
    return Path(file_obj.name)


def read_json_content(file_obj):
    """Read JSON content from an uploaded file or file path."""
    if file_obj is None:
        raise ValueError("No file given.")

    if hasattr(file_obj, 'read'):
        if hasattr(file_obj, 'seek'):
            file_obj.seek(0)
        content = file_obj.read()
        if isinstance(content, bytes):
            content = content.decode('utf-8')
        return json.loads(content)

    with open(upload_path(file_obj), 'r', encoding='utf-8') as f:
        return json.load(f)


def resolve_preset(kind: str, ref):
    """An uploaded file, an existing path, or a preset name under ``presets/<kind>/``."""
    if ref is None:
        raise ConfigError(f"No {kind} given.")
    if not isinstance(ref, (str, Path)):
        return ref
    path = Path(ref)
    if path.exists():
        return path
    for suffix in ('.json', '.yaml'):
        candidate = PRESET_DIR / kind / f"{ref}{suffix}"
        if candidate.exists():
            return candidate
    raise ConfigError(f"{kind}: '{ref}' is neither a file nor a shipped preset.")


def to_jsonable(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    return obj


def dumps_canonical(obj: Any) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, separators=(',', ':'))


def fingerprint(obj: Any) -> str:
    """SHA-256 over the canonical JSON form of ``obj``."""
    return hashlib.sha256(dumps_canonical(obj).encode('utf-8')).hexdigest()


def write_json(path, obj: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(to_jsonable(obj), f, indent=2)
    return path
