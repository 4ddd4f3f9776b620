"""Versioned checkpoint files.

A checkpoint is a zip archive holding ``meta.json`` (format version, model
kind, config, schema text and digest) and one ``.npy`` member per parameter.
Member timestamps are pinned so identical models give identical bytes.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from ..data.schema import FeatureSchema
from .base import Module
from .mlp import MlpConfig, MlpModel
from .naim import NaimConfig, NaimModel

FORMAT = "naimfuse-checkpoint"
VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


def _member(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def save_checkpoint(model: Module, path, schema: FeatureSchema | None = None, extra: dict | None = None) -> None:
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "kind": model.kind,
        "config": model.config_dict(),
        "schema_hash": schema.digest() if schema is not None else None,
        "schema": schema.to_csv() if schema is not None else None,
        "parameters": list(model.named_parameters()),
        "extra": extra or {},
    }
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        _member(zf, "meta.json", json.dumps(meta, indent=1, sort_keys=True).encode("utf-8"))
        for name, param in model.named_parameters().items():
            arr = io.BytesIO()
            np.lib.format.write_array(arr, param.data, allow_pickle=False)
            _member(zf, f"params/{name}.npy", arr.getvalue())
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path, expected_schema: FeatureSchema | None = None) -> tuple[Module, dict]:
    """Rebuild the model stored at ``path``.

    Refuses the file when ``expected_schema`` is given and its digest differs
    from the one recorded at save time.
    """
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format") != FORMAT:
            raise CheckpointError(f"{path}: not a {FORMAT} file")
        if meta.get("version") != VERSION:
            raise CheckpointError(f"{path}: unsupported version {meta.get('version')}")
        if expected_schema is not None and meta["schema_hash"] != expected_schema.digest():
            raise CheckpointError(f"{path}: schema hash mismatch")
        state = {name: np.lib.format.read_array(io.BytesIO(zf.read(f"params/{name}.npy")))
                 for name in meta["parameters"]}
    if meta["kind"] == "naim":
        schema = FeatureSchema.from_csv(meta["schema"])
        model: Module = NaimModel(schema, NaimConfig(**meta["config"]))
    elif meta["kind"] == "mlp":
        model = MlpModel(MlpConfig(**meta["config"]))
    else:
        raise CheckpointError(f"{path}: unknown model kind {meta['kind']!r}")
    model.load_state_dict(state)
    return model, meta
