"""Versioned checkpoint container shared by all trainable modules.

Layout (format version 1): a standard uncompressed ``.npz`` archive with

* ``__meta__``  — one JSON string (as a 0-d numpy string array) holding
  ``{"format_version": 1, "seed": <int>, "sections": {name: config-dict}}``
* ``<section>/<tensor>`` — one float64 array per named tensor, e.g.
  ``estimator/conv1_w``.

Section config dicts carry whatever hyperparameters the owning module
needs to rebuild its parameter object (channel counts, input sizes, ...).
Arrays round-trip losslessly; the layout is stable across releases.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import DataError

FORMAT_VERSION = 1


def save_checkpoint(path, sections: dict, seed: int) -> None:
    """``sections`` maps name -> (config_dict, tensors_dict)."""
    meta = {
        "format_version": FORMAT_VERSION,
        "seed": int(seed),
        "sections": {name: cfg for name, (cfg, _) in sections.items()},
    }
    arrays = {"__meta__": np.array(json.dumps(meta, sort_keys=True))}
    for name, (_, tensors) in sections.items():
        for key, value in tensors.items():
            arrays[f"{name}/{key}"] = np.asarray(value, dtype=np.float64)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[dict, int]:
    """Returns ({section: (config, tensors)}, seed)."""
    try:
        with np.load(path, allow_pickle=False) as data:
            if "__meta__" not in data:
                raise DataError(f"{path}: missing checkpoint metadata")
            meta = json.loads(str(data["__meta__"]))
            if meta.get("format_version") != FORMAT_VERSION:
                raise DataError(
                    f"{path}: unsupported checkpoint version {meta.get('format_version')}"
                )
            sections: dict = {
                name: (cfg, {}) for name, cfg in meta["sections"].items()
            }
            for key in data.files:
                if key == "__meta__":
                    continue
                name, _, tensor = key.partition("/")
                if name not in sections:
                    raise DataError(f"{path}: tensor {key} has no section metadata")
                sections[name][1][tensor] = data[key]
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"failed to read checkpoint {path}: {exc}") from exc
    return sections, int(meta["seed"])
