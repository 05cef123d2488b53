"""Checkpoint files.

Format (version 1): a numpy ``.npz`` archive with

* ``__format__``  -- the string ``gfnkit-checkpoint``
* ``__version__`` -- integer 1
* ``param/<name>`` -- float64 arrays, one per parameter
* ``adam/m/<name>``, ``adam/v/<name>`` -- Adam moments (optional)
* ``adam/t`` -- Adam step counter (optional)
* ``meta`` -- a JSON string with free-form metadata (config, step, ...)

Arrays are stored verbatim, so a save/load round trip is bit-exact.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT = "gfnkit-checkpoint"
VERSION = 1


def save_checkpoint(path, params: dict, adam=None, meta: dict | None = None) -> Path:
    path = Path(path)
    blobs = {"__format__": np.array(FORMAT), "__version__": np.array(VERSION),
             "meta": np.array(json.dumps(meta or {}, sort_keys=True))}
    for k, v in params.items():
        blobs[f"param/{k}"] = np.asarray(v, dtype=np.float64)
    if adam is not None:
        blobs["adam/t"] = np.array(adam.t)
        for k in params:
            blobs[f"adam/m/{k}"] = adam.m[k]
            blobs[f"adam/v/{k}"] = adam.v[k]
    with open(path, "wb") as fh:
        np.savez(fh, **blobs)
    return path


def load_checkpoint(path):
    """Return ``(params, adam_moments_or_None, meta)``.

    ``adam_moments`` is a dict with keys ``t``, ``m`` and ``v``.
    """
    with np.load(Path(path), allow_pickle=False) as z:
        if str(z["__format__"]) != FORMAT:
            raise ValueError(f"{path} is not a {FORMAT} file")
        version = int(z["__version__"])
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        params = {k[len("param/"):]: z[k].copy() for k in z.files if k.startswith("param/")}
        adam = None
        if "adam/t" in z.files:
            adam = {"t": int(z["adam/t"]),
                    "m": {k: z[f"adam/m/{k}"].copy() for k in params},
                    "v": {k: z[f"adam/v/{k}"].copy() for k in params}}
        meta = json.loads(str(z["meta"]))
    return params, adam, meta
