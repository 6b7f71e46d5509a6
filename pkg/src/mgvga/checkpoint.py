"""Named-tensor checkpoint archive.

Layout: one JSON header line (format version, dtype, entry names + shapes)
terminated by a newline, followed by the raw little-endian values of every
tensor concatenated in header order. Writes are atomic (temp file + rename).
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .autodiff import Tensor

FORMAT_VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(path, params: dict, dtype: str = "float32"):
    if dtype not in _DTYPES:
        raise ValueError(f"unsupported checkpoint dtype {dtype!r}")
    names = sorted(params)
    header = {
        "format_version": FORMAT_VERSION,
        "dtype": dtype,
        "entries": [{"name": n, "shape": list(params[n].data.shape)}
                    for n in names],
    }
    payload = json.dumps(header, sort_keys=True).encode("ascii") + b"\n"
    blob = bytearray(payload)
    wire = np.dtype(_DTYPES[dtype])
    for n in names:
        blob += np.ascontiguousarray(params[n].data, dtype=wire).tobytes()
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(bytes(blob))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path, requires_grad: bool = True) -> dict:
    with open(path, "rb") as fh:
        data = fh.read()
    newline = data.find(b"\n")
    if newline < 0:
        raise ValueError("checkpoint missing header line")
    header = json.loads(data[:newline])
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('format_version')}")
    wire = np.dtype(_DTYPES[header["dtype"]])
    params = {}
    offset = newline + 1
    for entry in header["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * wire.itemsize
        chunk = data[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise ValueError(f"checkpoint truncated at entry {entry['name']!r}")
        arr = np.frombuffer(chunk, dtype=wire).reshape(shape).copy()
        params[entry["name"]] = Tensor(arr.astype(header["dtype"]),
                                       requires_grad=requires_grad)
        offset += nbytes
    if offset != len(data):
        raise ValueError("checkpoint has trailing bytes")
    return params
