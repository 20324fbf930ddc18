"""Model checkpoint container: a JSON header plus named float64 arrays.

Layout (little-endian): magic ``LBCK``, u32 version=1, u32 header length,
UTF-8 JSON header, u32 array count, then per array: u16 name length, name,
u8 ndim, ndim x u64 shape, and the float64 values in C order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from leakbench.dataset import write_atomic
from leakbench.errors import DataError
from leakbench.neural.lstm import LstmModel
from leakbench.neural.mlp import MlpModel
from leakbench.svr import KernelSpec, SvrModel

MAGIC = b"LBCK"
VERSION = 1


def _pack(header: dict, arrays: dict[str, np.ndarray]) -> bytes:
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    out = bytearray(MAGIC)
    out += struct.pack("<II", VERSION, len(head))
    out += head
    out += struct.pack("<I", len(arrays))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        out += arr.tobytes()
    return bytes(out)


def _unpack(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if blob[:4] != MAGIC:
        raise DataError("not a checkpoint file")
    version, head_len = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    pos = 12
    header = json.loads(blob[pos : pos + head_len].decode("utf-8"))
    pos += head_len
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
        pos += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape).copy()
        pos += 8 * size
    if pos != len(blob):
        raise DataError("trailing bytes in checkpoint")
    return header, arrays


def save_model(model, path, **extra):
    """Write an MLP, LSTM or SVR model; ``extra`` (schedule, seed, ...) goes
    into the JSON header."""
    if isinstance(model, MlpModel):
        header = {
            "kind": "mlp",
            "sizes": list(model.sizes),
            "head": model.head,
            "dropout": list(model.dropout),
            "lr_scales": list(model.lr_scales),
            "activations": list(model.activations),
        }
        arrays = {}
        for l, (w, b) in enumerate(zip(model.weights, model.biases)):
            arrays[f"W{l}"] = w
            arrays[f"b{l}"] = b
    elif isinstance(model, LstmModel):
        header = {
            "kind": "lstm",
            "input_dim": model.input_dim,
            "hidden_dim": model.hidden_dim,
            "forget_bias_init": model.forget_bias_init,
        }
        arrays = {
            "w_input": model.w_input,
            "w_recurrent": model.w_recurrent,
            "bias": model.bias,
            "w_head": model.w_head,
            "b_head": model.b_head,
        }
    elif isinstance(model, SvrModel):
        header = {
            "kind": "svr",
            "kernel": model.kernel.to_json(),
            "bias": model.bias,
            "c": model.c,
            "epsilon": model.epsilon,
            "kkt_residual": model.kkt_residual,
            "converged": model.converged,
            "n_iter": model.n_iter,
            "dual_objective": model.dual_objective,
            "dim": model.dim,
            "support_ids": [str(i) for i in model.support_ids],
        }
        arrays = {"support_vectors": model.support_vectors, "dual_coef": model.dual_coef}
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    header["extra"] = extra
    write_atomic(path, _pack(header, arrays))


def load_model(path):
    header, arrays = _unpack(Path(path).read_bytes())
    kind = header.get("kind")
    if kind == "mlp":
        n = len(header["sizes"]) - 1
        return MlpModel(
            tuple(header["sizes"]),
            [arrays[f"W{l}"] for l in range(n)],
            [arrays[f"b{l}"] for l in range(n)],
            header["head"],
            tuple(header["dropout"]),
            tuple(header["lr_scales"]),
            tuple(header["activations"]),
        )
    if kind == "lstm":
        return LstmModel(
            arrays["w_input"],
            arrays["w_recurrent"],
            arrays["bias"],
            arrays["w_head"],
            arrays["b_head"],
            header["forget_bias_init"],
        )
    if kind == "svr":
        return SvrModel(
            arrays["support_vectors"].reshape(-1, header["dim"]),
            arrays["dual_coef"],
            header["bias"],
            KernelSpec.from_json(header["kernel"]),
            header["c"],
            header["epsilon"],
            header["kkt_residual"],
            header["converged"],
            header["n_iter"],
            header["dual_objective"],
            tuple(header["support_ids"]),
        )
    raise DataError(f"unknown checkpoint kind {kind!r}")


def read_header(path) -> dict:
    return _unpack(Path(path).read_bytes())[0]
