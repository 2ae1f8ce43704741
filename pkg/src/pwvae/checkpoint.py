"""Versioned text checkpoints for model parameters.

Layout: a header (format tag, variant, dimensions, piece count,
activation) followed by one block per named parameter in canonical
order: ``param <name> <rows> <cols>`` and then ``rows`` lines of
``cols`` space-separated decimal values, row major, with 17 significant
digits.  That precision round-trips 64-bit floats exactly, so
save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import numpy as np

from .nvdm import NvdmModel, param_shapes
from .tensor import Tensor

__all__ = ["CheckpointError", "MAGIC", "save_checkpoint", "load_checkpoint"]

MAGIC = "pwvae-ckpt v1"


class CheckpointError(ValueError):
    """Unreadable or inconsistent checkpoint file."""


def save_checkpoint(model: NvdmModel, path: str) -> None:
    lines = [
        MAGIC,
        f"variant {model.variant}",
        f"vocab {model.vocab_size}",
        f"hidden {model.hidden}",
        f"gauss_dims {model.gauss_dims}",
        f"piece_dims {model.piece_dims}",
        f"pieces {model.n_pieces}",
        f"activation {model.activation}",
    ]
    for name, tensor in model.named_parameters():
        data = tensor.data
        rows, cols = data.shape if data.ndim == 2 else (1, data.shape[0])
        lines.append(f"param {name} {rows} {cols}")
        for row in data.reshape(rows, cols):
            lines.append(" ".join(f"{v:.17g}" for v in row))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def _header_int(line: str, key: str, path: str) -> int:
    parts = line.split()
    if len(parts) != 2 or parts[0] != key:
        raise CheckpointError(f"{path}: expected '{key} <value>' header line, got {line!r}")
    return int(parts[1])


def load_checkpoint(path: str) -> NvdmModel:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != MAGIC:
        raise CheckpointError(f"{path}: not a {MAGIC} file")
    try:
        variant = lines[1].split()[1]
        vocab_size = _header_int(lines[2], "vocab", path)
        hidden = _header_int(lines[3], "hidden", path)
        gauss_dims = _header_int(lines[4], "gauss_dims", path)
        piece_dims = _header_int(lines[5], "piece_dims", path)
        n_pieces = _header_int(lines[6], "pieces", path)
        activation = lines[7].split()[1]
    except (IndexError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed header ({exc})") from None

    expected = param_shapes(variant, vocab_size, hidden, gauss_dims, piece_dims, n_pieces, activation)
    params: dict[str, Tensor] = {}
    i = 8
    for name, shape in expected.items():
        if i >= len(lines) or not lines[i].startswith("param "):
            raise CheckpointError(f"{path}: missing parameter block for {name!r}")
        _, got_name, rows_s, cols_s = lines[i].split()
        rows, cols = int(rows_s), int(cols_s)
        if got_name != name:
            raise CheckpointError(f"{path}: expected parameter {name!r}, found {got_name!r}")
        if rows * cols != int(np.prod(shape)):
            raise CheckpointError(f"{path}: parameter {name!r} has {rows * cols} values, expected shape {shape}")
        if i + rows >= len(lines):
            raise CheckpointError(f"{path}: parameter {name!r} block is truncated")
        try:
            values = np.array(
                [float(v) for r in range(rows) for v in lines[i + 1 + r].split()],
                dtype=np.float64,
            )
        except (IndexError, ValueError) as exc:
            raise CheckpointError(f"{path}: parameter {name!r} block is unreadable ({exc})") from None
        if values.size != rows * cols:
            raise CheckpointError(f"{path}: parameter {name!r} block is truncated")
        params[name] = Tensor(values.reshape(shape))
        i += 1 + rows
    if i != len(lines):
        raise CheckpointError(f"{path}: trailing content after parameters")
    return NvdmModel(
        variant=variant,
        vocab_size=vocab_size,
        hidden=hidden,
        gauss_dims=gauss_dims,
        piece_dims=piece_dims,
        n_pieces=n_pieces,
        activation=activation,
        params=params,
    )
