"""Binary checkpoints of the solver state.

Layout (all integers little-endian)::

    offset  size  content
    0       8     magic  b"LCGCKPT1"
    8       4     uint32 header length H
    12      4     uint32 CRC-32 of the payload
    16      H     UTF-8 JSON header
    16+H    ...   payload: float64 little-endian arrays, C order, back to back

The header holds ``grid`` (``n_points``, ``lengths``), ``params`` (every
regularisation parameter), ``t``, ``step``, ``seed`` and ``fields``: a list of
``{"name", "parity", "shape"}`` entries in payload order. Parities are
strings of ``c``/``s`` per axis; vector and tensor fields carry leading
component axes in ``shape``.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .solver import RegularizationParams, State
from .spectral import Grid

MAGIC = b"LCGCKPT1"
_FIELDS = (("rho", "c"), ("u", "s"), ("m", "s"), ("c", "c"), ("q", "c"))


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, state: State, grid: Grid, params: RegularizationParams,
                    seed: int | None = None) -> Path:
    path = Path(path)
    arrays = []
    entries = []
    for name, par in _FIELDS:
        a = np.ascontiguousarray(getattr(state, name), dtype="<f8")
        arrays.append(a)
        entries.append({"name": name, "parity": par * grid.d, "shape": list(a.shape)})
    header = {
        "format": 1,
        "grid": {"n_points": list(grid.n_points), "lengths": list(grid.lengths)},
        "params": params.to_dict(),
        "t": state.t,
        "step": state.step,
        "seed": seed,
        "fields": entries,
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(a.tobytes() for a in arrays)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", len(hb), zlib.crc32(payload) & 0xFFFFFFFF))
        fh.write(hb)
        fh.write(payload)
    return path


def load_checkpoint(path) -> tuple[State, Grid, RegularizationParams, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    hlen, crc = struct.unpack("<II", raw[8:16])
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    payload = raw[16 + hlen:]
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise CheckpointError("checkpoint payload checksum mismatch")
    grid = Grid(tuple(header["grid"]["n_points"]), tuple(header["grid"]["lengths"]))
    params = RegularizationParams(**header["params"])
    out = {}
    pos = 0
    for e in header["fields"]:
        n = int(np.prod(e["shape"]))
        out[e["name"]] = np.frombuffer(payload, dtype="<f8", count=n, offset=pos).reshape(e["shape"]).copy()
        pos += 8 * n
    if pos != len(payload):
        raise CheckpointError("payload length does not match header")
    st = State(out["rho"], out["u"], out["m"], out["c"], out["q"], float(header["t"]),
               int(header["step"]))
    return st, grid, params, header


class CheckpointWriter:
    """Observer writing ``step_XXXXXXXX.bin`` every ``every`` steps."""

    def __init__(self, directory, grid: Grid, params: RegularizationParams, every: int,
                 seed: int | None = None, prefix: str = "step"):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.grid, self.params, self.every, self.seed = grid, params, int(every), seed
        self.prefix = prefix
        self.written: list[Path] = []

    def start(self, stp, st, gf):
        self._write(st)

    def __call__(self, info):
        if self.every > 0 and info.after.step % self.every == 0:
            self._write(info.after)

    def finish(self, stp, st, gf):
        if not self.written or self.written[-1].name != self._name(st):
            self._write(st)

    def _name(self, st):
        return f"{self.prefix}_{st.step:08d}.bin"

    def _write(self, st):
        self.written.append(save_checkpoint(self.dir / self._name(st), st, self.grid,
                                            self.params, self.seed))
