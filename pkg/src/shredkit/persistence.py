"""Binary persistence for SVD bases and model checkpoints.

Same primitive layout as the snapshot container (little-endian u16/u64
headers, float64 payloads) under distinct magics, so `inspect` can identify
any artifact by its first four bytes.
"""

from __future__ import annotations

import struct

import numpy as np

from .compression import SvdBasis
from .datamodel import FieldRange, MinMaxFieldScaler, _read_exact
from .errors import DimensionError, FormatError
from .network import ShredModel
from .report_io import write_keyvalues

BASIS_MAGIC = b"SHRB"
MODEL_MAGIC = b"SHRM"
VERSION = 1

_U16 = struct.Struct("<H")
_U64 = struct.Struct("<Q")


def _write_array(fh, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.float64)
    fh.write(_U64.pack(arr.ndim))
    for extent in arr.shape:
        fh.write(_U64.pack(extent))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_array(fh, what: str) -> np.ndarray:
    (ndim,) = _U64.unpack(_read_exact(fh, 8, f"{what} rank"))
    shape = tuple(
        _U64.unpack(_read_exact(fh, 8, f"{what} shape"))[0] for _ in range(ndim)
    )
    count = int(np.prod(shape)) if shape else 1
    payload = fh.read(8 * count)
    if len(payload) != 8 * count:
        raise DimensionError(
            f"{what}: header declares {count} values but payload holds {len(payload) // 8}"
        )
    return np.frombuffer(payload, dtype="<f8").reshape(shape)


def _write_str(fh, text: str) -> None:
    raw = text.encode("utf-8")
    fh.write(_U64.pack(len(raw)))
    fh.write(raw)


def _read_str(fh, what: str) -> str:
    (length,) = _U64.unpack(_read_exact(fh, 8, f"{what} length"))
    return _read_exact(fh, length, what).decode("utf-8")


def save_bases(bases: dict[str, SvdBasis], path) -> None:
    with open(path, "wb") as fh:
        fh.write(BASIS_MAGIC)
        fh.write(_U16.pack(VERSION))
        fh.write(_U64.pack(len(bases)))
        for name, basis in bases.items():
            _write_str(fh, name)
            fh.write(_U64.pack(basis.rank))
            _write_array(fh, basis.modes)
            _write_array(fh, basis.singular_values)


def load_bases(path) -> dict[str, SvdBasis]:
    bases = {}
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != BASIS_MAGIC:
            raise FormatError("bad magic; not a basis container")
        (version,) = _U16.unpack(_read_exact(fh, 2, "version"))
        if version != VERSION:
            raise FormatError(f"unsupported basis container version {version}")
        (count,) = _U64.unpack(_read_exact(fh, 8, "basis count"))
        for _ in range(count):
            name = _read_str(fh, "field name")
            (rank,) = _U64.unpack(_read_exact(fh, 8, "rank"))
            modes = _read_array(fh, f"modes of {name!r}")
            sv = _read_array(fh, f"singular values of {name!r}")
            bases[name] = SvdBasis(name, modes, sv, int(rank))
    return bases


def save_model(model: ShredModel, path, extra: dict | None = None) -> None:
    """Checkpoint: shape header, parameter blobs, then key=value echo lines."""
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(_U16.pack(VERSION))
        for value in (model.n_sensors, model.n_outputs, model.lags,
                      model.hidden_size, model.decoder_sizes[0],
                      model.decoder_sizes[1], model.seed):
            fh.write(_U64.pack(value))
        fh.write(_U64.pack(len(model.params)))
        for name in sorted(model.params):
            _write_str(fh, name)
            _write_array(fh, model.params[name])
        _write_array(fh, model.output_shift)
        _write_array(fh, model.output_scale)
        echo = dict(extra or {})
        _write_str(fh, "\n".join(f"{k} = {v}" for k, v in echo.items()))


def load_model(path) -> tuple[ShredModel, dict[str, str]]:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MODEL_MAGIC:
            raise FormatError("bad magic; not a model checkpoint")
        (version,) = _U16.unpack(_read_exact(fh, 2, "version"))
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        header = [
            _U64.unpack(_read_exact(fh, 8, "shape header"))[0] for _ in range(7)
        ]
        n_sensors, n_outputs, lags, hidden, d1, d2, seed = (int(v) for v in header)
        model = ShredModel(n_sensors, n_outputs, lags, hidden, (d1, d2), seed)
        (n_params,) = _U64.unpack(_read_exact(fh, 8, "parameter count"))
        params = {}
        for _ in range(n_params):
            name = _read_str(fh, "parameter name")
            params[name] = _read_array(fh, f"parameter {name!r}")
        if set(params) != set(model.params):
            raise DimensionError("checkpoint parameters do not match the model layout")
        for name, arr in params.items():
            if arr.shape != model.params[name].shape:
                raise DimensionError(
                    f"parameter {name!r} has shape {arr.shape}, "
                    f"expected {model.params[name].shape}"
                )
        model.set_params_from(params)
        model.output_shift[...] = _read_array(fh, "output shift")
        model.output_scale[...] = _read_array(fh, "output scale")
        echo_text = _read_str(fh, "config echo")
    echo = {}
    for line in echo_text.splitlines():
        if " = " in line:
            key, value = line.split(" = ", 1)
            echo[key] = value
    return model, echo


def save_scaler(scaler: MinMaxFieldScaler, path) -> None:
    pairs = []
    for name, r in scaler.ranges_.items():
        pairs.append((f"{name}.min", r.lo))
        pairs.append((f"{name}.max", r.hi))
    write_keyvalues(path, pairs)


def load_scaler(path) -> MinMaxFieldScaler:
    ranges: dict[str, dict[str, float]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, value = line.split(" = ", 1)
            field, bound = key.rsplit(".", 1)
            ranges.setdefault(field, {})[bound] = float(value)
    scaler = MinMaxFieldScaler()
    scaler.ranges_ = {
        name: FieldRange(lo=bounds["min"], hi=bounds["max"])
        for name, bounds in ranges.items()
    }
    return scaler
