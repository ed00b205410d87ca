"""Binary chart containers, field dumps, JSON and CSV writers.

Every float written to text uses 17 significant digits so values survive a
round trip exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from pathlib import Path

import numpy as np

from .fields import WeightedField
from .geometry import (BolzaChart, Chart, DiskChart, build_bolza_octagon, build_flat_torus_patch,
                       build_hyperbolic_disk_patch)

CHART_MAGIC = b"CMCCHART"
FIELD_MAGIC = b"CMCFIELD"
FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def fmt_float(x: float) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def to_json(obj, indent: int = 2) -> str:
    """Deterministic JSON: sorted keys, 17-digit floats, non-finite floats as strings."""

    def enc(o, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{pad}{json.dumps(str(k))}: {enc(o[k], level + 1)}" for k in sorted(o, key=str)]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(o, (list, tuple)):
            if not o:
                return "[]"
            return "[\n" + ",\n".join(pad + enc(v, level + 1) for v in o) + "\n" + end + "]"
        if isinstance(o, (bool, np.bool_)):
            return "true" if o else "false"
        if o is None:
            return "null"
        if isinstance(o, (int, np.integer)):
            return str(int(o))
        if isinstance(o, (float, np.floating)):
            s = fmt_float(o)
            return s if math.isfinite(float(o)) else json.dumps(s)
        if isinstance(o, complex):
            return enc([o.real, o.imag], level)
        if isinstance(o, np.ndarray):
            return enc(o.tolist(), level)
        return json.dumps(str(o))

    return enc(obj, 0) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(to_json(obj))
    return path


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else
                         ("" if v is None else v) for v in row])
    return path


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# Charts
# ---------------------------------------------------------------------------


def chart_metadata(chart: Chart) -> dict:
    meta = {"backend": chart.backend_kind, "n": int(chart.n), "nodes": int(chart.size),
            "fingerprint": chart.fingerprint, "area": float(chart.area),
            "format_version": FORMAT_VERSION}
    if isinstance(chart, DiskChart):
        meta["r0"] = float(chart.meta["r0"])
    return meta


def _pairing_block(chart: Chart) -> np.ndarray:
    if not isinstance(chart, BolzaChart):
        return np.zeros((0, 8))
    rows = []
    for g in chart.deck:
        M = g.matrix
        rows.append([M[0, 0].real, M[0, 0].imag, M[0, 1].real, M[0, 1].imag,
                     M[1, 0].real, M[1, 0].imag, M[1, 1].real, M[1, 1].imag])
    return np.asarray(rows, dtype="<f8")


def save_chart(chart: Chart, path) -> tuple[Path, Path]:
    """Write the binary container and its JSON sidecar (``<path>.json``)."""
    path = Path(path)
    tag = chart.backend_kind.encode().ljust(16, b"\0")
    pair = _pairing_block(chart)
    with path.open("wb") as fh:
        fh.write(CHART_MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(tag)
        fh.write(struct.pack("<QQQ", chart.n, chart.size, pair.shape[0]))
        for arr in (chart.x, chart.y, chart.rho, chart.w, pair.ravel()):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    side = path.with_name(path.name + ".json")
    write_json(side, chart_metadata(chart))
    return path, side


def read_chart(path) -> dict:
    """Decode a chart container into plain arrays."""
    data = Path(path).read_bytes()
    if data[:8] != CHART_MAGIC:
        raise FormatError(f"{path}: not a chart container (bad magic)")
    (version,) = struct.unpack_from("<I", data, 8)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported chart format version {version}")
    tag = data[12:28].rstrip(b"\0").decode()
    n, size, npair = struct.unpack_from("<QQQ", data, 28)
    off = 52
    out = {"backend": tag, "n": n}
    for key in ("x", "y", "rho", "w"):
        out[key] = np.frombuffer(data, "<f8", size, off).copy()
        off += 8 * size
    out["pairings"] = np.frombuffer(data, "<f8", 8 * npair, off).reshape(npair, 8).copy()
    return out


def load_chart(path) -> Chart:
    """Rebuild the chart described by a container and check it matches bit for bit."""
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    chart = build_chart(meta["backend"], meta["n"], meta.get("r0", 0.5))
    raw = read_chart(path)
    for key in ("x", "y", "rho", "w"):
        if not np.array_equal(raw[key], getattr(chart, key)):
            raise FormatError(f"{path}: stored {key} differs from the rebuilt chart")
    return chart


def build_chart(backend: str, n: int, r0: float = 0.5) -> Chart:
    if backend == "torus-patch":
        return build_flat_torus_patch(n)
    if backend == "disk-patch":
        return build_hyperbolic_disk_patch(n, r0)
    if backend == "bolza":
        return build_bolza_octagon(n)
    raise ValueError(f"unknown backend {backend!r}")


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------


def dump_field(field: WeightedField, path, name: str) -> Path:
    """Header then row-major little-endian ``(re, im)`` float64 pairs."""
    path = Path(path)
    header = json.dumps({"name": name, "weight": list(field.weight),
                         "chart": field.chart.fingerprint, "n": int(field.chart.n),
                         "size": int(field.values.size), "real": bool(field.real)},
                        sort_keys=True).encode()
    vals = np.asarray(field.values)
    pairs = np.empty((vals.size, 2), dtype="<f8")
    pairs[:, 0] = vals.real
    pairs[:, 1] = vals.imag if np.iscomplexobj(vals) else 0.0
    with path.open("wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        fh.write(header)
        fh.write(pairs.tobytes())
    return path


def load_field(path, chart: Chart | None = None):
    """Return ``(header, values)``; with ``chart`` given, a :class:`WeightedField`."""
    data = Path(path).read_bytes()
    if data[:8] != FIELD_MAGIC:
        raise FormatError(f"{path}: not a field dump (bad magic)")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported field format version {version}")
    header = json.loads(data[16:16 + hlen])
    pairs = np.frombuffer(data, "<f8", 2 * header["size"], 16 + hlen).reshape(-1, 2)
    values = pairs[:, 0].copy() if header["real"] else pairs[:, 0] + 1j * pairs[:, 1]
    if chart is None:
        return header, values
    if header["chart"] != chart.fingerprint:
        raise FormatError(f"{path}: field belongs to chart {header['chart']}, "
                          f"not {chart.fingerprint}")
    return WeightedField(values, tuple(header["weight"]), chart, real=header["real"])


def field_table(chart: Chart, fields: dict) -> tuple[list, list]:
    """CSV header and rows: node index, coordinates, then re/im per field."""
    header = ["index", "x", "y"]
    cols = [np.arange(chart.size), chart.x, chart.y]
    for name, f in fields.items():
        vals = np.asarray(f.values if isinstance(f, WeightedField) else f)
        if np.iscomplexobj(vals):
            header += [f"{name}_re", f"{name}_im"]
            cols += [vals.real, vals.imag]
        else:
            header.append(name)
            cols.append(vals)
    rows = [[int(cols[0][i])] + [float(c[i]) for c in cols[1:]] for i in range(chart.size)]
    return header, rows
