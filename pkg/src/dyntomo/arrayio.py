"""Bit-exact binary container and CSV writers.

Container layout (all integers little-endian unsigned 32-bit):

    bytes 0..7   magic ``b"DYNTOMO\\0"``
    u32          format version (currently 1)
    u32          payload kind (1 image, 2 flow, 3 sinogram, 4 schedule)
    u32          metadata length in bytes
    ...          metadata: UTF-8 JSON, sorted keys
    ...          payload: float64 little-endian values
    u32          CRC-32 of everything above

Writes go to a temporary file in the target directory followed by an atomic
rename, so a partial file never carries the magic trailer and never parses.
Floats are stored verbatim (binary) or via ``repr`` (CSV/JSON), so every
format round-trips exactly.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .protocols import AngleSchedule
from .radon import SinogramStack

MAGIC = b"DYNTOMO\x00"
VERSION = 1

KIND_IMAGE = 1
KIND_FLOW = 2
KIND_SINOGRAM = 3
KIND_SCHEDULE = 4

ANGLE_CONVENTION = ("theta measured from +x axis; ray direction "
                    "(cos t, sin t); offset s along (-sin t, cos t); "
                    "offsets centered on the grid; "
                    "row = angle_index * n_bins + bin_index")
NOISE_CONVENTION = ("gaussian, std = noise_level * max of the clean "
                    "high-resolution sinogram, added before bin averaging")


class DataFormatError(ValueError):
    """File is not a valid container (magic, version, size or CRC)."""


def _atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _pack(kind: int, meta: dict, payload: np.ndarray) -> bytes:
    meta_bytes = json.dumps(meta, sort_keys=True,
                            separators=(",", ":")).encode("utf-8")
    body = (MAGIC + struct.pack("<III", VERSION, kind, len(meta_bytes))
            + meta_bytes + np.ascontiguousarray(payload, dtype="<f8").tobytes())
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def _unpack(path: Path, expected_kind: int) -> tuple[dict, np.ndarray]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 24 or raw[:8] != MAGIC:
        raise DataFormatError(f"{path}: not a dyntomo container (bad magic)")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise DataFormatError(f"{path}: checksum mismatch (corrupt file)")
    version, kind, meta_len = struct.unpack("<III", raw[8:20])
    if version != VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    if kind != expected_kind:
        raise DataFormatError(
            f"{path}: kind {kind} where {expected_kind} was expected")
    meta_end = 20 + meta_len
    if meta_end > len(body):
        raise DataFormatError(f"{path}: truncated metadata")
    meta = json.loads(body[20:meta_end].decode("utf-8"))
    payload_bytes = body[meta_end:]
    if len(payload_bytes) % 8:
        raise DataFormatError(f"{path}: payload is not a float64 array")
    return meta, np.frombuffer(payload_bytes, dtype="<f8").astype(float)


def write_image_sequence(path, u: np.ndarray, extra_meta: dict | None = None) -> None:
    u = np.asarray(u, dtype=float)
    if u.ndim != 3:
        raise ValueError(f"image sequence must be (n_t, n, n), got {u.shape}")
    meta = {"shape": list(u.shape)}
    if extra_meta:
        meta.update(extra_meta)
    _atomic_write(Path(path), _pack(KIND_IMAGE, meta, u.reshape(-1)))


def read_image_sequence(path) -> np.ndarray:
    meta, payload = _unpack(Path(path), KIND_IMAGE)
    shape = tuple(meta["shape"])
    if payload.size != int(np.prod(shape)):
        raise DataFormatError(f"{path}: payload size does not match header shape")
    return payload.reshape(shape)


def write_flow_sequence(path, v: np.ndarray, extra_meta: dict | None = None) -> None:
    v = np.asarray(v, dtype=float)
    if v.ndim != 4 or v.shape[1] != 2:
        raise ValueError(f"flow sequence must be (n_t-1, 2, n, n), got {v.shape}")
    meta = {"shape": list(v.shape)}
    if extra_meta:
        meta.update(extra_meta)
    _atomic_write(Path(path), _pack(KIND_FLOW, meta, v.reshape(-1)))


def read_flow_sequence(path) -> np.ndarray:
    meta, payload = _unpack(Path(path), KIND_FLOW)
    shape = tuple(meta["shape"])
    if payload.size != int(np.prod(shape)):
        raise DataFormatError(f"{path}: payload size does not match header shape")
    return payload.reshape(shape)


def write_sinogram(path, stack: SinogramStack,
                   extra_meta: dict | None = None) -> None:
    counts = [int(np.ravel(a).size) for a in stack.angles]
    meta = {
        "n_t": stack.n_t,
        "n_bins": stack.n_bins,
        "angle_counts": counts,
        "noise_level": stack.noise_level,
        "seed": stack.seed,
        "angle_convention": ANGLE_CONVENTION,
        "noise_convention": NOISE_CONVENTION,
    }
    if extra_meta:
        meta.update(extra_meta)
    parts = []
    for a, vals in zip(stack.angles, stack.values):
        parts.append(np.ravel(np.asarray(a, dtype=float)))
        parts.append(np.ravel(np.asarray(vals, dtype=float)))
    payload = np.concatenate(parts) if parts else np.zeros(0)
    _atomic_write(Path(path), _pack(KIND_SINOGRAM, meta, payload))


def read_sinogram(path) -> SinogramStack:
    meta, payload = _unpack(Path(path), KIND_SINOGRAM)
    counts = [int(c) for c in meta["angle_counts"]]
    n_bins = int(meta["n_bins"])
    angles, values = [], []
    pos = 0
    for c in counts:
        angles.append(payload[pos:pos + c].copy())
        pos += c
        values.append(payload[pos:pos + c * n_bins].copy())
        pos += c * n_bins
    if pos != payload.size:
        raise DataFormatError(f"{path}: payload size does not match header counts")
    return SinogramStack(values=values, angles=angles, n_bins=n_bins,
                         noise_level=float(meta["noise_level"]),
                         seed=meta["seed"])


def write_schedule(path, schedule: AngleSchedule) -> None:
    counts = [int(a.size) for a in schedule.per_step]
    meta = {"label": schedule.label, "seed": schedule.seed,
            "angle_counts": counts, "angle_convention": ANGLE_CONVENTION}
    payload = (np.concatenate([np.ravel(a) for a in schedule.per_step])
               if counts else np.zeros(0))
    _atomic_write(Path(path), _pack(KIND_SCHEDULE, meta, payload))


def read_schedule(path) -> AngleSchedule:
    meta, payload = _unpack(Path(path), KIND_SCHEDULE)
    counts = [int(c) for c in meta["angle_counts"]]
    if sum(counts) != payload.size:
        raise DataFormatError(f"{path}: payload size does not match angle counts")
    per_step, pos = [], 0
    for c in counts:
        per_step.append(payload[pos:pos + c].copy())
        pos += c
    return AngleSchedule(per_step=tuple(per_step), label=meta["label"],
                         seed=meta["seed"])


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def write_trace_csv(path, energies, residuals, walls) -> None:
    lines = ["# r_main = l2(u - u_old) + l2(v - v_old), flat 2-norms",
             "iteration,joint_energy,r_main,wall_seconds"]
    for i, (e, r, w) in enumerate(zip(energies, residuals, walls), start=1):
        lines.append(f"{i},{_fmt(e)},{_fmt(r)},{_fmt(w)}")
    _atomic_write(Path(path), ("\n".join(lines) + "\n").encode("utf-8"))


def write_report_csv(path, label: str, report) -> None:
    lines = ["label,rel_l1,rel_l2,ssim",
             f"{label},{_fmt(report.rel_l1)},{_fmt(report.rel_l2)},"
             f"{_fmt(report.ssim)}"]
    _atomic_write(Path(path), ("\n".join(lines) + "\n").encode("utf-8"))


def write_report_json(path, label: str, report) -> None:
    doc = {
        "label": label,
        "rel_l1": report.rel_l1,
        "rel_l2": report.rel_l2,
        "ssim": report.ssim,
        "per_frame_ssim": list(report.per_frame_ssim),
        "variance_normalization": "population (1/N)",
    }
    _atomic_write(Path(path), (json.dumps(doc, sort_keys=True, indent=2)
                               + "\n").encode("utf-8"))


def write_table_csv(path, rows) -> None:
    """Rows: (label, fidelity, rel_l1, rel_l2, ssim, status) tuples."""
    lines = ["label,fidelity,rel_l1,rel_l2,ssim,status"]
    for label, fid, l1, l2, ss, status in rows:
        cells = [label, fid,
                 _fmt(l1) if l1 is not None else "",
                 _fmt(l2) if l2 is not None else "",
                 _fmt(ss) if ss is not None else "",
                 status]
        lines.append(",".join(cells))
    _atomic_write(Path(path), ("\n".join(lines) + "\n").encode("utf-8"))
