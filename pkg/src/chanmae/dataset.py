"""Binary CSI dataset files with deterministic per-sample seeding.

Layout (all little-endian):
  header:  magic "CSID" | version u32 | count u64 | A u32 | K u32
           | name_len u32 | scenario name UTF-8 | global_seed u64
  record:  seed u64 | ue_x f32 | ue_y f32 | los u8 | carrier f32 | scs f32
           | real plane A*K f32 | imag plane A*K f32

Sample ``i`` is generated from ``sample_seed(global_seed, i)`` alone, so
any worker split produces byte-identical files.
"""

from __future__ import annotations

import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .channel import ScenarioParams, draw_paths, sample_geometry, synthesize_csi
from .errors import (
    BadMagicError,
    DatasetIntegrityError,
    TruncatedDatasetError,
    UnsupportedVersionError,
)

MAGIC = b"CSID"
FORMAT_VERSION = 1

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def sample_seed(global_seed: int, index: int) -> int:
    """SplitMix64 stream member: depends only on (global_seed, index)."""
    z = (global_seed + (index + 1) * _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


@dataclass
class CsiSample:
    """One channel snapshot plus the metadata needed to reproduce it."""

    h: np.ndarray  # complex64, (A, K)
    scenario: str
    carrier: float  # GHz
    scs: float  # kHz
    ue_xy: np.ndarray  # (2,) float
    los: bool
    seed: int


@dataclass
class DatasetHeader:
    version: int
    count: int
    num_antennas: int
    num_subcarriers: int
    scenario: str
    global_seed: int


def make_sample(params: ScenarioParams, seed: int) -> CsiSample:
    """Synthesize the sample owned by ``seed`` (draw order is fixed:
    geometry, then paths)."""
    rng = np.random.default_rng(seed)
    pos, los = sample_geometry(params, rng)
    paths = draw_paths(params, pos, los, rng)
    h = synthesize_csi(paths, params).astype(np.complex64)
    return CsiSample(
        h=h,
        scenario=params.descriptor,
        carrier=params.carrier_frequency,
        scs=params.subcarrier_spacing,
        ue_xy=pos,
        los=los,
        seed=seed,
    )


def _record_bytes(sample: CsiSample) -> bytes:
    head = struct.pack(
        "<QffBff",
        sample.seed,
        float(sample.ue_xy[0]),
        float(sample.ue_xy[1]),
        1 if sample.los else 0,
        sample.carrier,
        sample.scs,
    )
    real = np.ascontiguousarray(sample.h.real, dtype="<f4").tobytes()
    imag = np.ascontiguousarray(sample.h.imag, dtype="<f4").tobytes()
    return head + real + imag


def _worker_record(args: tuple[ScenarioParams, int, int]) -> bytes:
    params, global_seed, index = args
    return _record_bytes(make_sample(params, sample_seed(global_seed, index)))


def header_bytes(params: ScenarioParams, global_seed: int, count: int) -> bytes:
    name = params.descriptor.encode("utf-8")
    return (
        MAGIC
        + struct.pack("<IQ", FORMAT_VERSION, count)
        + struct.pack("<II", params.num_antennas, params.num_subcarriers)
        + struct.pack("<I", len(name))
        + name
        + struct.pack("<Q", global_seed)
    )


def generate_dataset(
    params: ScenarioParams,
    global_seed: int,
    count: int,
    output_path,
    workers: int = 1,
) -> DatasetHeader:
    """Write ``count`` samples to ``output_path``; byte-identical for any
    ``workers`` value."""
    params.validate()
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    with open(output_path, "wb") as f:
        f.write(header_bytes(params, global_seed, count))
        if workers <= 1 or count == 0:
            for i in range(count):
                f.write(_record_bytes(make_sample(params, sample_seed(global_seed, i))))
        else:
            jobs = ((params, global_seed, i) for i in range(count))
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for rec in pool.map(_worker_record, jobs, chunksize=max(1, count // (4 * workers))):
                    f.write(rec)
    return DatasetHeader(
        version=FORMAT_VERSION,
        count=count,
        num_antennas=params.num_antennas,
        num_subcarriers=params.num_subcarriers,
        scenario=params.descriptor,
        global_seed=global_seed,
    )


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.path = path
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise TruncatedDatasetError(f"{self.path}: file ends inside {what}")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out


def load_dataset(path) -> tuple[DatasetHeader, list[CsiSample]]:
    """Read a dataset file back; planes round-trip bit-exactly at f32."""
    with open(path, "rb") as f:
        blob = f.read()
    r = _Reader(blob, path)
    if r.take(4, "magic") != MAGIC:
        raise BadMagicError(f"{path}: not a CSID dataset file")
    (version,) = struct.unpack("<I", r.take(4, "version"))
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    (count,) = struct.unpack("<Q", r.take(8, "count"))
    a, k = struct.unpack("<II", r.take(8, "dimensions"))
    (name_len,) = struct.unpack("<I", r.take(4, "name length"))
    scenario = r.take(name_len, "scenario name").decode("utf-8")
    (global_seed,) = struct.unpack("<Q", r.take(8, "global seed"))
    header = DatasetHeader(
        version=version,
        count=count,
        num_antennas=a,
        num_subcarriers=k,
        scenario=scenario,
        global_seed=global_seed,
    )
    plane = a * k
    samples: list[CsiSample] = []
    for i in range(count):
        seed, x, y, los, carrier, scs = struct.unpack("<QffBff", r.take(25, f"record {i} metadata"))
        real = np.frombuffer(r.take(4 * plane, f"record {i} real plane"), dtype="<f4").reshape(a, k)
        imag = np.frombuffer(r.take(4 * plane, f"record {i} imag plane"), dtype="<f4").reshape(a, k)
        samples.append(
            CsiSample(
                h=(real + 1j * imag).astype(np.complex64),
                scenario=scenario,
                carrier=float(carrier),
                scs=float(scs),
                ue_xy=np.array([x, y], dtype=np.float64),
                los=bool(los),
                seed=seed,
            )
        )
    if r.pos != len(blob):
        raise DatasetIntegrityError(
            f"{path}: header declares {count} samples but {len(blob) - r.pos} bytes trail the payload"
        )
    return header, samples


def samples_to_arrays(samples: list[CsiSample]) -> dict[str, np.ndarray]:
    """Stack samples into training arrays: two-plane CSI, positions, LOS flags."""
    planes = np.stack([np.stack([s.h.real, s.h.imag]) for s in samples]).astype(np.float64)
    positions = np.stack([np.asarray(s.ue_xy, dtype=np.float64) for s in samples])
    los = np.array([s.los for s in samples], dtype=bool)
    return {"planes": planes, "positions": positions, "los": los}
