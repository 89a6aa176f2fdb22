"""Labeled dataset generation, persistence, and capture-file ingestion.

Sweeps an (angle, SNR) grid with a configurable number of records per
cell, drawing the obstacle range per record so estimators cannot key on
a fixed echo position. Record seeds derive from the master seed and the
cell indices, so generation order and worker count never change the
output.

Two binary containers are defined: ``EDDS`` dataset files (fixed-stride
records plus a trailing SHA-256, suitable for memory-mapped reads) and
``EDCF`` capture files holding externally recorded raw waveforms.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ApertureViolationError,
    ChecksumError,
    EmptyDatasetError,
    FileFormatError,
    InputError,
    RateMismatchError,
    ScenarioOutOfWindowError,
    UnsupportedVersionError,
)
from .signal_sim import (
    ArrayGeometry,
    ComplexBaseband,
    EchoNotFoundError,
    RealWaveform,
    SimConfig,
    SourceScenario,
    add_awgn,
    detect_echo_window,
    synthesize_echo,
    to_baseband,
    wavelength,
)

DATASET_MAGIC = b"EDDS"
CAPTURE_MAGIC = b"EDCF"
FORMAT_VERSION = 1

DEFAULT_ANGLES = tuple(float(a) for a in range(-60, 61, 10))
DEFAULT_SNRS = tuple(float(s) for s in range(-30, 21, 5))


def _default_geometry() -> ArrayGeometry:
    return ArrayGeometry.pair(wavelength(SimConfig()) / 2.0)


@dataclass(frozen=True)
class SweepSpec:
    """Grid of scenarios to simulate.

    The range interval default keeps the round trip inside the default
    8 ms listen window with the echo always inside a record-centered
    network crop.
    """

    angles_deg: tuple = DEFAULT_ANGLES
    snrs_db: tuple = DEFAULT_SNRS
    records_per_cell: int = 40
    geometry: ArrayGeometry = field(default_factory=_default_geometry)
    config: SimConfig = field(default_factory=SimConfig)
    range_interval_m: tuple = (0.5, 0.95)
    aperture_deg: float = 60.0
    master_seed: int = 0

    def __post_init__(self):
        if not self.angles_deg or not self.snrs_db:
            raise InputError("angle and SNR grids must be non-empty")
        if self.records_per_cell < 1:
            raise InputError("records_per_cell must be at least 1")
        if any(abs(a) > self.aperture_deg for a in self.angles_deg):
            raise ApertureViolationError(
                f"angles exceed the +-{self.aperture_deg} degree aperture")
        lo, hi = self.range_interval_m
        if not 0 < lo <= hi:
            raise InputError("range interval must satisfy 0 < lo <= hi")
        max_range = (self.config.listen_window - self.config.echo_duration) \
            * self.config.sound_speed / 2.0
        if hi > max_range:
            raise ScenarioOutOfWindowError(
                f"range up to {hi} m does not fit the listen window "
                f"(max {max_range:.3f} m)")

    @property
    def record_count(self) -> int:
        return len(self.angles_deg) * len(self.snrs_db) * self.records_per_cell


@dataclass
class DatasetRecord:
    """One labeled baseband record."""

    doa_deg: float
    snr_db: float
    range_m: float
    seed: int
    baseband: ComplexBaseband
    tof_s: float = math.nan       # detected time of flight, NaN if none


@dataclass
class Dataset:
    config: SimConfig
    geometry: ArrayGeometry
    records: list
    master_seed: int = 0

    def __len__(self) -> int:
        return len(self.records)

    def describe(self) -> str:
        return (f"{len(self.records)} records, "
                f"{self.geometry.num_elements} channels, seed "
                f"{self.master_seed}")


def record_seed(master_seed: int, angle_idx: int, snr_idx: int,
                rep: int) -> int:
    """Stable per-record seed, independent of generation order."""
    packed = struct.pack("<QQQQ", master_seed, angle_idx, snr_idx, rep)
    return int.from_bytes(hashlib.sha256(packed).digest()[:8], "little")


# scenario draws use a Philox channel id outside the sensor range
_SCENARIO_STREAM = 2**32


def _make_record(spec: SweepSpec, angle_idx: int, snr_idx: int,
                 rep: int) -> DatasetRecord:
    seed = record_seed(spec.master_seed, angle_idx, snr_idx, rep)
    rng = np.random.Generator(np.random.Philox(
        key=np.array([seed, _SCENARIO_STREAM], dtype=np.uint64)))
    lo, hi = spec.range_interval_m
    range_m = float(rng.uniform(lo, hi))
    scenario = SourceScenario(doa_deg=spec.angles_deg[angle_idx],
                              range_m=range_m,
                              snr_db=spec.snrs_db[snr_idx])
    wave = synthesize_echo(scenario, spec.geometry, spec.config)
    wave = add_awgn(wave, scenario.snr_db, seed)
    base = to_baseband(wave, spec.config)
    try:
        tof = detect_echo_window(base).tof_s
    except EchoNotFoundError:
        tof = math.nan
    return DatasetRecord(doa_deg=scenario.doa_deg, snr_db=scenario.snr_db,
                         range_m=range_m, seed=seed, baseband=base,
                         tof_s=tof)


def generate_dataset(spec: SweepSpec, workers: int = 1) -> Dataset:
    """All grid cells times records_per_cell, in deterministic order."""
    cells = [(ai, si, rep)
             for ai in range(len(spec.angles_deg))
             for si in range(len(spec.snrs_db))
             for rep in range(spec.records_per_cell)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_make_record_star,
                                    [(spec, *cell) for cell in cells],
                                    chunksize=32))
    else:
        records = [_make_record(spec, *cell) for cell in cells]
    return Dataset(config=spec.config, geometry=spec.geometry,
                   records=records, master_seed=spec.master_seed)


def _make_record_star(args):
    return _make_record(*args)


# --- persistence -----------------------------------------------------------

_RECORD_HEADER = struct.Struct("<dddQd")   # doa, snr, range, seed, tof


def _config_dict(config: SimConfig) -> dict:
    return {
        "carrier_freq": config.carrier_freq,
        "sound_speed": config.sound_speed,
        "sample_rate": config.sample_rate,
        "echo_duration": config.echo_duration,
        "listen_window": config.listen_window,
        "decimation_factor": config.decimation_factor,
        "rng_seed": config.rng_seed,
        "envelope": config.envelope,
    }


def save_dataset(dataset: Dataset, path) -> None:
    records = dataset.records
    channels = dataset.geometry.num_elements
    samples = records[0].baseband.samples_per_channel if records else 0
    header = {
        "config": _config_dict(dataset.config),
        "element_x": list(dataset.geometry.element_x),
        "master_seed": dataset.master_seed,
        "record_count": len(records),
        "channels": channels,
        "samples_per_channel": samples,
        "effective_rate": dataset.config.effective_rate,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    out = bytearray()
    out += DATASET_MAGIC
    out += struct.pack("<B", FORMAT_VERSION)
    out += struct.pack("<I", len(blob))
    out += blob
    for rec in records:
        if rec.baseband.data.shape != (channels, samples):
            raise InputError("records must share one payload shape")
        out += _RECORD_HEADER.pack(rec.doa_deg, rec.snr_db, rec.range_m,
                                   rec.seed, rec.tof_s)
        out += np.ascontiguousarray(rec.baseband.data,
                                    dtype="<c16").tobytes()
    out += hashlib.sha256(out).digest()
    Path(path).write_bytes(bytes(out))


def load_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < 4 + 1 + 4 + 32:
        raise FileFormatError(f"{path}: truncated dataset file")
    if raw[:4] != DATASET_MAGIC:
        raise FileFormatError(f"{path}: bad magic {raw[:4]!r}")
    if raw[4] != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"{path}: version {raw[4]}, expected {FORMAT_VERSION}")
    if hashlib.sha256(raw[:-32]).digest() != raw[-32:]:
        raise ChecksumError(f"{path}: checksum mismatch")
    (header_len,) = struct.unpack_from("<I", raw, 5)
    header_end = 9 + header_len
    header = json.loads(raw[9:header_end].decode())
    config = SimConfig(**header["config"])
    geometry = ArrayGeometry(element_x=tuple(header["element_x"]))
    channels = header["channels"]
    samples = header["samples_per_channel"]
    stride = _RECORD_HEADER.size + channels * samples * 16
    expected_end = header_end + header["record_count"] * stride
    if expected_end != len(raw) - 32:
        raise FileFormatError(f"{path}: payload length mismatch")

    records = []
    offset = header_end
    for _ in range(header["record_count"]):
        doa, snr, range_m, seed, tof = _RECORD_HEADER.unpack_from(raw, offset)
        offset += _RECORD_HEADER.size
        data = np.frombuffer(raw, dtype="<c16", count=channels * samples,
                             offset=offset).reshape(channels, samples).copy()
        offset += channels * samples * 16
        records.append(DatasetRecord(
            doa_deg=doa, snr_db=snr, range_m=range_m, seed=seed,
            baseband=ComplexBaseband(data=data,
                                     sample_rate=header["effective_rate"]),
            tof_s=tof))
    return Dataset(config=config, geometry=geometry, records=records,
                   master_seed=header["master_seed"])


def write_index_text(dataset: Dataset, path) -> None:
    """Plain-text audit listing of per-record labels."""
    lines = ["# index doa_deg snr_db range_m seed tof_s"]
    for i, rec in enumerate(dataset.records):
        lines.append(f"{i} {rec.doa_deg:.17g} {rec.snr_db:.17g} "
                     f"{rec.range_m:.17g} {rec.seed} {rec.tof_s:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def split(dataset: Dataset, train_fraction: float, seed: int):
    """Deterministic stratified train/test partition.

    Every (angle, SNR) cell with two or more records contributes to
    both sides; overall sizes are ceil(n * fraction) and the remainder.
    """
    if not 0.0 < train_fraction < 1.0:
        raise InputError("train_fraction must lie in (0, 1)")
    n = len(dataset.records)
    if n == 0:
        raise EmptyDatasetError("cannot split an empty dataset")
    target = math.ceil(n * train_fraction)

    cells = {}
    for idx, rec in enumerate(dataset.records):
        cells.setdefault((rec.doa_deg, rec.snr_db), []).append(idx)
    rng = np.random.default_rng(seed)

    # per-cell quota bounds keep every >= 2-record cell on both sides;
    # the global target is met whenever those bounds allow it
    floors, limits, quotas = {}, {}, {}
    for key in sorted(cells):
        size = len(cells[key])
        floors[key] = 1 if size >= 2 else 0
        limits[key] = size - 1 if size >= 2 else size
        quotas[key] = min(max(round(size * train_fraction), floors[key]),
                          limits[key])
    target = min(max(target, sum(floors.values())), sum(limits.values()))
    keys = sorted(cells, key=lambda k: (-len(cells[k]), k))
    i = 0
    while sum(quotas.values()) != target:
        key = keys[i % len(keys)]
        if sum(quotas.values()) < target and quotas[key] < limits[key]:
            quotas[key] += 1
        elif sum(quotas.values()) > target and quotas[key] > floors[key]:
            quotas[key] -= 1
        i += 1

    train_idx, test_idx = [], []
    for key in sorted(cells):
        members = list(cells[key])
        perm = rng.permutation(len(members))
        shuffled = [members[j] for j in perm]
        take = quotas[key]
        train_idx += shuffled[:take]
        test_idx += shuffled[take:]
    train_idx.sort()
    test_idx.sort()
    make = lambda idxs: Dataset(config=dataset.config,
                                geometry=dataset.geometry,
                                records=[dataset.records[i] for i in idxs],
                                master_seed=dataset.master_seed)
    return make(train_idx), make(test_idx)


# --- capture files ----------------------------------------------------------

def write_capture(path, wave: RealWaveform, geometry: ArrayGeometry,
                  annotation: str = "") -> None:
    """Persist a raw real waveform as an ``EDCF`` capture file."""
    header = {
        "sample_rate": wave.sample_rate,
        "channels": wave.channels,
        "frame_count": wave.samples_per_channel,
        "element_x": list(geometry.element_x),
        "annotation": annotation,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    out = bytearray()
    out += CAPTURE_MAGIC
    out += struct.pack("<B", FORMAT_VERSION)
    out += struct.pack("<I", len(blob))
    out += blob
    out += np.ascontiguousarray(wave.data, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(out))


def read_capture(path):
    """Raw waveform, geometry, and annotation from a capture file."""
    raw = Path(path).read_bytes()
    if len(raw) < 9:
        raise FileFormatError(f"{path}: truncated capture file")
    if raw[:4] != CAPTURE_MAGIC:
        raise FileFormatError(f"{path}: bad magic {raw[:4]!r}")
    if raw[4] != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"{path}: version {raw[4]}, expected {FORMAT_VERSION}")
    (header_len,) = struct.unpack_from("<I", raw, 5)
    header_end = 9 + header_len
    header = json.loads(raw[9:header_end].decode())
    channels = header["channels"]
    frames = header["frame_count"]
    expected = header_end + channels * frames * 8
    if expected != len(raw):
        raise FileFormatError(
            f"{path}: declared {frames} frames x {channels} channels does "
            f"not match payload size")
    data = np.frombuffer(raw, dtype="<f8", count=channels * frames,
                         offset=header_end).reshape(channels, frames).copy()
    wave = RealWaveform(data=data, sample_rate=header["sample_rate"])
    geometry = ArrayGeometry(element_x=tuple(header["element_x"]))
    return wave, geometry, header["annotation"]


def _parse_annotation(text: str) -> dict:
    values = {}
    for part in text.split(";"):
        part = part.strip()
        if not part or "=" not in part:
            continue
        key, val = part.split("=", 1)
        try:
            values[key.strip()] = float(val)
        except ValueError:
            pass
    return values


def ingest_capture(path, geometry: ArrayGeometry,
                   config: SimConfig) -> list:
    """Records from an externally captured waveform file.

    The declared sample rate must match the configuration; the stored
    geometry must match the expected one. Annotations of the form
    ``doa_deg=30;snr_db=10;range_m=1.5`` become labels, otherwise the
    label fields are NaN.
    """
    wave, file_geometry, annotation = read_capture(path)
    if wave.sample_rate != config.sample_rate:
        raise RateMismatchError(
            f"{path}: captured at {wave.sample_rate} Hz, config expects "
            f"{config.sample_rate} Hz")
    if file_geometry.element_x != geometry.element_x:
        raise InputError(
            f"{path}: capture geometry {file_geometry.element_x} does not "
            f"match expected {geometry.element_x}")
    base = to_baseband(wave, config)
    try:
        tof = detect_echo_window(base).tof_s
    except EchoNotFoundError:
        tof = math.nan
    labels = _parse_annotation(annotation)
    return [DatasetRecord(
        doa_deg=labels.get("doa_deg", math.nan),
        snr_db=labels.get("snr_db", math.nan),
        range_m=labels.get("range_m", math.nan),
        seed=0, baseband=base, tof_s=tof)]
