"""Labeled-sample generation, the PDN1 binary record format, and splits.

File layout: 4-byte magic ``PDN1``, then fixed-size records until EOF.
Each record is

    u16 rows, u16 cols            (grid dimensions, little endian)
    rows*cols*3 bytes             placement array, channel-major
    17 float64 LE                 stackup vector
    132 float32 LE                label (dB values)
    u32 crc32                     checksum of the record bytes above

Provenance (board seed lineage, scenario index) lives in the sidecar
manifest; record i belongs to board i // scenarios_per_board.
"""

from __future__ import annotations

import json
import multiprocessing
import struct
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .boardgen import (
    GRID_SIZE,
    N_CANDIDATE_PORTS,
    BoardCase,
    sample_board_shell,
    sample_decap_assignment,
)
from .circuit import FrequencyGrid
from .errors import NumericalFailureError, PdnForgeError, RecordFormatError
from .pipeline import labeled_sample, solve_board_ports

MAGIC = b"PDN1"
N_LABEL = 132
_HEAD = struct.Struct("<HH")
_CRC = struct.Struct("<I")
RECORD_SIZE = _HEAD.size + 3 * GRID_SIZE * GRID_SIZE + 17 * 8 + N_LABEL * 4 + _CRC.size

_MAX_BOARD_ATTEMPTS = 20


@dataclass
class DatasetRecord:
    placement: np.ndarray        # (3, 16, 16) uint8
    stackup_vec: np.ndarray      # (17,) float64
    label: np.ndarray            # (132,) float32
    board_seed: str = ""
    scenario_index: int = -1
    solver_version: str = __version__

    def __post_init__(self):
        self.placement = np.asarray(self.placement, dtype=np.uint8)
        self.stackup_vec = np.asarray(self.stackup_vec, dtype=np.float64)
        self.label = np.asarray(self.label, dtype=np.float32)
        if self.placement.shape != (3, GRID_SIZE, GRID_SIZE):
            raise ValueError("placement must be (3, 16, 16)")
        if self.stackup_vec.shape != (17,):
            raise ValueError("stackup vector must have 17 entries")
        if self.label.shape != (N_LABEL,) or not np.all(np.isfinite(self.label)):
            raise ValueError("label must be 132 finite values")


@dataclass
class GenerationConfig:
    n_boards: int
    scenarios_per_board: int
    seed: int
    worker_count: int = 1
    output: str = "dataset.pdn"
    boundary_target_mm: float = 5.0

    def __post_init__(self):
        if self.n_boards < 1 or self.scenarios_per_board < 1:
            raise ValueError("n_boards and scenarios_per_board must be >= 1")


# ---------------------------------------------------------------------------
# Record serialization
# ---------------------------------------------------------------------------

def record_to_bytes(rec: DatasetRecord) -> bytes:
    payload = (
        _HEAD.pack(GRID_SIZE, GRID_SIZE)
        + rec.placement.tobytes()
        + rec.stackup_vec.astype("<f8").tobytes()
        + rec.label.astype("<f4").tobytes()
    )
    return payload + _CRC.pack(zlib.crc32(payload))


def record_from_bytes(buf: bytes, index: int, offset: int) -> DatasetRecord:
    payload, (crc,) = buf[:-_CRC.size], _CRC.unpack(buf[-_CRC.size:])
    if zlib.crc32(payload) != crc:
        raise RecordFormatError("record checksum mismatch",
                                record_index=index, byte_offset=offset)
    rows, cols = _HEAD.unpack_from(payload, 0)
    if (rows, cols) != (GRID_SIZE, GRID_SIZE):
        raise RecordFormatError(f"unexpected grid dims {rows}x{cols}",
                                record_index=index, byte_offset=offset)
    pos = _HEAD.size
    placement = np.frombuffer(payload, dtype=np.uint8, count=3 * rows * cols,
                              offset=pos).reshape(3, rows, cols).copy()
    pos += 3 * rows * cols
    stackup = np.frombuffer(payload, dtype="<f8", count=17, offset=pos).copy()
    pos += 17 * 8
    label = np.frombuffer(payload, dtype="<f4", count=N_LABEL, offset=pos).copy()
    return DatasetRecord(placement=placement, stackup_vec=stackup, label=label)


def write_records(path, records) -> int:
    path = Path(path)
    count = 0
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for rec in records:
            fh.write(record_to_bytes(rec))
            count += 1
    return count


def read_records(path, attach_provenance: bool = True) -> list[DatasetRecord]:
    """Read every record; raises RecordFormatError on corruption/truncation,
    naming the last valid record index."""
    path = Path(path)
    records: list[DatasetRecord] = []
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise RecordFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        offset = len(MAGIC)
        index = 0
        while True:
            buf = fh.read(RECORD_SIZE)
            if not buf:
                break
            if len(buf) < RECORD_SIZE:
                raise RecordFormatError(
                    f"file truncated mid-record; last valid record index is {index - 1}",
                    record_index=index, byte_offset=offset)
            records.append(record_from_bytes(buf, index, offset))
            offset += RECORD_SIZE
            index += 1
    if attach_provenance:
        mpath = manifest_path(path)
        if mpath.exists():
            manifest = json.loads(mpath.read_text())
            spb = manifest["config"]["scenarios_per_board"]
            boards = manifest["boards"]
            for i, rec in enumerate(records):
                b = i // spb
                if b < len(boards):
                    rec.board_seed = boards[b]["seed_key"]
                    rec.scenario_index = i % spb
    return records


def manifest_path(dataset_path) -> Path:
    return Path(str(dataset_path) + ".manifest.json")


def split(records: list[DatasetRecord], test_count: int,
          seed: int) -> tuple[list[DatasetRecord], list[DatasetRecord]]:
    """Seeded permutation split into (train, test); disjoint and exhaustive."""
    if not 0 < test_count < len(records):
        raise ValueError(f"test_count must be in 1..{len(records) - 1}")
    perm = np.random.default_rng(seed).permutation(len(records))
    test_idx = set(perm[:test_count].tolist())
    train = [records[i] for i in range(len(records)) if i not in test_idx]
    test = [records[i] for i in perm[:test_count]]
    return train, test


def to_jsonl(records, path) -> None:
    """Human-readable debug export, one JSON object per record."""
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps({
                "board_seed": rec.board_seed,
                "scenario_index": rec.scenario_index,
                "placement": rec.placement.tolist(),
                "stackup_vec": rec.stackup_vec.tolist(),
                "label_db": [float(v) for v in rec.label],
            }) + "\n")


def load_arrays(records) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack records into float32 training arrays."""
    placement = np.stack([r.placement for r in records]).astype(np.float32)
    stackup = np.stack([r.stackup_vec for r in records]).astype(np.float32)
    labels = np.stack([r.label for r in records]).astype(np.float32)
    return placement, stackup, labels


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def _board_job(args) -> tuple[int, bytes, dict]:
    """Produce the serialized records of one board position.

    One Z-parameter solve per board; scenarios only reattach decaps.
    """
    seed, position, scenarios, target_mm = args
    failures = []
    for attempt in range(_MAX_BOARD_ATTEMPTS):
        seed_key = [seed, position, attempt]
        rng = np.random.default_rng(np.random.SeedSequence(seed_key))
        t0 = time.perf_counter()
        try:
            contour, mask, stackup, ports = sample_board_shell(rng)
            shell = BoardCase(contour=contour, mask=mask, stackup=stackup,
                              ports=ports,
                              decap_indices=(0,) * ports.n_decaps,
                              seed_info="/".join(map(str, seed_key)))
            t1 = time.perf_counter()
            zset = solve_board_ports(shell, FrequencyGrid.default(),
                                     target_len_mm=target_mm)
            t2 = time.perf_counter()
            blobs = []
            for s in range(scenarios):
                srng = np.random.default_rng(np.random.SeedSequence(seed_key + [s]))
                n_dec = int(srng.integers(0, N_CANDIDATE_PORTS + 1))
                assignment = sample_decap_assignment(srng, ports.n_decaps, n_dec)
                case = BoardCase(contour=contour, mask=mask, stackup=stackup,
                                 ports=ports, decap_indices=assignment,
                                 seed_info=shell.seed_info)
                sample = labeled_sample(case, zset)
                rec = DatasetRecord(placement=sample.placement,
                                    stackup_vec=sample.stackup_vec,
                                    label=sample.label)
                blobs.append(record_to_bytes(rec))
            t3 = time.perf_counter()
            meta = {
                "position": position,
                "seed_key": seed_key,
                "attempts": attempt + 1,
                "failures": failures,
                "timing": {"sample_s": t1 - t0, "solve_s": t2 - t1,
                           "scenarios_s": t3 - t2},
            }
            return position, b"".join(blobs), meta
        except (PdnForgeError, NumericalFailureError) as err:
            failures.append({"seed_key": seed_key, "error": str(err)})
    raise NumericalFailureError(
        f"board position {position} failed {_MAX_BOARD_ATTEMPTS} attempts: "
        f"{failures[-1]['error']}"
    )


def generate_dataset(config: GenerationConfig) -> dict:
    """Generate the labeled dataset and its manifest.

    Streams records to disk in board order (O(1) memory in record count);
    byte-identical output for identical config regardless of worker count.
    Returns the manifest dict.
    """
    out = Path(config.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    jobs = [(config.seed, b, config.scenarios_per_board, config.boundary_target_mm)
            for b in range(config.n_boards)]

    boards_meta: list[dict] = []
    wall0 = time.perf_counter()
    with open(out, "wb") as fh:
        fh.write(MAGIC)

        def consume(results):
            for position, blob, meta in results:
                fh.write(blob)
                boards_meta.append(meta)

        if config.worker_count <= 1:
            consume(map(_board_job, jobs))
        else:
            with multiprocessing.Pool(config.worker_count) as pool:
                consume(pool.imap(_board_job, jobs, chunksize=1))
    wall = time.perf_counter() - wall0

    timing = {"sample_s": 0.0, "solve_s": 0.0, "scenarios_s": 0.0}
    failures = []
    for meta in boards_meta:
        for k in timing:
            timing[k] += meta["timing"][k]
        failures.extend(meta.pop("failures"))

    manifest = {
        "tool": "pdnforge",
        "version": __version__,
        "format": "PDN1",
        "config": {
            "n_boards": config.n_boards,
            "scenarios_per_board": config.scenarios_per_board,
            "seed": config.seed,
            "worker_count": config.worker_count,
            "output": str(out),
            "boundary_target_mm": config.boundary_target_mm,
        },
        "record_count": config.n_boards * config.scenarios_per_board,
        "record_size": RECORD_SIZE,
        "z_solves": len(boards_meta),
        "wall_clock_s": wall,
        "timing": timing,
        "boards": boards_meta,
        "failures": failures,
    }
    manifest_path(out).write_text(json.dumps(manifest, indent=2))
    return manifest
