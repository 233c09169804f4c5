"""Hyperspectral cubes, the band protocol, patching, degradation and dataset splits.

A prepared dataset directory holds:

    cube.hsr          normalized, cropped and band-padded HR cube (HSR1)
    splits.parquet    one row per patch record
    dataset.json      protocol, scaling and band counts
    split_audit.txt   `key: value` summary of the split
"""

from __future__ import annotations

import functools
import math
import struct
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Literal, NamedTuple

import numpy as np
import pyarrow as pa
import pyarrow.parquet as pq
from pydantic import BaseModel, ConfigDict
from scipy import ndimage

from .config import DatasetSpec, workers_from_env
from .constants import CUBE_MAGIC, CUBE_VERSION, GROUP_SIZE, MAX_CUBE_ELEMENTS
from .errors import FormatError, ShapeError, SpecError
from .logging import make_component_logger
from .tensor import Array

emit_data_log = make_component_logger("data")

type SplitName = Literal["train", "val", "test"]

CUBE_HEADER = struct.Struct("<4sIIIII")
FLOAT32_LE = np.dtype("<f4")
CUBE_FILE = "cube.hsr"
SPLITS_FILE = "splits.parquet"
MANIFEST_FILE = "dataset.json"
AUDIT_FILE = "split_audit.txt"

SPLITS_SCHEMA = pa.schema([
    ("cube_index", pa.int32()),
    ("row", pa.int32()),
    ("col", pa.int32()),
    ("split", pa.string()),
    ("patch_size", pa.int32()),
    ("scale", pa.int32()),
])


class CubeScaling(BaseModel):
    model_config = ConfigDict(extra="forbid")

    minimum: float
    maximum: float

    @property
    def span(self) -> float:
        return self.maximum - self.minimum

    def denormalize(self, values: Array) -> Array:
        return (values.astype(np.float64) * self.span + self.minimum).astype(np.float32)


class HyperCube(BaseModel):
    """A C x H x W scene; `original_bands` counts the bands before padding."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    values: np.ndarray
    source: str = ""
    original_bands: int
    scaling: CubeScaling | None = None

    @property
    def bands(self) -> int:
        return int(self.values.shape[0])

    @property
    def height(self) -> int:
        return int(self.values.shape[1])

    @property
    def width(self) -> int:
        return int(self.values.shape[2])

    def with_values(self, values: Array, **changes: object) -> HyperCube:
        return self.model_copy(update={"values": values, **changes})


def make_cube(values: Array, *, source: str = "", original_bands: int | None = None) -> HyperCube:
    array = np.ascontiguousarray(values, dtype=np.float32)
    if array.ndim != 3:
        raise ShapeError(f"a cube needs (bands, height, width) values, got shape {array.shape}")
    return HyperCube(
        values=array,
        source=source,
        original_bands=original_bands if original_bands is not None else int(array.shape[0]),
    )


def save_cube(cube: HyperCube, path: Path) -> None:
    header = CUBE_HEADER.pack(
        CUBE_MAGIC, CUBE_VERSION, cube.bands, cube.height, cube.width, cube.original_bands
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    staging = path.with_name(path.name + ".tmp")
    with staging.open("wb") as handle:
        _ = handle.write(header)
        _ = handle.write(np.ascontiguousarray(cube.values, dtype=FLOAT32_LE).tobytes())
    _ = staging.replace(path)


def load_cube(path: Path) -> HyperCube:
    if not path.is_file():
        raise FileNotFoundError(f"cube not found: {path}")
    payload = path.read_bytes()
    if len(payload) < CUBE_HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(payload)} bytes)")
    magic, version, bands, height, width, original = CUBE_HEADER.unpack_from(payload)
    if magic != CUBE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {CUBE_MAGIC!r}")
    if version != CUBE_VERSION:
        raise FormatError(f"{path}: unsupported cube version {version}")
    if 0 in (bands, height, width):
        raise FormatError(f"{path}: zero dimension in {bands}x{height}x{width}")
    elements = bands * height * width
    if elements > MAX_CUBE_ELEMENTS:
        raise FormatError(f"{path}: {elements} elements exceed the {MAX_CUBE_ELEMENTS} limit")
    if not 1 <= original <= bands:
        raise FormatError(f"{path}: original band count {original} outside 1..{bands}")
    expected = CUBE_HEADER.size + elements * FLOAT32_LE.itemsize
    if len(payload) != expected:
        raise FormatError(f"{path}: size {len(payload)} bytes, header implies {expected}")
    values = np.frombuffer(payload, dtype=FLOAT32_LE, offset=CUBE_HEADER.size)
    return HyperCube(
        values=values.astype(np.float32).reshape(bands, height, width),
        source=path.stem,
        original_bands=int(original),
    )


def normalize(cube: HyperCube) -> HyperCube:
    """Global min-max scaling to [0, 1]; the scaling is kept for inversion."""
    minimum = float(cube.values.min())
    maximum = float(cube.values.max())
    if not maximum > minimum:
        raise SpecError(f"cannot normalize a constant cube (all values {minimum})")
    values = (cube.values.astype(np.float64) - minimum) / (maximum - minimum)
    return cube.with_values(
        values.astype(np.float32),
        scaling=CubeScaling(minimum=minimum, maximum=maximum),
    )


def pad_bands(cube: HyperCube, target: int, group_size: int = GROUP_SIZE) -> HyperCube:
    """Repeat the last band until the cube has `target` bands."""
    missing = target - cube.bands
    if missing < 0:
        raise SpecError(f"pad target {target} is below the band count {cube.bands}")
    if missing >= group_size:
        raise SpecError(
            f"pad target {target} adds {missing} bands; at most {group_size - 1} are allowed"
        )
    if missing == 0:
        return cube
    duplicates = np.repeat(cube.values[-1:], missing, axis=0)
    return cube.with_values(np.concatenate([cube.values, duplicates], axis=0))


def padded_band_count(bands: int, group_size: int = GROUP_SIZE) -> int:
    return math.ceil(bands / group_size) * group_size


def group_bands(values: Array, group_size: int = GROUP_SIZE) -> Array:
    """(C, H, W) -> (C / G, G, H, W) contiguous band groups."""
    if values.ndim != 3:
        raise ShapeError(f"group_bands expects (bands, height, width), got shape {values.shape}")
    bands = values.shape[0]
    if bands % group_size:
        raise SpecError(f"{bands} bands do not split into groups of {group_size}")
    return values.reshape(bands // group_size, group_size, *values.shape[1:])


def ungroup_bands(groups: Array, original_bands: int) -> Array:
    """(n, G, H, W) -> (original, H, W), dropping the padded tail."""
    if groups.ndim != 4:
        raise ShapeError(f"ungroup_bands expects (groups, G, height, width), got {groups.shape}")
    flat = groups.reshape(groups.shape[0] * groups.shape[1], *groups.shape[2:])
    if original_bands > flat.shape[0]:
        raise ShapeError(f"cannot recover {original_bands} bands from {flat.shape[0]}")
    return flat[:original_bands]


def crop_offsets(height: int, width: int, size: int) -> tuple[int, int]:
    if size > height or size > width:
        raise SpecError(f"crop size {size} exceeds the {height}x{width} scene")
    return (height - size) // 2, (width - size) // 2


def center_crop(cube: HyperCube, size: int) -> HyperCube:
    top, left = crop_offsets(cube.height, cube.width, size)
    emit_data_log("cube.crop", size=size, top=top, left=left)
    window = cube.values[:, top : top + size, left : left + size]
    return cube.with_values(np.ascontiguousarray(window))


def patch_origins(height: int, width: int, patch_size: int, stride: int) -> list[tuple[int, int]]:
    if stride < 1:
        raise SpecError(f"stride must be at least 1, got {stride}")
    rows = range(0, height - patch_size + 1, stride)
    cols = range(0, width - patch_size + 1, stride)
    return [(row, col) for row in rows for col in cols]


def extract_patches(cube: HyperCube, patch_size: int, stride: int) -> list[tuple[int, int]]:
    """Top-left origins of every window that fits; empty when the scene is too small."""
    return patch_origins(cube.height, cube.width, patch_size, stride)


def cubic_kernel(distance: Array) -> Array:
    magnitude = np.abs(distance)
    inner = 1.5 * magnitude**3 - 2.5 * magnitude**2 + 1.0
    outer = -0.5 * magnitude**3 + 2.5 * magnitude**2 - 4.0 * magnitude + 2.0
    return np.where(magnitude <= 1.0, inner, np.where(magnitude < 2.0, outer, 0.0))


@functools.lru_cache(maxsize=64)
def bicubic_matrix(in_size: int, out_size: int) -> Array:
    """(out, in) resampling matrix: Catmull-Rom, half-pixel centres, clamped edges.

    When shrinking, the kernel is stretched by the reduction factor so it also
    acts as the anti-aliasing filter.
    """
    factor = out_size / in_size
    stretch = min(factor, 1.0)
    support = 4.0 / stretch
    centres = (np.arange(out_size, dtype=np.float64) + 0.5) / factor - 0.5
    taps = int(math.ceil(support)) + 2
    first = np.floor(centres - support / 2.0).astype(np.int64)
    indices = first[:, None] + np.arange(taps)[None, :]
    weights = cubic_kernel((centres[:, None] - indices) * stretch)
    weights /= weights.sum(axis=1, keepdims=True)
    matrix = np.zeros((out_size, in_size), dtype=np.float64)
    rows = np.repeat(np.arange(out_size), taps)
    np.add.at(matrix, (rows, np.clip(indices, 0, in_size - 1).reshape(-1)), weights.reshape(-1))
    matrix.setflags(write=False)
    return matrix


def bicubic_resize(values: Array, height: int, width: int) -> Array:
    """Resample the last two axes to (height, width)."""
    if values.shape[-2:] == (height, width):
        return np.array(values, dtype=np.float32)
    rows = bicubic_matrix(values.shape[-2], height)
    cols = bicubic_matrix(values.shape[-1], width)
    resized = np.matmul(np.matmul(rows, values.astype(np.float64)), cols.T)
    return np.ascontiguousarray(resized, dtype=np.float32)


def degrade(hr: Array, scale: int) -> Array:
    """Bicubic downsampling by an integer factor, applied per band."""
    height, width = hr.shape[-2:]
    if height % scale or width % scale:
        raise SpecError(f"{height}x{width} patch is not divisible by scale {scale}")
    if scale == 1:
        return np.array(hr, dtype=np.float32)
    return bicubic_resize(hr, height // scale, width // scale)


class PatchRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    cube_index: int
    row: int
    col: int
    split: SplitName
    patch_size: int
    scale: int

    def window(self) -> tuple[slice, slice]:
        return (
            slice(self.row, self.row + self.patch_size),
            slice(self.col, self.col + self.patch_size),
        )


class PatchPair(NamedTuple):
    hr: Array
    lr: Array


def overlap_pixels(a: PatchRecord, b: PatchRecord) -> int:
    if a.cube_index != b.cube_index:
        return 0
    rows = min(a.row + a.patch_size, b.row + b.patch_size) - max(a.row, b.row)
    cols = min(a.col + a.patch_size, b.col + b.patch_size) - max(a.col, b.col)
    return max(0, rows) * max(0, cols)


def make_splits(cubes: Sequence[HyperCube], spec: DatasetSpec, seed: int) -> list[PatchRecord]:
    """Test window at the configured origin, overlapping windows dropped, rest shuffled."""
    rng = np.random.default_rng(seed)
    records: list[PatchRecord] = []
    size = spec.patch_size
    for cube_index, cube in enumerate(cubes):
        row, col = spec.test_origin
        if row + size > cube.height or col + size > cube.width:
            raise SpecError(
                f"test window at ({row}, {col}) of size {size} lies outside the "
                f"{cube.height}x{cube.width} scene"
            )
        test = PatchRecord(
            cube_index=cube_index, row=row, col=col, split="test", patch_size=size, scale=spec.scale
        )
        candidates = [
            PatchRecord(
                cube_index=cube_index,
                row=r,
                col=c,
                split="train",
                patch_size=size,
                scale=spec.scale,
            )
            for r, c in extract_patches(cube, size, spec.stride)
        ]
        kept = [record for record in candidates if overlap_pixels(record, test) == 0]
        if len(kept) < 2:
            raise SpecError(
                f"only {len(kept)} windows remain outside the test window; need at least 2"
            )
        order = rng.permutation(len(kept))
        val_count = min(len(kept) - 1, max(1, math.ceil(spec.val_fraction * len(kept))))
        shuffled = [kept[int(index)] for index in order]
        records.append(test)
        records.extend(
            record.model_copy(update={"split": "val"}) for record in shuffled[:val_count]
        )
        records.extend(shuffled[val_count:])
        emit_data_log(
            "split.cube",
            cube_index=cube_index,
            windows=len(candidates),
            dropped=len(candidates) - len(kept),
            val=val_count,
            train=len(kept) - val_count,
        )
    return records


class SplitAudit(BaseModel):
    train: int
    val: int
    test: int
    test_origins: list[tuple[int, int]]
    overlap_pixels: int

    def to_text(self) -> str:
        origins = " ".join(f"{row},{col}" for row, col in self.test_origins)
        lines = [
            f"train: {self.train}",
            f"val: {self.val}",
            f"test: {self.test}",
            f"test_origins: {origins}",
            f"overlap_pixels: {self.overlap_pixels}",
        ]
        return "\n".join(lines) + "\n"


def audit_splits(records: Sequence[PatchRecord]) -> SplitAudit:
    tests = [record for record in records if record.split == "test"]
    others = [record for record in records if record.split != "test"]
    overlap = sum(overlap_pixels(test, other) for test in tests for other in others)
    audit = SplitAudit(
        train=sum(record.split == "train" for record in records),
        val=sum(record.split == "val" for record in records),
        test=len(tests),
        test_origins=[(record.row, record.col) for record in tests],
        overlap_pixels=overlap,
    )
    emit_data_log("split.audit", **audit.model_dump(exclude={"test_origins"}))
    return audit


def materialize(record: PatchRecord, cube: HyperCube) -> PatchPair:
    rows, cols = record.window()
    hr = np.ascontiguousarray(cube.values[:, rows, cols], dtype=np.float32)
    return PatchPair(hr=hr, lr=degrade(hr, record.scale))


def materialize_patches(
    records: Sequence[PatchRecord],
    cubes: Sequence[HyperCube],
    workers: int | None = None,
) -> list[PatchPair]:
    """HR/LR pairs in record order; degradation runs on a thread pool."""
    if not records:
        return []
    pool_size = workers if workers is not None else workers_from_env()
    with ThreadPoolExecutor(max_workers=max(1, pool_size)) as pool:
        return list(pool.map(lambda record: materialize(record, cubes[record.cube_index]), records))


def synthetic_cube(
    bands: int,
    height: int,
    width: int,
    *,
    seed: int = 0,
    components: int = 4,
    spatial_sigma: float = 2.0,
    spectral_sigma: float = 4.0,
) -> HyperCube:
    """Band-correlated filtered noise: smooth spatial fields mixed by smooth spectra."""
    rng = np.random.default_rng(seed)
    fields = ndimage.gaussian_filter(
        rng.standard_normal((components, height, width)),
        sigma=(0.0, spatial_sigma, spatial_sigma),
        mode="reflect",
    )
    spectra = ndimage.gaussian_filter1d(
        rng.standard_normal((bands, components)), sigma=spectral_sigma, axis=0, mode="nearest"
    )
    mixed = np.tensordot(spectra, fields, axes=([1], [0]))
    offset = ndimage.gaussian_filter1d(rng.random(bands), sigma=spectral_sigma, mode="nearest")
    values = mixed + 2.0 * offset[:, None, None]
    return make_cube(values, source=f"synthetic-{seed}")


class DatasetManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    source: str
    spec: DatasetSpec
    scaling: CubeScaling
    original_bands: int
    padded_bands: int
    height: int
    width: int


class PreparedData(BaseModel):
    """Everything the trainer needs: the protocol, the prepared cubes and patch records."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    spec: DatasetSpec
    cubes: list[HyperCube]
    records: list[PatchRecord]

    def split(self, name: SplitName) -> list[PatchRecord]:
        return [record for record in self.records if record.split == name]

    @property
    def original_bands(self) -> int:
        return self.cubes[0].original_bands

    @property
    def padded_bands(self) -> int:
        return self.cubes[0].bands


def prepare_cube(cube: HyperCube, spec: DatasetSpec) -> HyperCube:
    if spec.expected_bands is not None and cube.original_bands != spec.expected_bands:
        raise SpecError(
            f"{spec.name} expects {spec.expected_bands} bands, cube has {cube.original_bands}"
        )
    if spec.crop_size is not None:
        cube = center_crop(cube, spec.crop_size)
    cube = normalize(cube)
    target = spec.pad_target or padded_band_count(cube.bands, spec.group_size)
    return pad_bands(cube, target, spec.group_size)


def build_dataset(cube: HyperCube, spec: DatasetSpec) -> PreparedData:
    prepared = prepare_cube(cube, spec)
    records = make_splits([prepared], spec, spec.seed)
    return PreparedData(spec=spec, cubes=[prepared], records=records)


def records_table(records: Sequence[PatchRecord]) -> pa.Table:
    return pa.Table.from_pylist(
        [record.model_dump() for record in records],
        schema=SPLITS_SCHEMA,
    )


def write_prepared(data: PreparedData, out_dir: Path) -> SplitAudit:
    if len(data.cubes) != 1:
        raise SpecError("a prepared directory holds exactly one scene")
    cube = data.cubes[0]
    if cube.scaling is None:
        raise SpecError("prepared cubes must be normalized")
    out_dir.mkdir(parents=True, exist_ok=True)
    save_cube(cube, out_dir / CUBE_FILE)
    pq.write_table(records_table(data.records), out_dir / SPLITS_FILE)
    manifest = DatasetManifest(
        source=cube.source,
        spec=data.spec,
        scaling=cube.scaling,
        original_bands=cube.original_bands,
        padded_bands=cube.bands,
        height=cube.height,
        width=cube.width,
    )
    _ = (out_dir / MANIFEST_FILE).write_text(manifest.model_dump_json(indent=2) + "\n")
    audit = audit_splits(data.records)
    _ = (out_dir / AUDIT_FILE).write_text(audit.to_text())
    emit_data_log("dataset.write", path=str(out_dir), records=len(data.records))
    return audit


def load_prepared(data_dir: Path) -> PreparedData:
    manifest_path = data_dir / MANIFEST_FILE
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no {MANIFEST_FILE} in {data_dir}; run `ddsr prepare` first")
    try:
        manifest = DatasetManifest.model_validate_json(manifest_path.read_text())
    except ValueError as error:
        raise FormatError(f"{manifest_path}: {error}") from error
    cube = load_cube(data_dir / CUBE_FILE)
    if (cube.bands, cube.height, cube.width) != (
        manifest.padded_bands,
        manifest.height,
        manifest.width,
    ):
        raise FormatError(f"{data_dir}: cube dimensions disagree with {MANIFEST_FILE}")
    cube = cube.model_copy(update={"source": manifest.source, "scaling": manifest.scaling})
    splits_path = data_dir / SPLITS_FILE
    if not splits_path.is_file():
        raise FileNotFoundError(f"missing {SPLITS_FILE} in {data_dir}")
    rows = pq.read_table(splits_path, schema=SPLITS_SCHEMA).to_pylist()
    records = [PatchRecord.model_validate(row) for row in rows]
    return PreparedData(spec=manifest.spec, cubes=[cube], records=records)
