"""Binary interchange formats and scene-directory persistence.

All multi-byte values are little-endian; every format opens with a
4-byte magic that carries the version. Readers check magic, header
consistency and exact payload length, and reject anything that
disagrees. Round-trips are lossless (arrays are stored as float32, so
float32-representable inputs return bitwise equal).

Formats:
  gaussians.bin   "LGF1"  scene bundle
  t_%04d.rid      "RID1"  per-frame region-id raster (uint16, 0 = none)
  bank.bin        "BNK1"  region feature bank
  *.frs           "FRS1"  feature raster with coverage
  codec.bin       "CDC1"  codec parameters with a layer manifest header
  features.bin    "RFE1"  per-(region, frame) embeddings
  *.pgm / *.ppm           binary grayscale masks / RGB images
  manifest.json           scene inventory, cameras, dims
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .codec import CodecParams
from .features import (
    BankEntry,
    FrameEmbedding,
    FeatureRaster,
    RegionEmbeddingTable,
    RegionFeatureBank,
)
from .scene import CameraPose, Frame, FrameSequence, GaussianBundle

MAGIC_GAUSSIANS = b"LGF1"
MAGIC_REGION_IDS = b"RID1"
MAGIC_BANK = b"BNK1"
MAGIC_RASTER = b"FRS1"
MAGIC_CODEC = b"CDC1"
MAGIC_FEATURES = b"RFE1"

MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "splat-scene-v1"


class FormatError(ValueError):
    """Bad magic, malformed header, or payload/header disagreement."""


class _Reader:
    def __init__(self, data: bytes, name: str):
        self.data = data
        self.pos = 0
        self.name = name

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"{self.name}: truncated payload "
                f"(needed {n} bytes at offset {self.pos}, have {len(self.data)})"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def magic(self, expected: bytes) -> None:
        got = self.take(4)
        if got != expected:
            raise FormatError(
                f"{self.name}: bad magic {got!r}, expected {expected!r}"
            )

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        raw = self.take(dt.itemsize * count)
        return np.frombuffer(raw, dtype=dt).copy()

    def done(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(
                f"{self.name}: {len(self.data) - self.pos} trailing bytes"
            )


def _f32(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


# -- gaussians ---------------------------------------------------------------


def write_gaussians(path: str | Path, bundle: GaussianBundle) -> None:
    parts = [
        MAGIC_GAUSSIANS,
        struct.pack(
            "<IIB",
            bundle.count,
            bundle.latent_dim,
            1 if bundle.instance_labels is not None else 0,
        ),
        _f32(bundle.positions),
        _f32(bundle.covariances),
        _f32(bundle.colors),
        _f32(bundle.opacities),
        _f32(bundle.embeddings),
    ]
    if bundle.instance_labels is not None:
        parts.append(np.ascontiguousarray(bundle.instance_labels, dtype="<i4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_gaussians(path: str | Path) -> GaussianBundle:
    r = _Reader(Path(path).read_bytes(), str(path))
    r.magic(MAGIC_GAUSSIANS)
    count = r.u32()
    latent_dim = r.u32()
    has_labels = r.u8()
    if has_labels not in (0, 1):
        raise FormatError(f"{path}: has_labels flag must be 0/1, got {has_labels}")
    positions = r.array("<f4", count * 3).reshape(count, 3)
    covariances = r.array("<f4", count * 6).reshape(count, 6)
    colors = r.array("<f4", count * 3).reshape(count, 3)
    opacities = r.array("<f4", count)
    embeddings = r.array("<f4", count * latent_dim).reshape(count, latent_dim)
    labels = r.array("<i4", count) if has_labels else None
    r.done()
    return GaussianBundle(
        positions=positions.astype(np.float64),
        covariances=covariances.astype(np.float64),
        colors=colors.astype(np.float64),
        opacities=opacities.astype(np.float64),
        embeddings=embeddings.astype(np.float64),
        instance_labels=None if labels is None else labels.astype(np.int64),
    )


# -- region-id rasters -------------------------------------------------------


def write_region_ids(path: str | Path, grid: np.ndarray) -> None:
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ValueError(f"region-id grid must be 2-d, got {grid.shape}")
    if grid.min() < 0 or grid.max() > 0xFFFF:
        raise ValueError("region ids must fit in uint16")
    h, w = grid.shape
    Path(path).write_bytes(
        MAGIC_REGION_IDS
        + struct.pack("<II", h, w)
        + np.ascontiguousarray(grid, dtype="<u2").tobytes()
    )


def read_region_ids(path: str | Path) -> np.ndarray:
    r = _Reader(Path(path).read_bytes(), str(path))
    r.magic(MAGIC_REGION_IDS)
    h, w = r.u32(), r.u32()
    grid = r.array("<u2", h * w).reshape(h, w)
    r.done()
    return grid


# -- feature bank ------------------------------------------------------------


def write_bank(path: str | Path, bank: RegionFeatureBank) -> None:
    if len(bank) == 0:
        raise ValueError("refusing to write an empty bank")
    d_feat, d_lat = bank.feature_dim, bank.latent_dim
    parts = [MAGIC_BANK, struct.pack("<III", len(bank), d_feat, d_lat)]
    for masklet_id in bank.ids:
        if not (0 <= masklet_id <= 0xFFFF):
            raise ValueError(f"masklet id {masklet_id} does not fit in uint16")
        entry = bank.entries[masklet_id]
        parts.append(struct.pack("<HQ", masklet_id, entry.total_pixels))
        parts.append(_f32(entry.phi_bar))
        parts.append(_f32(entry.latent))
    Path(path).write_bytes(b"".join(parts))


def read_bank(path: str | Path) -> RegionFeatureBank:
    r = _Reader(Path(path).read_bytes(), str(path))
    r.magic(MAGIC_BANK)
    count, d_feat, d_lat = r.u32(), r.u32(), r.u32()
    entries: dict[int, BankEntry] = {}
    for _ in range(count):
        masklet_id = r.u16()
        total_pixels = r.u64()
        phi_bar = r.array("<f4", d_feat).astype(np.float64)
        latent = r.array("<f4", d_lat).astype(np.float64)
        entries[masklet_id] = BankEntry(
            phi_bar=phi_bar, latent=latent, total_pixels=total_pixels
        )
    r.done()
    if len(entries) != count:
        raise FormatError(f"{path}: duplicate masklet ids in bank")
    return RegionFeatureBank(entries=entries)


# -- feature rasters ---------------------------------------------------------


def write_feature_raster(path: str | Path, raster: FeatureRaster) -> None:
    h, w = raster.resolution
    Path(path).write_bytes(
        MAGIC_RASTER
        + struct.pack("<IIII", raster.frame_index, h, w, raster.depth)
        + _f32(raster.data)
        + np.ascontiguousarray(raster.coverage, dtype="<u1").tobytes()
    )


def read_feature_raster(path: str | Path) -> FeatureRaster:
    r = _Reader(Path(path).read_bytes(), str(path))
    r.magic(MAGIC_RASTER)
    t, h, w, d = r.u32(), r.u32(), r.u32(), r.u32()
    data = r.array("<f4", h * w * d).reshape(h, w, d).astype(np.float64)
    coverage = r.array("<u1", h * w)
    r.done()
    if not np.isin(coverage, (0, 1)).all():
        raise FormatError(f"{path}: coverage bytes must be 0/1")
    return FeatureRaster(
        frame_index=t, data=data, coverage=coverage.reshape(h, w).astype(bool)
    )


# -- codec params ------------------------------------------------------------


def write_codec(path: str | Path, params: CodecParams) -> None:
    header = json.dumps(
        {
            "feature_dim": params.feature_dim,
            "latent_dim": params.latent_dim,
            "encoder_widths": list(params.encoder_widths),
            "decoder_widths": list(params.decoder_widths),
        }
    ).encode("utf-8")
    parts = [MAGIC_CODEC, struct.pack("<I", len(header)), header]
    for arr in params.all_arrays():
        parts.append(_f32(arr))
    Path(path).write_bytes(b"".join(parts))


def read_codec(path: str | Path) -> CodecParams:
    r = _Reader(Path(path).read_bytes(), str(path))
    r.magic(MAGIC_CODEC)
    header_len = r.u32()
    try:
        header = json.loads(r.take(header_len).decode("utf-8"))
        enc_widths = [int(x) for x in header["encoder_widths"]]
        dec_widths = [int(x) for x in header["decoder_widths"]]
        d_feat = int(header["feature_dim"])
        d_lat = int(header["latent_dim"])
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad codec layer manifest: {exc}") from exc
    if enc_widths[-1] != d_lat or dec_widths[-1] != d_feat:
        raise FormatError(
            f"{path}: widths {enc_widths}/{dec_widths} disagree with "
            f"dims {d_feat}/{d_lat}"
        )

    def read_stack(widths, in_dim):
        ws, bs = [], []
        for out_dim in widths:
            ws.append(
                r.array("<f4", out_dim * in_dim)
                .reshape(out_dim, in_dim)
                .astype(np.float64)
            )
            in_dim = out_dim
        return ws, bs

    enc_w, _ = read_stack(enc_widths, d_feat)
    enc_b = [r.array("<f4", w_.shape[0]).astype(np.float64) for w_ in enc_w]
    dec_w, _ = read_stack(dec_widths, d_lat)
    dec_b = [r.array("<f4", w_.shape[0]).astype(np.float64) for w_ in dec_w]
    r.done()
    return CodecParams(enc_w, enc_b, dec_w, dec_b)


# -- per-region embeddings ---------------------------------------------------


def write_region_features(path: str | Path, table: RegionEmbeddingTable) -> None:
    rows = [
        (rid, fe)
        for rid, fes in sorted(table.entries.items())
        for fe in sorted(fes, key=lambda f: f.frame_index)
    ]
    if not rows:
        raise ValueError("refusing to write an empty region-feature table")
    d_feat = rows[0][1].vector.shape[0]
    parts = [MAGIC_FEATURES, struct.pack("<II", len(rows), d_feat)]
    for rid, fe in rows:
        if not (0 <= rid <= 0xFFFF):
            raise ValueError(f"region id {rid} does not fit in uint16")
        parts.append(struct.pack("<HIQ", rid, fe.frame_index, fe.pixel_count))
        parts.append(_f32(fe.vector))
    Path(path).write_bytes(b"".join(parts))


def read_region_features(path: str | Path) -> RegionEmbeddingTable:
    r = _Reader(Path(path).read_bytes(), str(path))
    r.magic(MAGIC_FEATURES)
    count, d_feat = r.u32(), r.u32()
    entries: dict[int, list[FrameEmbedding]] = {}
    for _ in range(count):
        rid = r.u16()
        frame_index = r.u32()
        pixel_count = r.u64()
        vector = r.array("<f4", d_feat).astype(np.float64)
        entries.setdefault(rid, []).append(
            FrameEmbedding(
                frame_index=frame_index, vector=vector, pixel_count=pixel_count
            )
        )
    r.done()
    return RegionEmbeddingTable(entries=entries)


# -- PGM / PPM ---------------------------------------------------------------


def write_pgm(path: str | Path, mask: np.ndarray) -> None:
    mask = np.asarray(mask).astype(bool)
    h, w = mask.shape
    Path(path).write_bytes(
        f"P5\n{w} {h}\n255\n".encode("ascii")
        + (mask.astype(np.uint8) * 255).tobytes()
    )


def read_pgm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1
    if fields[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise FormatError(f"{path}: expected maxval 255, got {maxval}")
    pixels = np.frombuffer(data[pos : pos + h * w], dtype=np.uint8)
    if pixels.size != h * w:
        raise FormatError(f"{path}: truncated PGM payload")
    return pixels.reshape(h, w) >= 128


def write_ppm(path: str | Path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb, dtype=np.float64)
    h, w, _ = rgb.shape
    quantized = np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)
    Path(path).write_bytes(
        f"P6\n{w} {h}\n255\n".encode("ascii") + quantized.tobytes()
    )


def read_ppm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1
    if fields[0] != b"P6":
        raise FormatError(f"{path}: not a binary PPM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise FormatError(f"{path}: expected maxval 255, got {maxval}")
    pixels = np.frombuffer(data[pos : pos + h * w * 3], dtype=np.uint8)
    if pixels.size != h * w * 3:
        raise FormatError(f"{path}: truncated PPM payload")
    return pixels.reshape(h, w, 3).astype(np.float64) / 255.0


# -- scene directories -------------------------------------------------------


def save_scene(
    directory: str | Path,
    bundle: GaussianBundle,
    frames: FrameSequence,
    feature_dim: int,
    extras: dict | None = None,
) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "frames").mkdir(exist_ok=True)
    (directory / "masks").mkdir(exist_ok=True)
    write_gaussians(directory / "gaussians.bin", bundle)

    cameras = []
    frame_files = []
    for frame in frames:
        cam = frame.camera
        cameras.append(
            {
                "rotation": [float(x) for x in cam.rotation.ravel()],
                "translation": [float(x) for x in cam.translation],
                "fx": cam.focal[0],
                "fy": cam.focal[1],
                "cx": cam.principal[0],
                "cy": cam.principal[1],
            }
        )
        name = f"frames/t_{frame.index:04d}.ppm"
        frame_files.append(name)
        if frame.rgb is not None:
            write_ppm(directory / name, frame.rgb)

    h, w = frames.resolution
    manifest = {
        "format": MANIFEST_FORMAT,
        "resolution": [h, w],
        "num_frames": len(frames),
        "feature_dim": feature_dim,
        "latent_dim": bundle.latent_dim,
        "files": {
            "gaussians": "gaussians.bin",
            "frames": frame_files,
            "masks": "masks/t_%04d.rid",
        },
        "cameras": cameras,
    }
    if extras:
        manifest.update(extras)
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1))


def load_manifest(directory: str | Path) -> dict:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"no {MANIFEST_NAME} in {directory}")
    manifest = json.loads(path.read_text())
    if manifest.get("format") != MANIFEST_FORMAT:
        raise FormatError(
            f"{path}: unsupported manifest format {manifest.get('format')!r}"
        )
    return manifest


def load_scene(directory: str | Path) -> tuple[GaussianBundle, FrameSequence, dict]:
    directory = Path(directory)
    manifest = load_manifest(directory)
    n_frames = manifest["num_frames"]
    if len(manifest["cameras"]) != n_frames or len(manifest["files"]["frames"]) != n_frames:
        raise FormatError(
            f"{directory}: manifest lists {len(manifest['cameras'])} cameras / "
            f"{len(manifest['files']['frames'])} frame files for {n_frames} frames"
        )
    bundle = read_gaussians(directory / manifest["files"]["gaussians"])
    h, w = manifest["resolution"]
    frames = []
    for i, cam_spec in enumerate(manifest["cameras"], start=1):
        camera = CameraPose(
            rotation=np.array(cam_spec["rotation"]).reshape(3, 3),
            translation=np.array(cam_spec["translation"]),
            focal=(cam_spec["fx"], cam_spec["fy"]),
            principal=(cam_spec["cx"], cam_spec["cy"]),
            resolution=(h, w),
        )
        rgb = None
        frame_path = directory / manifest["files"]["frames"][i - 1]
        if frame_path.exists():
            rgb = read_ppm(frame_path)
        frames.append(Frame(index=i, camera=camera, rgb=rgb))
    return bundle, FrameSequence(frames=tuple(frames)), manifest


def load_mask_grids(directory: str | Path) -> dict[int, np.ndarray]:
    directory = Path(directory)
    manifest = load_manifest(directory)
    pattern = manifest["files"]["masks"]
    grids = {}
    for t in range(1, manifest["num_frames"] + 1):
        path = directory / (pattern % t)
        if path.exists():
            grids[t] = read_region_ids(path)
    if not grids:
        raise FileNotFoundError(f"no region-id rasters found under {directory}")
    return grids
