"""Block-sparse truncated signed-distance volumes.

A volume covers an axis-aligned box with cubic voxels whose origin is
snapped to the global voxel lattice, so volumes built for adjacent
regions share voxel centers and their extracted surfaces meet exactly
at region boundaries.  Storage is a dictionary of 16^3 blocks holding
signed distance and integration weight; only blocks touched by an
observation exist.  Surfaces come out of marching cubes over the
observed voxels at the zero level set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from skimage import measure

from .depth_fusion import DepthMap
from .errors import EmptyVolume, InvalidValue, IoFailure, UnsupportedCamera
from .meshing import Mesh, remove_degenerate_faces
from .partition import SceneBounds

BLOCK_SIZE = 16
DEFAULT_VOXEL_SIZE = 0.4
ALT_VOXEL_SIZE = 0.1
TRUNCATION_FACTOR = 4.0


@dataclass
class TsdfVolume:
    """Signed distance and weight over a lattice-aligned voxel box."""

    origin: np.ndarray  # world position of the corner of voxel (0, 0, 0)
    voxel_size: float
    dims: tuple[int, int, int]
    truncation: float | None = None
    blocks: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        if self.voxel_size <= 0:
            raise InvalidValue(f"voxel size must be positive, got {self.voxel_size}")
        if self.truncation is None:
            self.truncation = TRUNCATION_FACTOR * self.voxel_size
        if self.truncation <= 0:
            raise InvalidValue(f"truncation must be positive, got {self.truncation}")
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise InvalidValue(f"dims must be three positive integers, got {self.dims}")

    @classmethod
    def from_bounds(
        cls,
        bounds: SceneBounds,
        voxel_size: float,
        truncation: float | None = None,
    ) -> "TsdfVolume":
        """Smallest lattice-aligned volume covering the bounds.

        The origin is floor(min / voxel) * voxel per axis: volumes built
        with the same voxel size agree on voxel center positions.
        """
        if voxel_size <= 0:
            raise InvalidValue(f"voxel size must be positive, got {voxel_size}")
        origin = np.floor(bounds.min_corner / voxel_size) * voxel_size
        dims = np.maximum(
            np.ceil((bounds.max_corner - origin) / voxel_size).astype(np.int64), 1
        )
        return cls(origin, voxel_size, tuple(int(d) for d in dims), truncation)

    @property
    def block_grid(self) -> tuple[int, int, int]:
        return tuple(-(-d // BLOCK_SIZE) for d in self.dims)

    def _block(self, key: tuple[int, int, int], create: bool):
        entry = self.blocks.get(key)
        if entry is None and create:
            entry = (
                np.zeros((BLOCK_SIZE,) * 3),
                np.zeros((BLOCK_SIZE,) * 3),
            )
            self.blocks[key] = entry
        return entry

    def block_voxel_range(self, key) -> tuple[np.ndarray, np.ndarray]:
        """Half-open voxel index range [lo, hi) the block covers."""
        lo = np.array(key, dtype=np.int64) * BLOCK_SIZE
        hi = np.minimum(lo + BLOCK_SIZE, self.dims)
        return lo, hi

    def voxel_centers(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """World centers of voxels in [lo, hi), shaped (nx, ny, nz, 3)."""
        axes = [
            self.origin[a] + (np.arange(lo[a], hi[a], dtype=np.float64) + 0.5)
            * self.voxel_size
            for a in range(3)
        ]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def observed_voxel_count(self) -> int:
        return int(sum((w > 0).sum() for _, w in self.blocks.values()))

    def occupied_block_keys(self) -> list[tuple[int, int, int]]:
        return sorted(k for k, (_, w) in self.blocks.items() if (w > 0).any())


def integrate_depth(volume: TsdfVolume, depth: DepthMap) -> TsdfVolume:
    """Fold one depth map into the volume (running weighted average).

    Every voxel center projecting onto a valid depth pixel with signed
    distance d = depth - voxel camera depth inside (-truncation,
    +truncation] gets the in-band distance averaged in with unit weight.
    Voxels behind the surface beyond the truncation band, outside the
    frustum, or over invalid pixels are untouched.
    """
    if not depth.camera.is_pinhole:
        raise UnsupportedCamera(
            f"TSDF integration needs a pinhole camera, got {depth.camera.model_name}"
        )
    if not depth.valid.any():
        return volume
    cam = depth.camera
    pose = depth.pose
    trunc = volume.truncation
    depth_values = np.where(depth.valid, depth.values, np.nan)
    with np.errstate(invalid="ignore"):
        d_min = float(np.nanmin(depth_values))
        d_max = float(np.nanmax(depth_values))

    grid = volume.block_grid
    for key in np.ndindex(grid):
        lo, hi = volume.block_voxel_range(key)
        if _cull_block(volume, lo, hi, cam, pose, d_min, d_max, trunc):
            continue
        centers = volume.voxel_centers(lo, hi)
        shape = centers.shape[:3]
        pts_cam = pose.world_to_camera(centers.reshape(-1, 3))
        z = pts_cam[:, 2]
        front = z > 0.0
        with np.errstate(invalid="ignore", divide="ignore"):
            u = cam.fx * pts_cam[:, 0] / z + cam.cx
            v = cam.fy * pts_cam[:, 1] / z + cam.cy
        ui = np.floor(np.where(front, u, -1.0) + 0.5).astype(np.int64)
        vi = np.floor(np.where(front, v, -1.0) + 0.5).astype(np.int64)
        inside = (
            front
            & (ui >= 0)
            & (ui <= cam.width - 1)
            & (vi >= 0)
            & (vi <= cam.height - 1)
        )
        if not inside.any():
            continue
        ui = np.clip(ui, 0, cam.width - 1)
        vi = np.clip(vi, 0, cam.height - 1)
        usable = inside & depth.valid[vi, ui]
        if not usable.any():
            continue
        signed = depth.values[vi, ui] - z
        update = usable & (signed > -trunc) & (signed <= trunc)
        if not update.any():
            continue
        sdf_blk, w_blk = volume._block(tuple(key), create=True)
        n = hi - lo
        local = (slice(0, n[0]), slice(0, n[1]), slice(0, n[2]))
        mask = update.reshape(shape)
        value = np.where(update, signed, 0.0).reshape(shape)
        w_old = w_blk[local]
        w_new = w_old + mask
        sdf_old = sdf_blk[local]
        sdf_blk[local] = np.where(
            mask, (sdf_old * w_old + value) / np.maximum(w_new, 1.0), sdf_old
        )
        w_blk[local] = w_new
    return volume


def _cull_block(volume, lo, hi, cam, pose, d_min, d_max, trunc) -> bool:
    """True when no voxel of the block can receive an update."""
    corners_idx = np.array(
        [[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])],
        dtype=np.float64,
    )
    corners = volume.origin + corners_idx * volume.voxel_size
    cam_pts = pose.world_to_camera(corners)
    z = cam_pts[:, 2]
    if z.max() <= 0.0:
        return True
    # Depth band gates hold for the whole convex block.
    if z.min() > d_max + trunc or z.max() < d_min - trunc:
        return True
    if z.min() <= 0.0:
        return False  # projection of a behind-camera box is unbounded
    u = cam.fx * cam_pts[:, 0] / z + cam.cx
    v = cam.fy * cam_pts[:, 1] / z + cam.cy
    if u.max() < -0.5 or u.min() > cam.width - 0.5:
        return True
    if v.max() < -0.5 or v.min() > cam.height - 0.5:
        return True
    return False


def fill_signed_distance(volume: TsdfVolume, distance_fn) -> TsdfVolume:
    """Analytically populate the volume from a signed distance function.

    ``distance_fn`` maps (n, 3) world points to signed distances
    (positive outside).  Voxels whose distance lies in (-truncation,
    +truncation] become observed with unit weight; the rest stay
    unobserved, mirroring the integration band.
    """
    trunc = volume.truncation
    for key in np.ndindex(volume.block_grid):
        lo, hi = volume.block_voxel_range(key)
        centers = volume.voxel_centers(lo, hi)
        shape = centers.shape[:3]
        d = np.asarray(distance_fn(centers.reshape(-1, 3)), dtype=np.float64)
        band = (d > -trunc) & (d <= trunc)
        if not band.any():
            continue
        sdf_blk, w_blk = volume._block(tuple(key), create=True)
        n = hi - lo
        local = (slice(0, n[0]), slice(0, n[1]), slice(0, n[2]))
        mask = band.reshape(shape)
        sdf_blk[local] = np.where(mask, d.reshape(shape), sdf_blk[local])
        w_blk[local] = np.where(mask, 1.0, w_blk[local])
    return volume


def extract_mesh(volume: TsdfVolume) -> Mesh:
    """Zero level set of the observed signed distance field.

    Marching cubes runs over the bounding box of occupied blocks with
    unobserved voxels masked out, so geometry appears only where depth
    was integrated.  A field with no sign change yields an empty mesh.

    Raises:
        EmptyVolume: no voxel was ever observed.
    """
    keys = volume.occupied_block_keys()
    if not keys:
        raise EmptyVolume("volume has no observed voxels")
    key_arr = np.array(keys, dtype=np.int64)
    lo = key_arr.min(axis=0) * BLOCK_SIZE
    hi = np.minimum((key_arr.max(axis=0) + 1) * BLOCK_SIZE, volume.dims)
    shape = tuple(hi - lo)
    if any(s < 2 for s in shape):
        return Mesh.empty()

    sdf = np.full(shape, volume.truncation)
    weight = np.zeros(shape)
    for key in keys:
        blo, bhi = volume.block_voxel_range(key)
        n = bhi - blo
        src = (slice(0, n[0]), slice(0, n[1]), slice(0, n[2]))
        dst = tuple(slice(blo[a] - lo[a], bhi[a] - lo[a]) for a in range(3))
        sdf_blk, w_blk = volume.blocks[key]
        observed = w_blk[src] > 0
        sdf[dst] = np.where(observed, sdf_blk[src], volume.truncation)
        weight[dst] = np.where(observed, w_blk[src], 0.0)

    observed = weight > 0
    if sdf[observed].min() > 0.0 or sdf[observed].max() < 0.0:
        return Mesh.empty()
    try:
        verts, faces, normals, _ = measure.marching_cubes(sdf, level=0.0)
    except (ValueError, RuntimeError):
        return Mesh.empty()
    # The positive filler at unobserved voxels fabricates crossings along
    # the observation boundary; keep only vertices whose grid edge has
    # observed voxels at both endpoints, which confines the surface to
    # real data.
    frac = verts - np.floor(verts)
    lo_idx = np.floor(verts).astype(np.int64)
    hi_idx = lo_idx + (frac > 1e-9)
    vertex_ok = observed[tuple(lo_idx.T)] & observed[tuple(hi_idx.T)]
    face_ok = vertex_ok[faces].all(axis=1)
    if not face_ok.any():
        return Mesh.empty()
    world = (verts + 0.5 + lo) * volume.voxel_size + volume.origin
    # Flip to point toward positive distance (out of the surface).
    lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    unit_normals = -normals / np.where(lengths > 0, lengths, 1.0)
    mesh = Mesh(world, faces[face_ok].astype(np.int64), unit_normals)
    return remove_degenerate_faces(mesh)


def write_volume_dump(volume: TsdfVolume, directory: Path | str) -> None:
    """Debug dump: dense float32 grids plus a JSON header.

    ``volume.json`` describes origin, voxel size, truncation, and dims;
    ``sdf.raw`` and ``weight.raw`` hold little-endian float32 grids in
    C order with index order (x, y, z).  Unobserved voxels carry
    sdf = truncation and weight = 0.
    """
    import json

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    sdf = np.full(volume.dims, volume.truncation, dtype=np.float64)
    weight = np.zeros(volume.dims, dtype=np.float64)
    for key, (sdf_blk, w_blk) in volume.blocks.items():
        lo, hi = volume.block_voxel_range(key)
        n = hi - lo
        src = (slice(0, n[0]), slice(0, n[1]), slice(0, n[2]))
        dst = tuple(slice(lo[a], hi[a]) for a in range(3))
        observed = w_blk[src] > 0
        sdf[dst] = np.where(observed, sdf_blk[src], volume.truncation)
        weight[dst] = np.where(observed, w_blk[src], 0.0)
    header = {
        "origin": volume.origin.tolist(),
        "voxel_size": volume.voxel_size,
        "truncation": volume.truncation,
        "dims": list(volume.dims),
        "dtype": "<f4",
        "index_order": "xyz, C-contiguous",
    }
    try:
        with open(directory / "volume.json", "w", encoding="ascii") as fid:
            json.dump(header, fid, indent=2, sort_keys=True)
            fid.write("\n")
        sdf.astype("<f4").tofile(directory / "sdf.raw")
        weight.astype("<f4").tofile(directory / "weight.raw")
    except OSError as exc:
        raise IoFailure(f"cannot dump volume to {directory}: {exc}") from exc


def read_volume_dump(directory: Path | str) -> TsdfVolume:
    """Rebuild a volume from :func:`write_volume_dump` output."""
    import json

    directory = Path(directory)
    try:
        with open(directory / "volume.json", "r", encoding="ascii") as fid:
            header = json.load(fid)
        sdf = np.fromfile(directory / "sdf.raw", dtype="<f4").astype(np.float64)
        weight = np.fromfile(directory / "weight.raw", dtype="<f4").astype(np.float64)
    except OSError as exc:
        raise IoFailure(f"cannot read volume dump {directory}: {exc}") from exc
    dims = tuple(header["dims"])
    volume = TsdfVolume(
        np.array(header["origin"]),
        header["voxel_size"],
        dims,
        header["truncation"],
    )
    sdf = sdf.reshape(dims)
    weight = weight.reshape(dims)
    observed = weight > 0
    for key in np.ndindex(volume.block_grid):
        lo, hi = volume.block_voxel_range(key)
        dst = tuple(slice(lo[a], hi[a]) for a in range(3))
        if not observed[dst].any():
            continue
        sdf_blk, w_blk = volume._block(tuple(key), create=True)
        n = hi - lo
        local = (slice(0, n[0]), slice(0, n[1]), slice(0, n[2]))
        sdf_blk[local] = np.where(observed[dst], sdf[dst], 0.0)
        w_blk[local] = weight[dst]
    return volume
