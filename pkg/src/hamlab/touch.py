"""Analytic haptic-glance simulator.

Four 9 cm building blocks carry a one-dimensional height profile
``h(u)`` (edge, inclined plane, flat top, convex semicylinder). A rigid
8 cm tactile array with 16 x 16 cells is lowered at a commanded position
and tilt until it rests on the profile; the touching points become Gaussian
pressure blobs on the cell grid.

Poses use the exploration-zone convention: ``x`` in [-1, 1] maps linearly
onto the block, ``phi`` in [-pi/2, pi/2] is the tilt about the y axis. A
positive tilt raises the ``s > 0`` end of the sensor.
"""

from __future__ import annotations

import csv
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

N_OBJECTS = 4
OBJECT_NAMES = ("ridge", "incline", "flat", "cylinder")

BLOCK_HALF_WIDTH = 4.5      # cm, also the exploration-zone half width
MAX_HEIGHT = 4.5            # cm, shared by all blocks
INCLINE_ANGLE = np.pi / 8

N_CELLS = 16
CELL_PITCH = 0.5            # cm
SENSOR_LENGTH = N_CELLS * CELL_PITCH
SAMPLE_STEP = 0.1           # cm along the sensor
CONTACT_TOLERANCE = 0.01    # cm
TOTAL_FORCE = 2.0           # N
BLOB_SIGMA = 1.5            # cells
BLOB_ROWS = (4, 11)
MAX_CONTACTS = 2

# sensor-local sample positions; built from integers so s[-k] == -s[k] exactly
_N_HALF = int(round(SENSOR_LENGTH / 2 / SAMPLE_STEP))
SENSOR_SAMPLES = np.arange(-_N_HALF, _N_HALF + 1) * SAMPLE_STEP


def _check_object(obj) -> None:
    if np.any((np.asarray(obj) < 0) | (np.asarray(obj) >= N_OBJECTS)):
        raise ValueError(f"unknown object id {obj!r}")


def height_profile(obj: int, u) -> np.ndarray:
    """Block height in cm at block coordinate ``u`` (cm). Zero off the block."""
    _check_object(obj)
    u = np.asarray(u, dtype=np.float64)
    au = np.abs(u)
    if obj == 0:
        h = MAX_HEIGHT - au
    elif obj == 1:
        h = np.clip(MAX_HEIGHT - np.tan(INCLINE_ANGLE) * (u + BLOCK_HALF_WIDTH), 0.0, MAX_HEIGHT)
    elif obj == 2:
        h = np.full_like(u, MAX_HEIGHT)
    else:
        h = np.sqrt(np.maximum(BLOCK_HALF_WIDTH ** 2 - u * u, 0.0))
    return np.where(au <= BLOCK_HALF_WIDTH, h, 0.0)


def _height_many(objects: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Heights for a batch: ``objects`` has shape (N,), ``u`` shape (N, K)."""
    out = np.empty_like(u)
    for o in range(N_OBJECTS):
        sel = objects == o
        if np.any(sel):
            out[sel] = height_profile(o, u[sel])
    return out


class GlancePose(NamedTuple):
    x: float
    phi: float

    def validate(self) -> "GlancePose":
        if not (-1.0 <= self.x <= 1.0 and -np.pi / 2 <= self.phi <= np.pi / 2):
            raise ValueError(f"pose out of bounds: {self}")
        return self


class ContactPoint(NamedTuple):
    s: float        # sensor-local coordinate in cm
    force: float    # N


@dataclass
class PressureImage:
    raw: np.ndarray

    @property
    def normalized(self) -> np.ndarray:
        return l2_normalize(self.raw)


@dataclass
class GlanceResult:
    image: PressureImage
    contacts: List[ContactPoint]
    height: float       # height of the sensor centre at rest, cm


def _odd_sin(phi):
    return np.sign(phi) * np.sin(np.abs(phi))


def _contact_extent(objects, x, phi):
    """Vectorized core of the glance controller.

    Returns ``(s_lo, s_hi, z)`` per glance: lowest and highest touching
    sensor coordinates and the resting height of the sensor centre.
    """
    objects = np.asarray(objects, dtype=np.int64).reshape(-1)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    phi = np.asarray(phi, dtype=np.float64).reshape(-1)
    s = SENSOR_SAMPLES[None, :]
    u = BLOCK_HALF_WIDTH * x[:, None] + s * np.cos(np.abs(phi))[:, None]
    # sensor point s sits at z + s*sin(phi); the resting z is the max clearance
    lift = _height_many(objects, u) - s * _odd_sin(phi)[:, None]
    z = lift.max(axis=1)
    touching = lift >= (z - CONTACT_TOLERANCE)[:, None]
    s_lo = np.where(touching, s, np.inf).min(axis=1)
    s_hi = np.where(touching, s, -np.inf).max(axis=1)
    return s_lo, s_hi, z


def _collapse(s_lo: float, s_hi: float) -> List[ContactPoint]:
    # contact runs shorter than half a cell are one point contact
    if s_hi - s_lo < CELL_PITCH / 2:
        return [ContactPoint(0.5 * (s_lo + s_hi), TOTAL_FORCE)]
    return [ContactPoint(s_lo, TOTAL_FORCE / 2), ContactPoint(s_hi, TOTAL_FORCE / 2)]


def contact_column(s) -> np.ndarray:
    """Continuous column coordinate of sensor position ``s``; cell centres at 0..15."""
    return (np.asarray(s, dtype=np.float64) + SENSOR_LENGTH / 2) / CELL_PITCH - 0.5


_ROWS = np.arange(N_CELLS, dtype=np.float64)
_ROW_PROFILE = sum(np.exp(-(_ROWS - r) ** 2 / (2 * BLOB_SIGMA ** 2)) for r in BLOB_ROWS)


def _images(cols: np.ndarray, forces: np.ndarray) -> np.ndarray:
    """Raw images for N glances with up to two contacts each.

    ``cols`` and ``forces`` have shape (N, 2); unused slots carry zero force.
    """
    col_profile = np.exp(-(_ROWS[None, None, :] - cols[:, :, None]) ** 2 / (2 * BLOB_SIGMA ** 2))
    # each blob carries half its contact's force, spread over the Gaussian mass
    amp = forces / (len(BLOB_ROWS) * 2 * np.pi * BLOB_SIGMA ** 2)
    cols_sum = np.einsum("nk,nkj->nj", amp, col_profile)
    return _ROW_PROFILE[None, :, None] * cols_sum[:, None, :]


def synthesize_image(contacts: Sequence[ContactPoint]) -> PressureImage:
    """Mix one Gaussian blob pair per contact into a 16 x 16 raw image."""
    if len(contacts) == 0:
        raise ValueError("at least one contact is required")
    if len(contacts) > MAX_CONTACTS:
        raise ValueError(f"at most {MAX_CONTACTS} contacts are supported")
    cols = np.zeros((1, MAX_CONTACTS))
    forces = np.zeros((1, MAX_CONTACTS))
    for k, c in enumerate(contacts):
        if c.force <= 0:
            raise ValueError("contact forces must be positive")
        cols[0, k] = contact_column(c.s)
        forces[0, k] = c.force
    return PressureImage(_images(cols, forces)[0])


def l2_normalize(image) -> np.ndarray:
    """Flatten (row-major) and scale to unit Euclidean norm."""
    raw = image.raw if isinstance(image, PressureImage) else np.asarray(image, dtype=np.float64)
    flat = raw.reshape(-1).astype(np.float64)
    norm = np.linalg.norm(flat)
    if not norm > 0:
        raise ValueError("pressure image is all zero; no contact was registered")
    return flat / norm


def execute_glance(obj: int, pose) -> GlanceResult:
    """Lower the sensor at ``pose`` onto object ``obj`` and read the array."""
    _check_object(obj)
    pose = GlancePose(float(pose[0]), float(pose[1])).validate()
    s_lo, s_hi, z = _contact_extent([obj], [pose.x], [pose.phi])
    contacts = _collapse(float(s_lo[0]), float(s_hi[0]))
    return GlanceResult(synthesize_image(contacts), contacts, float(z[0]))


def glance_batch(objects, x, phi) -> np.ndarray:
    """Normalized pressure vectors for many glances at once, shape (N, 256)."""
    objects = np.asarray(objects).reshape(-1)
    _check_object(objects)
    s_lo, s_hi, _ = _contact_extent(objects, x, phi)
    single = (s_hi - s_lo) < CELL_PITCH / 2
    cols = np.stack([contact_column(np.where(single, 0.5 * (s_lo + s_hi), s_lo)),
                     contact_column(s_hi)], axis=1)
    forces = np.stack([np.where(single, TOTAL_FORCE, TOTAL_FORCE / 2),
                       np.where(single, 0.0, TOTAL_FORCE / 2)], axis=1)
    flat = _images(cols, forces).reshape(len(objects), -1)
    return flat / np.linalg.norm(flat, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# pre-recorded dataset

GRID_SIZE = 201
GRID_STEP = 0.01            # in normalized units for both x and phi / (pi/2)
DATASET_MAGIC = b"HAMGLNC1"
DATASET_VERSION = 1
_HEADER = struct.Struct("<8sIIII4d")


def grid_values() -> np.ndarray:
    """Normalized grid coordinates -1, -0.99, ..., 1."""
    return np.arange(GRID_SIZE) * GRID_STEP - 1.0


class GlanceRecord(NamedTuple):
    pose: GlancePose
    pressure: np.ndarray


@dataclass
class GlanceDataset:
    """Per-object 201 x 201 grid of normalized pressure vectors.

    ``pressure[o, i, j]`` belongs to ``x = x0 + i*dx`` and
    ``phi = phi0 + j*dphi``.
    """

    pressure: np.ndarray
    x0: float = -1.0
    phi0: float = -np.pi / 2
    dx: float = GRID_STEP
    dphi: float = GRID_STEP * np.pi / 2

    @property
    def n_records(self) -> int:
        return int(np.prod(self.pressure.shape[:3]))

    def node_x(self, i):
        return np.clip(self.x0 + np.asarray(i) * self.dx, -1.0, 1.0)

    def node_phi(self, j):
        # clip the 1-ulp overshoot of the last node
        return np.clip(self.phi0 + np.asarray(j) * self.dphi, -np.pi / 2, np.pi / 2)

    def pose_at(self, i: int, j: int) -> GlancePose:
        return GlancePose(float(self.node_x(i)), float(self.node_phi(j)))

    def indices(self, x, phi):
        """Nearest grid indices; exact half-way ties go to the lower index."""
        fi = (np.asarray(x, dtype=np.float64) - self.x0) / self.dx
        fj = (np.asarray(phi, dtype=np.float64) - self.phi0) / self.dphi
        n_x, n_phi = self.pressure.shape[1:3]
        i = np.clip(np.ceil(fi - 0.5), 0, n_x - 1).astype(np.int64)
        j = np.clip(np.ceil(fj - 0.5), 0, n_phi - 1).astype(np.int64)
        return i, j

    def lookup(self, objects, x, phi) -> np.ndarray:
        i, j = self.indices(x, phi)
        return self.pressure[np.asarray(objects), i, j]

    def lookup_nearest(self, obj: int, pose) -> GlanceRecord:
        i, j = self.indices(pose[0], pose[1])
        return GlanceRecord(self.pose_at(int(i), int(j)), self.pressure[obj, int(i), int(j)])

    def _header(self) -> bytes:
        n_obj, n_x, n_phi, n_feat = self.pressure.shape
        return (_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, n_obj, n_x, n_phi,
                             self.x0, self.phi0, self.dx, self.dphi)
                + struct.pack("<I", n_feat))

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        with open(path, "wb") as fh:
            fh.write(self._header())
            fh.write(np.ascontiguousarray(self.pressure, dtype="<f8").tobytes())
        return path

    def content_hash(self) -> str:
        """sha256 of the serialized file, without writing it."""
        h = hashlib.sha256(self._header())
        h.update(np.ascontiguousarray(self.pressure, dtype="<f8").data)
        return h.hexdigest()

    @classmethod
    def load(cls, path: Union[str, Path]) -> "GlanceDataset":
        with open(path, "rb") as fh:
            magic, version, n_obj, n_x, n_phi, x0, phi0, dx, dphi = _HEADER.unpack(
                fh.read(_HEADER.size))
            if magic != DATASET_MAGIC:
                raise ValueError(f"{path}: not a glance dataset file")
            if version != DATASET_VERSION:
                raise ValueError(f"{path}: unsupported dataset version {version}")
            (n_feat,) = struct.unpack("<I", fh.read(4))
            data = np.frombuffer(fh.read(), dtype="<f8")
        expected = n_obj * n_x * n_phi * n_feat
        if data.size != expected:
            raise ValueError(f"{path}: truncated payload ({data.size} of {expected} values)")
        pressure = data.reshape(n_obj, n_x, n_phi, n_feat).astype(np.float64)
        return cls(pressure, x0, phi0, dx, dphi)

    def export_csv(self, path: Union[str, Path], objects: Optional[Iterable[int]] = None) -> None:
        """Write ``object, x, phi, p0..p255`` rows for inspection."""
        objects = range(self.pressure.shape[0]) if objects is None else objects
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["object", "x", "phi"] + [f"p{k}" for k in range(self.pressure.shape[3])])
            for o in objects:
                for i in range(self.pressure.shape[1]):
                    for j in range(self.pressure.shape[2]):
                        pose = self.pose_at(i, j)
                        w.writerow([o, repr(pose.x), repr(pose.phi)]
                                   + [repr(v) for v in self.pressure[o, i, j]])


def record_dataset(out: Optional[Union[str, Path]] = None) -> GlanceDataset:
    """Glance every object on the full 201 x 201 pose grid."""
    ds = GlanceDataset(np.empty((N_OBJECTS, GRID_SIZE, GRID_SIZE, N_CELLS * N_CELLS)))
    phis = ds.node_phi(np.arange(GRID_SIZE))
    for o in range(N_OBJECTS):
        for i in range(GRID_SIZE):
            x = np.full(GRID_SIZE, ds.node_x(i))
            ds.pressure[o, i] = glance_batch(np.full(GRID_SIZE, o), x, phis)
    if out is not None:
        ds.save(out)
    return ds
