"""Sampled fields on uniform rectangular grids and their file formats."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"GFLD"
VERSION = 1


@dataclass
class GridField:
    """Scalar or vector field sampled at the nodes origin + index * spacing.

    Parameters
    ----------
    values : ndarray
        Shape ``grid_shape`` for a scalar field, ``(ncomp,) + grid_shape`` for a vector field.
    spacing, origin : tuple of float
        One entry per axis.
    rank : int
        0 for scalar fields, 1 for vector fields.
    boundary : str
        Free-form boundary tag, e.g. ``"dirichlet"``, ``"periodic"`` or ``"none"``.
    """

    values: np.ndarray
    spacing: tuple
    origin: tuple
    rank: int = 0
    boundary: str = "none"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.spacing = tuple(float(s) for s in np.atleast_1d(self.spacing))
        self.origin = tuple(float(s) for s in np.atleast_1d(self.origin))
        if len(self.spacing) != len(self.origin):
            raise ValueError("spacing and origin must have one entry per axis")
        if self.values.ndim != self.dim + self.rank:
            raise ValueError(f"values of ndim {self.values.ndim} do not match dim {self.dim} and rank {self.rank}")
        if any(s <= 0 for s in self.spacing):
            raise ValueError("spacing must be positive")

    @property
    def dim(self) -> int:
        return len(self.spacing)

    @property
    def shape(self) -> tuple:
        return self.values.shape[self.rank:]

    @property
    def ncomp(self) -> int:
        return 1 if self.rank == 0 else self.values.shape[0]

    def axis(self, i):
        return self.origin[i] + self.spacing[i] * np.arange(self.shape[i])

    def points(self) -> np.ndarray:
        """Node coordinates as an array of shape (n_nodes, dim), row-major order."""
        axes = [self.axis(i) for i in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def same_grid(self, other, rtol=1e-12) -> bool:
        return (self.shape == other.shape
                and np.allclose(self.spacing, other.spacing, rtol=rtol, atol=0)
                and np.allclose(self.origin, other.origin, rtol=rtol, atol=1e-14))

    def with_values(self, values, rank=None):
        return GridField(values, self.spacing, self.origin, self.rank if rank is None else rank,
                         self.boundary, dict(self.meta))

    # -- serialization ----------------------------------------------------
    def to_bytes(self) -> bytes:
        tag = self.boundary.encode("utf-8")
        head = struct.pack("<4sIIII", MAGIC, VERSION, self.dim, self.rank, self.ncomp)
        head += struct.pack(f"<{self.dim}Q", *self.shape)
        head += struct.pack(f"<{self.dim}d", *self.spacing)
        head += struct.pack(f"<{self.dim}d", *self.origin)
        head += struct.pack("<I", len(tag)) + tag
        return head + np.ascontiguousarray(self.values, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "GridField":
        magic, version, dim, rank, ncomp = struct.unpack_from("<4sIIII", data, 0)
        if magic != MAGIC or version != VERSION:
            raise ValueError("not a GridField binary")
        off = struct.calcsize("<4sIIII")
        shape = struct.unpack_from(f"<{dim}Q", data, off)
        off += 8 * dim
        spacing = struct.unpack_from(f"<{dim}d", data, off)
        off += 8 * dim
        origin = struct.unpack_from(f"<{dim}d", data, off)
        off += 8 * dim
        (ntag,) = struct.unpack_from("<I", data, off)
        off += 4
        boundary = data[off:off + ntag].decode("utf-8")
        off += ntag
        full = ((ncomp,) if rank else ()) + tuple(shape)
        vals = np.frombuffer(data, dtype="<f8", offset=off, count=int(np.prod(full))).reshape(full)
        return cls(vals.copy(), spacing, origin, rank, boundary)

    def save(self, path, sidecar: dict | None = None):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        if sidecar is not None:
            path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
        return path

    @classmethod
    def load(cls, path) -> "GridField":
        return cls.from_bytes(Path(path).read_bytes())

    def to_csv(self, path):
        """CSV export for 1D fields: x column followed by one column per component."""
        if self.dim != 1:
            raise ValueError("CSV export is available for 1D fields only")
        cols = [self.axis(0)]
        if self.rank == 0:
            cols.append(self.values)
            names = ["x", "value"]
        else:
            cols.extend(self.values)
            names = ["x"] + [f"c{i}" for i in range(self.ncomp)]
        np.savetxt(path, np.column_stack(cols), delimiter=",", header=",".join(names), comments="")


def uniform_grid(origin, spacing, shape, boundary="none") -> GridField:
    """Zero scalar field on the grid origin + index * spacing."""
    shape = tuple(int(n) for n in np.atleast_1d(shape))
    return GridField(np.zeros(shape), spacing, origin, 0, boundary)


def interior_grid(dim, n, boundary="dirichlet") -> GridField:
    """Interior nodes of the uniform grid with n intervals on (0, 1)^dim."""
    h = 1.0 / n
    return uniform_grid((h,) * dim, (h,) * dim, (n - 1,) * dim, boundary)
