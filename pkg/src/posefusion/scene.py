"""Scene point clouds: storage, exact nearest-neighbor queries, file IO.

Scenes are z-up point clouds in meters. Nearest-neighbor queries are exact
(kd-tree), never approximate, so contact energies have a deterministic
oracle-matching answer. The index is immutable after construction and safe
for concurrent read-only queries.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
import json

import numpy as np
from scipy.spatial import cKDTree


class SceneError(ValueError):
    """Malformed scene file or invalid cloud contents."""


@dataclass(frozen=True)
class ScenePointCloud:
    points: np.ndarray  # (N, 3) float, meters
    normals: np.ndarray | None = None  # optional (N, 3)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
            raise SceneError("scene cloud must be a non-empty (N, 3) array")
        if not np.all(np.isfinite(pts)):
            raise SceneError("scene cloud contains non-finite coordinates")
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=float)
            if nrm.shape != pts.shape:
                raise SceneError("normals must match points in shape")
            object.__setattr__(self, "normals", nrm)


class SceneIndex:
    """Exact nearest-neighbor index over a scene cloud (kd-tree backed)."""

    def __init__(self, cloud: ScenePointCloud):
        self.cloud = cloud
        self._tree = cKDTree(cloud.points)

    def closest_point(self, p: np.ndarray) -> tuple[np.ndarray, float]:
        """Nearest cloud point to p and its Euclidean distance."""
        d, i = self._tree.query(np.asarray(p, dtype=float))
        return self.cloud.points[i], float(d)

    def closest_points(self, ps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Batched query: (targets (N,3), distances (N,))."""
        d, i = self._tree.query(np.asarray(ps, dtype=float))
        return self.cloud.points[i], d

    def __len__(self) -> int:
        return self.cloud.points.shape[0]


def build_index(cloud: ScenePointCloud) -> SceneIndex:
    return SceneIndex(cloud)


def load_scene(path: str | Path) -> ScenePointCloud:
    """Load a scene cloud from ASCII PLY or the JSON cloud format.

    Dispatch is by file content (PLY magic), not extension.
    """
    path = Path(path)
    if not path.exists():
        raise SceneError(f"scene file not found: {path}")
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head[:3] == b"ply":
        return _load_ply(path)
    return _load_json(path)


def save_scene(cloud: ScenePointCloud, path: str | Path) -> None:
    """Write the JSON cloud format: {"points": [[x, y, z], ...]}."""
    doc = {"points": cloud.points.tolist()}
    if cloud.normals is not None:
        doc["normals"] = cloud.normals.tolist()
    with open(path, "w") as fh:
        json.dump(doc, fh)


def _load_json(path: Path) -> ScenePointCloud:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise SceneError(f"{path}: not valid JSON and not a PLY file: {e}") from e
    if not isinstance(doc, dict) or "points" not in doc:
        raise SceneError(f"{path}: JSON cloud must be an object with a 'points' key")
    normals = doc.get("normals")
    try:
        return ScenePointCloud(
            points=np.asarray(doc["points"], dtype=float),
            normals=None if normals is None else np.asarray(normals, dtype=float),
        )
    except SceneError as e:
        raise SceneError(f"{path}: {e}") from e


def _load_ply(path: Path) -> ScenePointCloud:
    """Parse ASCII PLY with a vertex element carrying x, y, z properties."""
    with open(path, "r", errors="replace") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0].strip() != "ply":
        raise SceneError(f"{path}: missing 'ply' magic line")
    it = iter(enumerate(lines[1:], start=1))
    fmt = None
    elements: list[tuple[str, int]] = []
    props: dict[str, list[str]] = {}
    current = None
    header_end = None
    for i, ln in it:
        tok = ln.split()
        if not tok:
            continue
        if tok[0] == "comment":
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3:
                raise SceneError(f"{path}: malformed element declaration: {ln!r}")
            try:
                count = int(tok[2])
            except ValueError:
                raise SceneError(f"{path}: bad element count in {ln!r}") from None
            current = tok[1]
            elements.append((current, count))
            props[current] = []
        elif tok[0] == "property":
            if current is None:
                raise SceneError(f"{path}: property before any element")
            props[current].append(tok[-1])
        elif tok[0] == "end_header":
            header_end = i
            break
        else:
            raise SceneError(f"{path}: unrecognized header line: {ln!r}")
    if header_end is None:
        raise SceneError(f"{path}: header never terminated with end_header")
    if fmt != "ascii":
        raise SceneError(f"{path}: only ASCII PLY is supported, got format {fmt!r}")
    names = [e for e, _ in elements]
    if "vertex" not in names:
        raise SceneError(f"{path}: no vertex element declared")

    body = [ln for ln in lines[header_end + 1 :] if ln.strip()]
    cursor = 0
    points = None
    normals = None
    for elem, count in elements:
        rows = body[cursor : cursor + count]
        if len(rows) < count:
            raise SceneError(
                f"{path}: element '{elem}' declares {count} rows but only {len(rows)} present"
            )
        cursor += count
        if elem != "vertex":
            continue
        cols = props[elem]
        for need in ("x", "y", "z"):
            if need not in cols:
                raise SceneError(f"{path}: vertex element lacks '{need}' property")
        try:
            data = np.array([[float(v) for v in r.split()] for r in rows])
        except ValueError as e:
            raise SceneError(f"{path}: non-numeric vertex data: {e}") from e
        if data.shape[1] != len(cols):
            raise SceneError(f"{path}: vertex rows do not match declared property count")
        idx = [cols.index(c) for c in ("x", "y", "z")]
        points = data[:, idx]
        if all(c in cols for c in ("nx", "ny", "nz")):
            normals = data[:, [cols.index(c) for c in ("nx", "ny", "nz")]]
    if points is None:
        raise SceneError(f"{path}: vertex element missing")
    if not np.all(np.isfinite(points)):
        raise SceneError(f"{path}: non-finite vertex coordinates")
    return ScenePointCloud(points=points, normals=normals)


def plane_grid(extent: float = 20.0, spacing: float = 0.02, z: float = 0.0) -> ScenePointCloud:
    """Regular xy grid at height z, centered on the origin."""
    half = extent / 2.0
    n = int(round(extent / spacing)) + 1
    xs = -half + spacing * np.arange(n)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, z)])
    return ScenePointCloud(points=pts)
