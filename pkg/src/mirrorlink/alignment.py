"""Registration toolkit: closed-form similarity estimation between
corresponded point sets, point-to-point ICP, and camera pose from 2D-3D
correspondences (DLT + Gauss-Newton reprojection refinement).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PoseSE3, Quaternion, SimilarityTransform, apply_similarity


class DegenerateConfiguration(ValueError):
    pass


class InsufficientCorrespondences(ValueError):
    pass


class DegenerateGeometry(ValueError):
    pass


@dataclass
class RegistrationResult:
    transform: SimilarityTransform
    rmse: float
    iterations: int
    converged: bool
    rmse_history: list[float]


def estimate_similarity(
    source: np.ndarray,
    target: np.ndarray,
    with_scale: bool = True,
    fixed_scale: float | None = None,
) -> SimilarityTransform:
    """Least-squares (s, R, t) mapping source[i] onto target[i].

    Closed form: centroid subtraction, SVD of the cross-covariance with a
    determinant sign correction for a proper rotation, trace formula for the
    scale. `fixed_scale` pins s (shared-scale batch estimation).
    """
    src = np.asarray(source, dtype=float).reshape(-1, 3)
    dst = np.asarray(target, dtype=float).reshape(-1, 3)
    if src.shape != dst.shape:
        raise ValueError("source and target must have matching shapes")
    n = src.shape[0]
    if n < 3:
        raise InsufficientCorrespondences("need at least 3 correspondences")
    mu_s = src.mean(axis=0)
    mu_t = dst.mean(axis=0)
    cs = src - mu_s
    ct = dst - mu_t
    var_s = float((cs**2).sum()) / n
    if np.linalg.matrix_rank(cs, tol=1e-12) < 2:
        raise DegenerateConfiguration("source points are collinear or coincident")
    cov = ct.T @ cs / n
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    if fixed_scale is not None:
        s = float(fixed_scale)
    elif with_scale:
        s = float(np.trace(np.diag(D) @ S) / var_s)
    else:
        s = 1.0
    if s <= 0:
        raise DegenerateConfiguration(f"estimated non-positive scale {s}")
    t = mu_t - s * (R @ mu_s)
    return SimilarityTransform(s, Quaternion.from_rotation_matrix(R), t)


def icp_register(
    source: np.ndarray,
    target: np.ndarray,
    max_iterations: int = 50,
    tolerance: float = 1e-8,
    with_scale: bool = False,
) -> RegistrationResult:
    """Point-to-point ICP: nearest neighbors via k-d tree, then the closed
    form above, until the rmse improvement drops below the tolerance.

    The logged per-iteration rmse (after each estimation step) is
    non-increasing by the usual alternation argument.
    """
    src = np.asarray(source, dtype=float).reshape(-1, 3)
    dst = np.asarray(target, dtype=float).reshape(-1, 3)
    if src.size == 0 or dst.size == 0:
        raise ValueError("point clouds must be non-empty")
    tree = cKDTree(dst)
    transform = SimilarityTransform.identity()
    history: list[float] = []
    converged = False
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        moved = apply_similarity(transform, src)
        _, idx = tree.query(moved)
        matched = dst[idx]
        transform = estimate_similarity(src, matched, with_scale=with_scale)
        moved = apply_similarity(transform, src)
        rmse = float(np.sqrt(np.mean(np.sum((moved - matched) ** 2, axis=1))))
        history.append(rmse)
        if len(history) >= 2 and history[-2] - rmse < tolerance:
            converged = True
            break
        if rmse == 0.0:
            converged = True
            break
    return RegistrationResult(transform, history[-1], iterations, converged, history)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int = 0
    height: int = 0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1]])

    @staticmethod
    def from_dict(d: dict) -> "CameraIntrinsics":
        # distortion coefficients are accepted but ignored (pinhole model)
        return CameraIntrinsics(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d.get("width", 0)),
            height=int(d.get("height", 0)),
        )


def project(intrinsics: CameraIntrinsics, pose: PoseSE3, points: np.ndarray) -> np.ndarray:
    """Pinhole projection of world points through a world-to-camera pose."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    cam = pts @ pose.orientation.to_rotation_matrix().T + pose.position
    z = cam[:, 2]
    if np.any(z <= 1e-12):
        raise ValueError("point at or behind the camera plane")
    u = intrinsics.fx * cam[:, 0] / z + intrinsics.cx
    v = intrinsics.fy * cam[:, 1] / z + intrinsics.cy
    return np.stack([u, v], axis=1)


def _dlt_pose(intrinsics: CameraIntrinsics, points3d: np.ndarray, pixels: np.ndarray) -> PoseSE3:
    n = points3d.shape[0]
    # Normalized camera coordinates remove the intrinsics from the DLT.
    xn = (pixels[:, 0] - intrinsics.cx) / intrinsics.fx
    yn = (pixels[:, 1] - intrinsics.cy) / intrinsics.fy
    A = np.zeros((2 * n, 12))
    for i in range(n):
        X = np.append(points3d[i], 1.0)
        A[2 * i, 0:4] = X
        A[2 * i, 8:12] = -xn[i] * X
        A[2 * i + 1, 4:8] = X
        A[2 * i + 1, 8:12] = -yn[i] * X
    _, sv, Vt = np.linalg.svd(A)
    if sv[-2] < 1e-12:
        raise DegenerateGeometry("correspondences do not constrain the pose")
    P = Vt[-1].reshape(3, 4)
    M = P[:, :3]
    if np.linalg.det(M) < 0:
        P = -P
        M = P[:, :3]
    # Orthonormalize: M = c * R with c recovered from the singular values.
    U, D, Vt2 = np.linalg.svd(M)
    c = float(np.mean(D))
    if c < 1e-12:
        raise DegenerateGeometry("degenerate projection matrix")
    R = U @ Vt2
    t = P[:, 3] / c
    pose = PoseSE3(t, Quaternion.from_rotation_matrix(R))
    cam = points3d @ pose.orientation.to_rotation_matrix().T + pose.position
    if np.median(cam[:, 2]) < 0:
        raise DegenerateGeometry("DLT placed the scene behind the camera")
    return pose


def _so3_exp(w: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(w))
    K = np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]])
    if angle < 1e-12:
        return np.eye(3) + K
    return (
        np.eye(3)
        + math.sin(angle) / angle * K
        + (1 - math.cos(angle)) / (angle * angle) * (K @ K)
    )


def reprojection_rmse(
    intrinsics: CameraIntrinsics, pose: PoseSE3, points3d: np.ndarray, pixels: np.ndarray
) -> float:
    """Per-coordinate RMSE in pixels (comparable to the pixel noise sigma)."""
    err = project(intrinsics, pose, points3d) - pixels
    return float(np.sqrt(np.mean(err**2)))


def register_camera(
    intrinsics: CameraIntrinsics,
    points3d: np.ndarray,
    pixels: np.ndarray,
    max_iterations: int = 50,
) -> tuple[PoseSE3, float]:
    """World-to-camera pose from >= 6 non-coplanar 2D-3D correspondences.

    DLT initialization followed by Gauss-Newton on the 6-DoF pose; returns
    (pose, final reprojection RMSE in pixels).
    """
    pts = np.asarray(points3d, dtype=float).reshape(-1, 3)
    px = np.asarray(pixels, dtype=float).reshape(-1, 2)
    if pts.shape[0] != px.shape[0]:
        raise ValueError("points and pixels must correspond 1:1")
    n = pts.shape[0]
    if n < 6:
        raise InsufficientCorrespondences(f"need at least 6 correspondences, got {n}")
    centered = pts - pts.mean(axis=0)
    if np.linalg.matrix_rank(centered, tol=1e-9) < 3:
        raise DegenerateGeometry("3D points are coplanar or collinear")

    pose = _dlt_pose(intrinsics, pts, px)
    R = pose.orientation.to_rotation_matrix()
    t = pose.position.copy()

    def residual(Rm, tv):
        cam = pts @ Rm.T + tv
        z = cam[:, 2]
        u = intrinsics.fx * cam[:, 0] / z + intrinsics.cx
        v = intrinsics.fy * cam[:, 1] / z + intrinsics.cy
        return np.stack([u, v], axis=1) - px, cam

    for _ in range(max_iterations):
        res, cam = residual(R, t)
        J = np.zeros((2 * n, 6))
        x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
        # d(pixel)/d(camera point), chained with d(cam)/d(rotation, translation):
        # cam = exp(w) R p + t, linearized about w = 0.
        for i in range(n):
            du_dc = np.array([intrinsics.fx / z[i], 0.0, -intrinsics.fx * x[i] / z[i] ** 2])
            dv_dc = np.array([0.0, intrinsics.fy / z[i], -intrinsics.fy * y[i] / z[i] ** 2])
            dc_dw = -_skew(cam[i] - t)
            J[2 * i, :3] = du_dc @ dc_dw
            J[2 * i, 3:] = du_dc
            J[2 * i + 1, :3] = dv_dc @ dc_dw
            J[2 * i + 1, 3:] = dv_dc
        g = J.T @ res.reshape(-1)
        H = J.T @ J + 1e-12 * np.eye(6)
        try:
            delta = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError as exc:
            raise DegenerateGeometry("normal equations are singular") from exc
        R = _so3_exp(delta[:3]) @ R
        t = t + delta[3:]
        if np.linalg.norm(delta) < 1e-14:
            break
    pose = PoseSE3(t, Quaternion.from_rotation_matrix(R))
    return pose, reprojection_rmse(intrinsics, pose, pts, px)


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])


def compose_frame_chain(
    sim_to_recon: SimilarityTransform, camera_in_recon: PoseSE3
) -> PoseSE3:
    """Map a camera pose through the similarity: position via s*R*p + t,
    orientation composed with the similarity rotation."""
    return PoseSE3(
        apply_similarity(sim_to_recon, camera_in_recon.position),
        sim_to_recon.rotation.multiply(camera_in_recon.orientation),
    )


# -- file formats ---------------------------------------------------------


def read_ply(path: str | Path) -> np.ndarray:
    """Vertex positions from an ASCII or binary-little-endian PLY file."""
    raw = Path(path).read_bytes()
    if not raw.startswith(b"ply"):
        raise ValueError("not a PLY file")
    end = raw.index(b"end_header\n") + len(b"end_header\n")
    header = raw[:end].decode("ascii").splitlines()
    fmt = next(line.split()[1] for line in header if line.startswith("format"))
    count = 0
    props: list[tuple[str, str]] = []
    in_vertex = False
    for line in header:
        parts = line.split()
        if parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                count = int(parts[2])
        elif parts[0] == "property" and in_vertex:
            props.append((parts[1], parts[2]))
    names = [name for _, name in props]
    for needed in ("x", "y", "z"):
        if needed not in names:
            raise ValueError(f"PLY vertex element missing property {needed}")
    if fmt == "ascii":
        rows = []
        for line in raw[end:].decode("ascii").splitlines()[:count]:
            vals = line.split()
            rows.append([float(vals[names.index(c)]) for c in ("x", "y", "z")])
        return np.asarray(rows, dtype=float)
    if fmt != "binary_little_endian":
        raise ValueError(f"unsupported PLY format {fmt!r}")
    type_size = {"float": 4, "float32": 4, "double": 8, "float64": 8,
                 "uchar": 1, "uint8": 1, "char": 1, "int8": 1,
                 "short": 2, "ushort": 2, "int": 4, "uint": 4}
    stride = sum(type_size[t] for t, _ in props)
    out = np.empty((count, 3))
    offset = end
    for i in range(count):
        pos = offset
        values = {}
        for t, name in props:
            size = type_size[t]
            if name in ("x", "y", "z"):
                if t in ("float", "float32"):
                    (values[name],) = struct.unpack_from("<f", raw, pos)
                elif t in ("double", "float64"):
                    (values[name],) = struct.unpack_from("<d", raw, pos)
                else:
                    raise ValueError(f"vertex coordinate of type {t!r}")
            pos += size
        out[i] = (values["x"], values["y"], values["z"])
        offset += stride
    return out


def write_ply(path: str | Path, points: np.ndarray, binary: bool = False) -> None:
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if binary:
        header = (
            "ply\nformat binary_little_endian 1.0\n"
            f"element vertex {len(pts)}\n"
            "property float x\nproperty float y\nproperty float z\nend_header\n"
        )
        body = pts.astype("<f4").tobytes()
        Path(path).write_bytes(header.encode("ascii") + body)
    else:
        lines = ["ply", "format ascii 1.0", f"element vertex {len(pts)}",
                 "property float x", "property float y", "property float z", "end_header"]
        lines += [f"{p[0]} {p[1]} {p[2]}" for p in pts]
        Path(path).write_text("\n".join(lines) + "\n")


def read_correspondences(path: str | Path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """CSV rows `id,X,Y,Z,u,v` -> (points3d, pixels, ids); header optional."""
    import csv

    points, pixels, ids = [], [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().lower() == "id":
                continue
            ids.append(row[0].strip())
            points.append([float(v) for v in row[1:4]])
            pixels.append([float(v) for v in row[4:6]])
    return np.asarray(points, dtype=float), np.asarray(pixels, dtype=float), ids


def load_intrinsics(path: str | Path) -> CameraIntrinsics:
    return CameraIntrinsics.from_dict(json.loads(Path(path).read_text()))


def transform_to_dict(t: SimilarityTransform) -> dict:
    return {
        "s": t.scale,
        "quat_wxyz": [t.rotation.w, t.rotation.x, t.rotation.y, t.rotation.z],
        "t": [float(v) for v in t.translation],
    }


def transform_from_dict(d: dict) -> SimilarityTransform:
    return SimilarityTransform(
        float(d["s"]), Quaternion(*d["quat_wxyz"]), np.asarray(d["t"], dtype=float)
    )
