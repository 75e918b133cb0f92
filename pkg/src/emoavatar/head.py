"""Linear blendshape head template with a skinned jaw joint.

The template is a generated stand-in for a licensed morphable face model:
a mean point cloud on an ellipsoid front hemisphere, a smooth expression
basis localized to face regions, and one jaw rotation applied with
per-vertex skin weights. The driving parameter vector is the expression
coefficients concatenated with the jaw axis-angle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError, DomainError
from .util import subrng

REGIONS = ("brow", "eye", "nose", "mouth", "jaw", "other")


@dataclass
class HeadTemplate:
    """Mean geometry plus deformation model.

    mean_vertices: (V, 3) rest positions
    exp_basis:     (V, 3, E) linear expression directions
    jaw_pivot:     (3,) rotation pivot
    jaw_axis_frame:(3, 3) orthonormal; maps jaw axis-angle into world axes
    skin_weights:  (V,) in [0, 1], fraction of the jaw rotation applied
    region_labels: (V,) indices into REGIONS
    """

    mean_vertices: np.ndarray
    exp_basis: np.ndarray
    jaw_pivot: np.ndarray
    jaw_axis_frame: np.ndarray
    skin_weights: np.ndarray
    region_labels: np.ndarray

    def __post_init__(self):
        self.mean_vertices = np.asarray(self.mean_vertices, dtype=np.float64)
        self.exp_basis = np.asarray(self.exp_basis, dtype=np.float64)
        self.jaw_pivot = np.asarray(self.jaw_pivot, dtype=np.float64)
        self.jaw_axis_frame = np.asarray(self.jaw_axis_frame, dtype=np.float64)
        self.skin_weights = np.asarray(self.skin_weights, dtype=np.float64)
        self.region_labels = np.asarray(self.region_labels, dtype=np.int64)

        v = self.mean_vertices.shape[0]
        if v < 4 or self.mean_vertices.shape != (v, 3):
            raise DomainError(f"need at least 4 vertices of dim 3, got {self.mean_vertices.shape}")
        if self.exp_basis.ndim != 3 or self.exp_basis.shape[:2] != (v, 3) or self.exp_basis.shape[2] < 1:
            raise DimensionError(f"exp_basis shape {self.exp_basis.shape} does not match V={v}")
        if self.skin_weights.shape != (v,) or self.region_labels.shape != (v,):
            raise DimensionError("skin_weights/region_labels must be per-vertex")
        err = np.abs(self.jaw_axis_frame @ self.jaw_axis_frame.T - np.eye(3)).max()
        if err > 1e-10:
            raise DomainError(f"jaw_axis_frame not orthonormal (deviation {err:.2e})")
        if self.skin_weights.min() < 0.0 or self.skin_weights.max() > 1.0:
            raise DomainError("skin_weights outside [0, 1]")
        fixed = np.isin(self.region_labels, [REGIONS.index("brow"), REGIONS.index("eye")])
        if np.any(self.skin_weights[fixed] != 0.0):
            raise DomainError("brow/eye vertices must have zero jaw weight")

    @property
    def vertex_count(self) -> int:
        return self.mean_vertices.shape[0]

    @property
    def expression_dims(self) -> int:
        return self.exp_basis.shape[2]

    @property
    def param_dims(self) -> int:
        return self.expression_dims + 3

    def basis_matrix(self) -> np.ndarray:
        """Expression basis as (E, V*3), rows flattened in vertex-major order."""
        v, _, e = self.exp_basis.shape
        return self.exp_basis.reshape(v * 3, e).T

    def region_vertices(self, name: str) -> np.ndarray:
        return np.nonzero(self.region_labels == REGIONS.index(name))[0]


@dataclass
class HeadParams:
    """Driving parameters: expression coefficients plus jaw axis-angle."""

    exp: np.ndarray
    jaw: np.ndarray

    def __post_init__(self):
        self.exp = np.asarray(self.exp, dtype=np.float64).reshape(-1)
        self.jaw = np.asarray(self.jaw, dtype=np.float64).reshape(-1)
        if self.jaw.shape != (3,):
            raise DimensionError(f"jaw must be a 3-vector, got {self.jaw.shape}")
        if np.linalg.norm(self.jaw) > np.pi + 1e-12:
            raise DomainError(f"jaw angle {np.linalg.norm(self.jaw):.3f} exceeds pi")

    def concat(self) -> np.ndarray:
        return np.concatenate([self.exp, self.jaw])

    @staticmethod
    def from_vector(p: np.ndarray, expression_dims: int) -> "HeadParams":
        p = np.asarray(p, dtype=np.float64).reshape(-1)
        if p.shape[0] != expression_dims + 3:
            raise DimensionError(f"expected length {expression_dims + 3}, got {p.shape[0]}")
        return HeadParams(p[:expression_dims], p[expression_dims:])


@dataclass
class AvatarState:
    """Posed geometry with per-vertex colors in [0, 1]."""

    vertices: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        if not np.all(np.isfinite(self.vertices)):
            raise DomainError("vertices must be finite")
        self.colors = np.clip(np.asarray(self.colors, dtype=np.float64), 0.0, 1.0)
        if self.vertices.shape != self.colors.shape or self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise DimensionError(
                f"vertices {self.vertices.shape} and colors {self.colors.shape} must both be (V, 3)")


def rodrigues(axis_angle) -> np.ndarray:
    """Rotation matrix for an axis-angle 3-vector; the zero vector gives identity."""
    w = np.asarray(axis_angle, dtype=np.float64).reshape(3)
    theta = np.linalg.norm(w)
    if theta == 0.0:
        return np.eye(3)
    k = w / theta
    kx = np.array([[0.0, -k[2], k[1]],
                   [k[2], 0.0, -k[0]],
                   [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(theta) * kx + (1.0 - np.cos(theta)) * (kx @ kx)


def synthesize_vertices(template: HeadTemplate, params: HeadParams) -> np.ndarray:
    """Posed vertices: linear blendshape offset then skinned jaw rotation.

    V_i = blend_i + w_i * (R(jaw) (blend_i - pivot) + pivot - blend_i)
    """
    if params.exp.shape[0] != template.expression_dims:
        raise DimensionError(
            f"expression dims mismatch: template has {template.expression_dims}, "
            f"params have {params.exp.shape[0]}")
    blend = template.mean_vertices + self_basis_offset(template, params.exp)
    world_jaw = template.jaw_axis_frame @ params.jaw
    if np.linalg.norm(world_jaw) == 0.0:
        return blend  # exact rest articulation, no rotation round-trip
    rot = rodrigues(world_jaw)
    moved = (blend - template.jaw_pivot) @ rot.T + template.jaw_pivot
    w = template.skin_weights[:, None]
    return blend + w * (moved - blend)


def self_basis_offset(template: HeadTemplate, exp: np.ndarray) -> np.ndarray:
    return np.einsum("vde,e->vd", template.exp_basis, exp)


def synthesize_sequence(template: HeadTemplate, p_seq: np.ndarray) -> np.ndarray:
    """Posed vertices for a (F, E+3) parameter sequence, returned as (F, V, 3)."""
    p_seq = np.asarray(p_seq, dtype=np.float64)
    out = np.empty((p_seq.shape[0], template.vertex_count, 3))
    for f in range(p_seq.shape[0]):
        out[f] = synthesize_vertices(template, HeadParams.from_vector(p_seq[f], template.expression_dims))
    return out


def synthesize_blocks_t(tape, template: HeadTemplate, exp_seq: T.Tensor, jaw_seq: T.Tensor):
    """Differentiable batched synthesis over F frames.

    Takes (F, E) expression and (F, 3) jaw tensors; returns per-axis (F, V)
    tensors (x, y, z). Uses the pivot-cancelled form
    V = blend + w * (a(s) (omega x O) + b(s) (omega x (omega x O)))
    with O = blend - pivot and s = |omega|^2, which equals the rotation
    formula in ``synthesize_vertices`` exactly.
    """
    v = template.vertex_count
    basis = template.exp_basis  # (V, 3, E)
    mean = template.mean_vertices

    blends = []
    offsets = []
    for axis in range(3):
        bt = T.const(np.ascontiguousarray(basis[:, axis, :].T))  # (E, V)
        blend = T.add_rowvec(tape, T.matmul(tape, exp_seq, bt), T.const(mean[:, axis]))
        blends.append(blend)
        offsets.append(T.add(tape, blend, -float(template.jaw_pivot[axis])))

    omega = T.matmul(tape, jaw_seq, T.const(np.ascontiguousarray(template.jaw_axis_frame.T)))
    wx = T.slice_cols(tape, omega, 0, 1)
    wy = T.slice_cols(tape, omega, 1, 2)
    wz = T.slice_cols(tape, omega, 2, 3)
    ox, oy, oz = offsets

    def cross(axv, ayv, azv, bx, by, bz):
        cx = T.sub(tape, T.scale_rows(tape, bz, ayv), T.scale_rows(tape, by, azv))
        cy = T.sub(tape, T.scale_rows(tape, bx, azv), T.scale_rows(tape, bz, axv))
        cz = T.sub(tape, T.scale_rows(tape, by, axv), T.scale_rows(tape, bx, ayv))
        return cx, cy, cz

    c1 = cross(wx, wy, wz, ox, oy, oz)
    c2 = cross(wx, wy, wz, *c1)

    s = T.add(tape, T.add(tape, T.mul(tape, wx, wx), T.mul(tape, wy, wy)), T.mul(tape, wz, wz))
    ca = T.rot_coef_a(tape, s)
    cb = T.rot_coef_b(tape, s)

    weights = T.const(template.skin_weights)
    out = []
    for axis in range(3):
        delta = T.add(tape, T.scale_rows(tape, c1[axis], ca), T.scale_rows(tape, c2[axis], cb))
        out.append(T.add(tape, blends[axis], T.scale_cols(tape, delta, weights)))
    if out[0].data.shape != (exp_seq.data.shape[0], v):  # pragma: no cover
        raise DimensionError("internal shape error in batched synthesis")
    return tuple(out)


# ---------------------------------------------------------------------------
# default template generation

_ELLIPSOID = (0.75, 1.0, 0.6)

# (region, x_n, y_n) anchor placements guaranteeing every region is populated
_REGION_ANCHORS = (
    ("brow", 0.0, 0.6), ("brow", 0.25, 0.55),
    ("eye", 0.35, 0.3), ("eye", -0.35, 0.3),
    ("nose", 0.0, 0.0), ("nose", 0.1, -0.05),
    ("mouth", 0.0, -0.35), ("mouth", 0.2, -0.3),
    ("jaw", 0.0, -0.7), ("jaw", 0.15, -0.65),
    ("other", 0.6, 0.0), ("other", -0.6, -0.3),
)

_BASIS_REGION_CYCLE = ("brow", "eye", "mouth")


def _classify_region(x_n: np.ndarray, y_n: np.ndarray) -> np.ndarray:
    labels = np.full(x_n.shape, REGIONS.index("other"), dtype=np.int64)
    ax = np.abs(x_n)
    labels[y_n > 0.45] = REGIONS.index("brow")
    band = (y_n > 0.15) & (y_n <= 0.45)
    labels[band & (ax >= 0.2)] = REGIONS.index("eye")
    labels[band & (ax < 0.2)] = REGIONS.index("nose")
    band = (y_n > -0.2) & (y_n <= 0.15)
    labels[band & (ax < 0.25)] = REGIONS.index("nose")
    band = (y_n > -0.55) & (y_n <= -0.2)
    labels[band & (ax < 0.5)] = REGIONS.index("mouth")
    labels[y_n <= -0.55] = REGIONS.index("jaw")
    return labels


def make_default_template(seed: int, vertex_count: int = 512, expression_dims: int = 16) -> HeadTemplate:
    """Deterministic pseudo-face on an ellipsoid front hemisphere.

    Region labels come from latitude/longitude bands, the expression basis
    is a set of smooth regional bumps, and jaw skin weights ramp toward the
    chin. Identical seeds produce bit-identical templates.
    """
    if vertex_count < 64:
        raise DomainError(f"vertex_count must be >= 64, got {vertex_count}")
    if expression_dims < 4:
        raise DomainError(f"expression_dims must be >= 4, got {expression_dims}")
    rng = subrng(seed, "template")
    a, b, c = _ELLIPSOID

    n_anchor = len(_REGION_ANCHORS)
    xy_n = np.empty((vertex_count, 2))
    for i, (_, x_n, y_n) in enumerate(_REGION_ANCHORS):
        xy_n[i] = (x_n, y_n)
    # remaining vertices: uniform directions on the front (z >= 0) hemisphere
    raw = rng.normal(size=(vertex_count - n_anchor, 3))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    raw[:, 2] = np.abs(raw[:, 2])
    xy_n[n_anchor:] = raw[:, :2]

    z_n = np.sqrt(np.maximum(1.0 - xy_n[:, 0] ** 2 - xy_n[:, 1] ** 2, 0.0))
    verts = np.column_stack([a * xy_n[:, 0], b * xy_n[:, 1], c * z_n])
    labels = _classify_region(xy_n[:, 0], xy_n[:, 1])

    weights = np.clip((-xy_n[:, 1] - 0.15) / 0.6, 0.0, 1.0)
    weights[np.isin(labels, [REGIONS.index("brow"), REGIONS.index("eye")])] = 0.0

    basis = np.zeros((vertex_count, 3, expression_dims))
    for k in range(expression_dims):
        region = _BASIS_REGION_CYCLE[k % len(_BASIS_REGION_CYCLE)]
        members = np.nonzero(labels == REGIONS.index(region))[0]
        center = verts[members[rng.integers(0, members.size)]]
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        envelope = np.exp(-((verts - center) ** 2).sum(axis=1) / (2.0 * 0.35**2))
        column = envelope[:, None] * direction[None, :]
        target = rng.uniform(0.5, 2.0)
        basis[:, :, k] = column * (target / np.linalg.norm(column))

    norms = np.linalg.norm(basis.reshape(-1, expression_dims), axis=0)
    assert np.all((norms >= 0.1) & (norms <= 10.0)), "basis column norms out of range"

    return HeadTemplate(
        mean_vertices=verts,
        exp_basis=basis,
        jaw_pivot=np.array([0.0, -0.2, 0.0]),
        jaw_axis_frame=np.eye(3),
        skin_weights=weights,
        region_labels=labels,
    )
