"""Conversions between rotation representations.

Supported representations, all batched over arbitrary leading dimensions:

- rotation matrix   (..., 3, 3), orthonormal with det +1
- 6D continuous     (..., 6), the first two matrix columns stacked
- unit quaternion   (..., 4) in (w, x, y, z) order, canonicalized to w >= 0
- axis-angle        (..., 3), axis * angle in radians; canonical angle in [0, pi]

All functions are torch-based and differentiable except where noted, and
preserve the input dtype. Degenerate inputs raise rather than silently
producing invalid rotations.
"""

from __future__ import annotations

import torch
from torch import Tensor

from .errors import DegenerateInput, InvalidRotation

# Residual norm below which Gram-Schmidt is considered degenerate.
DEGENERACY_EPS = 1e-8


def sixd_to_matrix(r: Tensor) -> Tensor:
    """Map a 6D rotation (..., 6) to a rotation matrix (..., 3, 3).

    The two stacked 3-vectors are treated as the first two matrix columns:
    the first is normalized, the second orthogonalized against it, and the
    third column is their cross product.

    Raises:
        DegenerateInput: if the first vector is (near-)zero or the second is
            (near-)parallel to it.
    """
    if r.shape[-1] != 6:
        raise DegenerateInput(f"expected (..., 6), got {tuple(r.shape)}")
    v1 = r[..., :3]
    v2 = r[..., 3:]
    n1 = torch.linalg.vector_norm(v1, dim=-1, keepdim=True)
    if bool((n1 < DEGENERACY_EPS).any()):
        raise DegenerateInput("first 6D vector has (near-)zero norm")
    b1 = v1 / n1
    resid = v2 - (b1 * v2).sum(dim=-1, keepdim=True) * b1
    nres = torch.linalg.vector_norm(resid, dim=-1, keepdim=True)
    if bool((nres < DEGENERACY_EPS).any()):
        raise DegenerateInput("second 6D vector is (near-)parallel to the first")
    b2 = resid / nres
    b3 = torch.linalg.cross(b1, b2, dim=-1)
    return torch.stack([b1, b2, b3], dim=-1)


def matrix_to_sixd(m: Tensor, check: bool = True) -> Tensor:
    """Return the first two columns of a rotation matrix, stacked as (..., 6).

    Raises:
        InvalidRotation: if `check` and orthonormality or det +1 fails
            beyond 1e-4.
    """
    _expect_matrix_shape(m)
    if check:
        validate_matrix(m, tol=1e-4)
    return torch.cat([m[..., :, 0], m[..., :, 1]], dim=-1)


def validate_matrix(m: Tensor, tol: float = 1e-4) -> None:
    """Raise InvalidRotation unless m is orthonormal with det +1 within tol."""
    _expect_matrix_shape(m)
    eye = torch.eye(3, dtype=m.dtype, device=m.device)
    ortho_err = (m.transpose(-1, -2) @ m - eye).abs().max()
    det_err = (torch.linalg.det(m) - 1.0).abs().max()
    if bool(ortho_err > tol) or bool(det_err > tol):
        raise InvalidRotation(
            f"not a rotation: max |R^T R - I| = {float(ortho_err):.3g}, "
            f"max |det - 1| = {float(det_err):.3g}"
        )


def axis_angle_to_matrix(a: Tensor) -> Tensor:
    """Rodrigues formula, (..., 3) axis*angle -> (..., 3, 3).

    Zero vectors map to the identity; small angles use series expansions of
    sin(t)/t and (1-cos t)/t^2 so the map stays smooth.
    """
    if a.shape[-1] != 3:
        raise DegenerateInput(f"expected (..., 3), got {tuple(a.shape)}")
    angle = torch.linalg.vector_norm(a, dim=-1, keepdim=True)
    small = angle < 1e-6
    angle_sq = angle * angle
    sinc = torch.where(small, 1.0 - angle_sq / 6.0, torch.sin(angle) / angle.clamp(min=1e-30))
    cosc = torch.where(small, 0.5 - angle_sq / 24.0, (1.0 - torch.cos(angle)) / angle_sq.clamp(min=1e-30))

    x, y, z = a[..., 0], a[..., 1], a[..., 2]
    zero = torch.zeros_like(x)
    k = torch.stack(
        [
            torch.stack([zero, -z, y], dim=-1),
            torch.stack([z, zero, -x], dim=-1),
            torch.stack([-y, x, zero], dim=-1),
        ],
        dim=-2,
    )
    eye = torch.eye(3, dtype=a.dtype, device=a.device).expand(k.shape)
    return eye + sinc[..., None] * k + cosc[..., None] * (k @ k)


def matrix_to_axis_angle(m: Tensor) -> Tensor:
    """Rotation matrix -> canonical axis-angle with angle in [0, pi]."""
    return quaternion_to_axis_angle(matrix_to_quaternion(m))


def quaternion_to_matrix(q: Tensor) -> Tensor:
    """Unit quaternion (w, x, y, z) -> rotation matrix. Input is normalized."""
    if q.shape[-1] != 4:
        raise DegenerateInput(f"expected (..., 4), got {tuple(q.shape)}")
    q = q / torch.linalg.vector_norm(q, dim=-1, keepdim=True).clamp(min=DEGENERACY_EPS)
    w, x, y, z = q.unbind(dim=-1)
    row0 = torch.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], dim=-1)
    row1 = torch.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], dim=-1)
    row2 = torch.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], dim=-1)
    return torch.stack([row0, row1, row2], dim=-2)


def matrix_to_quaternion(m: Tensor) -> Tensor:
    """Rotation matrix -> unit quaternion with w >= 0.

    Uses the four-pivot construction, selecting per element the branch with
    the largest pivot for numerical stability. Not intended for use inside
    differentiated graphs.
    """
    _expect_matrix_shape(m)
    m00, m01, m02 = m[..., 0, 0], m[..., 0, 1], m[..., 0, 2]
    m10, m11, m12 = m[..., 1, 0], m[..., 1, 1], m[..., 1, 2]
    m20, m21, m22 = m[..., 2, 0], m[..., 2, 1], m[..., 2, 2]

    # 4 * q_i^2 for each pivot choice
    four_wsq = (1.0 + m00 + m11 + m22).clamp(min=0.0)
    four_xsq = (1.0 + m00 - m11 - m22).clamp(min=0.0)
    four_ysq = (1.0 - m00 + m11 - m22).clamp(min=0.0)
    four_zsq = (1.0 - m00 - m11 + m22).clamp(min=0.0)

    pivots = torch.stack([four_wsq, four_xsq, four_ysq, four_zsq], dim=-1)
    best = pivots.argmax(dim=-1, keepdim=True)

    def branch(four_sq, a, b, c, order):
        pivot = 0.5 * torch.sqrt(four_sq)
        denom = (4.0 * pivot).clamp(min=1e-12)
        parts = {"p": pivot, "a": a / denom, "b": b / denom, "c": c / denom}
        return torch.stack([parts[key] for key in order], dim=-1)

    qw = branch(four_wsq, m21 - m12, m02 - m20, m10 - m01, "pabc")
    qx = branch(four_xsq, m21 - m12, m01 + m10, m02 + m20, "apbc")
    qy = branch(four_ysq, m02 - m20, m01 + m10, m12 + m21, "abpc")
    qz = branch(four_zsq, m10 - m01, m02 + m20, m12 + m21, "abcp")

    stacked = torch.stack([qw, qx, qy, qz], dim=-2)  # (..., 4 branches, 4)
    index = best[..., None].expand(*best.shape[:-1], 1, 4)
    q = stacked.gather(dim=-2, index=index).squeeze(-2)
    return canonicalize_quaternion(q / torch.linalg.vector_norm(q, dim=-1, keepdim=True))


def canonicalize_quaternion(q: Tensor) -> Tensor:
    """Flip sign so w >= 0 (both signs encode the same rotation)."""
    return torch.where(q[..., :1] < 0.0, -q, q)


def axis_angle_to_quaternion(a: Tensor) -> Tensor:
    """Axis-angle -> unit quaternion with w >= 0."""
    if a.shape[-1] != 3:
        raise DegenerateInput(f"expected (..., 3), got {tuple(a.shape)}")
    angle = torch.linalg.vector_norm(a, dim=-1, keepdim=True)
    half = 0.5 * angle
    small = angle < 1e-6
    # sin(t/2)/t, with series fallback near zero
    factor = torch.where(small, 0.5 - angle * angle / 48.0, torch.sin(half) / angle.clamp(min=1e-30))
    q = torch.cat([torch.cos(half), factor * a], dim=-1)
    return canonicalize_quaternion(q)


def quaternion_to_axis_angle(q: Tensor) -> Tensor:
    """Unit quaternion -> canonical axis-angle (angle in [0, pi])."""
    q = canonicalize_quaternion(q / torch.linalg.vector_norm(q, dim=-1, keepdim=True).clamp(min=DEGENERACY_EPS))
    w = q[..., :1]
    v = q[..., 1:]
    vnorm = torch.linalg.vector_norm(v, dim=-1, keepdim=True)
    angle = 2.0 * torch.atan2(vnorm, w)
    # angle / sin(angle/2) -> 2 as the rotation approaches identity
    factor = torch.where(vnorm < 1e-8, 2.0 / w.clamp(min=DEGENERACY_EPS), angle / vnorm.clamp(min=1e-30))
    return factor * v


def canonicalize_axis_angle(a: Tensor) -> Tensor:
    """Wrap an axis-angle vector to the canonical angle range [0, pi]."""
    return quaternion_to_axis_angle(axis_angle_to_quaternion(a))


def geodesic_distance(m1: Tensor, m2: Tensor) -> Tensor:
    """Angle in [0, pi] of the relative rotation m1^T m2, batched.

    The trace argument is clamped to [-1, 1], so near-identical inputs do not
    produce NaNs.
    """
    _expect_matrix_shape(m1)
    _expect_matrix_shape(m2)
    rel = m1.transpose(-1, -2) @ m2
    trace = rel[..., 0, 0] + rel[..., 1, 1] + rel[..., 2, 2]
    return torch.acos(torch.clamp((trace - 1.0) / 2.0, -1.0, 1.0))


def random_rotations(
    shape,
    generator: torch.Generator | None = None,
    dtype: torch.dtype = torch.float64,
) -> Tensor:
    """Uniform random rotation matrices of shape (*shape, 3, 3).

    Samples isotropic Gaussian 4-vectors and normalizes them, which is
    uniform on the unit quaternion sphere and hence on SO(3).
    """
    if isinstance(shape, int):
        shape = (shape,)
    q = torch.randn(*shape, 4, generator=generator, dtype=dtype)
    q = q / torch.linalg.vector_norm(q, dim=-1, keepdim=True).clamp(min=DEGENERACY_EPS)
    return quaternion_to_matrix(q)


def _expect_matrix_shape(m: Tensor) -> None:
    if m.shape[-2:] != (3, 3):
        raise InvalidRotation(f"expected (..., 3, 3), got {tuple(m.shape)}")
