"""Z-buffer point-splatting kernels.

Two interchangeable backends compute bit-identical depth buffers:

* ``numba`` (default): one nopython kernel covering transform, projection
  and splatting, compiled with ``nogil=True`` so rendering threads run in
  parallel.
* ``numpy``: vectorized fallback, selected by ``VIRTVIEW_NO_NUMBA=1`` or
  automatically when numba is unavailable.

Bit-identity relies on both paths evaluating the same IEEE expressions in
the same order (no fastmath, no BLAS), rounding pixel coordinates with
ties-to-even, and resolving pixel collisions with an exact minimum.
``benchmarks/splat_backends.py`` compares the two.
"""

from __future__ import annotations

import os

import numpy as np


def _splat_numpy(points, rotation, translation, fx, fy, cx, cy,
                 width, height, splat_radius, max_range):
    r = rotation
    t = translation
    p0, p1, p2 = points[:, 0], points[:, 1], points[:, 2]
    # Expression order matches the numba kernel exactly.
    x = p0 * r[0, 0] + p1 * r[0, 1] + p2 * r[0, 2] + t[0]
    y = p0 * r[1, 0] + p1 * r[1, 1] + p2 * r[1, 2] + t[1]
    z = p0 * r[2, 0] + p1 * r[2, 1] + p2 * r[2, 2] + t[2]
    keep = (z > 0.0) & (z < max_range)
    x, y, z = x[keep], y[keep], z[keep]
    u = fx * x / z + cx
    v = fy * y / z + cy
    # Cull far outside the frame before the int conversion (same guard as
    # the numba kernel, so the surviving pixel sets match exactly).
    margin = splat_radius + 1.0
    inb = (u > -margin) & (u < width + margin) & (v > -margin) & (v < height + margin)
    u, v, z = u[inb], v[inb], z[inb]
    iu = np.rint(u).astype(np.int64)
    iv = np.rint(v).astype(np.int64)

    buf = np.full((height, width), np.inf)
    for dv in range(-splat_radius, splat_radius + 1):
        for du in range(-splat_radius, splat_radius + 1):
            pu = iu + du
            pv = iv + dv
            ok = (pu >= 0) & (pu < width) & (pv >= 0) & (pv < height)
            np.minimum.at(buf, (pv[ok], pu[ok]), z[ok])
    buf[np.isinf(buf)] = 0.0
    return buf


def _build_numba_kernel():
    from numba import njit

    @njit(nogil=True, cache=True)
    def _splat_numba(points, rotation, translation, fx, fy, cx, cy,
                     width, height, splat_radius, max_range):
        buf = np.zeros((height, width))
        n = points.shape[0]
        r00 = rotation[0, 0]
        r01 = rotation[0, 1]
        r02 = rotation[0, 2]
        r10 = rotation[1, 0]
        r11 = rotation[1, 1]
        r12 = rotation[1, 2]
        r20 = rotation[2, 0]
        r21 = rotation[2, 1]
        r22 = rotation[2, 2]
        t0 = translation[0]
        t1 = translation[1]
        t2 = translation[2]
        for i in range(n):
            p0 = points[i, 0]
            p1 = points[i, 1]
            p2 = points[i, 2]
            z = p0 * r20 + p1 * r21 + p2 * r22 + t2
            if z <= 0.0 or z >= max_range:
                continue
            x = p0 * r00 + p1 * r01 + p2 * r02 + t0
            y = p0 * r10 + p1 * r11 + p2 * r12 + t1
            u = fx * x / z + cx
            v = fy * y / z + cy
            margin = splat_radius + 1.0
            if u <= -margin or u >= width + margin:
                continue
            if v <= -margin or v >= height + margin:
                continue
            iu = int(np.rint(u))
            iv = int(np.rint(v))
            for dv in range(-splat_radius, splat_radius + 1):
                pv = iv + dv
                if pv < 0 or pv >= height:
                    continue
                for du in range(-splat_radius, splat_radius + 1):
                    pu = iu + du
                    if pu < 0 or pu >= width:
                        continue
                    old = buf[pv, pu]
                    if old == 0.0 or z < old:
                        buf[pv, pu] = z
        return buf

    return _splat_numba


_FORCE_NUMPY = os.environ.get("VIRTVIEW_NO_NUMBA", "0") not in ("", "0")
_numba_kernel = None
if not _FORCE_NUMPY:
    try:
        _numba_kernel = _build_numba_kernel()
    except ImportError:  # pragma: no cover - numba is a declared dependency
        _numba_kernel = None


def active_backend() -> str:
    return "numpy" if _numba_kernel is None else "numba"


def splat_points(points, rotation, translation, fx, fy, cx, cy,
                 width, height, splat_radius, max_range, backend=None):
    """Transform, project and z-buffer-splat ``points`` into a depth buffer.

    Points behind the camera or at/beyond ``max_range`` are skipped; each
    surviving point writes its depth to every pixel within Chebyshev
    distance ``splat_radius`` of its rounded projection, keeping the
    per-pixel minimum.  Untouched pixels stay 0.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64)
    rot = np.ascontiguousarray(rotation, dtype=np.float64)
    tr = np.ascontiguousarray(translation, dtype=np.float64)
    if backend is None:
        backend = active_backend()
    if backend == "numba":
        if _numba_kernel is None:
            raise RuntimeError("numba backend unavailable")
        fn = _numba_kernel
    elif backend == "numpy":
        fn = _splat_numpy
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return fn(pts, rot, tr, float(fx), float(fy), float(cx), float(cy),
              int(width), int(height), int(splat_radius), float(max_range))
