"""Pure-Python kernels. Reference semantics for ``_kernels.pyx``.

Both implementations perform the same floating-point operations in the same
order so that simulation logs do not depend on which one is loaded.
"""
import math

import numpy as np

HIT_EPS = 1e-12


def _ray_box(ox, oy, oz, dx, dy, dz, box):
    """Entry distance of a ray into an axis-aligned box, or inf.

    Returns ``(t, axis, face_value)``; rays starting inside the box are
    ignored (the sensor cannot see the box it sits in).
    """
    t_enter = -math.inf
    t_exit = math.inf
    axis = -1
    face = 0.0
    o = (ox, oy, oz)
    d = (dx, dy, dz)
    for a in range(3):
        lo = box[a]
        hi = box[a + 3]
        if d[a] == 0.0:
            if o[a] < lo or o[a] > hi:
                return math.inf, -1, 0.0
            continue
        t1 = (lo - o[a]) / d[a]
        t2 = (hi - o[a]) / d[a]
        f1 = lo
        if t1 > t2:
            t1, t2 = t2, t1
            f1 = hi
        if t1 > t_enter:
            t_enter = t1
            axis = a
            face = f1
        if t2 < t_exit:
            t_exit = t2
    if axis < 0 or t_enter > t_exit or t_enter <= HIT_EPS:
        return math.inf, -1, 0.0
    return t_enter, axis, face


def _ray_cylinder(ox, oy, oz, dx, dy, dz, cyl):
    """Entry distance of a ray into a vertical capped cylinder, or inf.

    Returns ``(t, cap_z)`` where ``cap_z`` is NaN for side hits.
    """
    cx, cy, r, z0, z1 = cyl[0], cyl[1], cyl[2], cyl[3], cyl[4]
    best = math.inf
    cap = math.nan
    fx = ox - cx
    fy = oy - cy
    a = dx * dx + dy * dy
    if a > 0.0:
        b = 2.0 * (fx * dx + fy * dy)
        c = fx * fx + fy * fy - r * r
        disc = b * b - 4.0 * a * c
        if disc >= 0.0:
            t = (-b - math.sqrt(disc)) / (2.0 * a)
            if t > HIT_EPS:
                z = oz + t * dz
                if z0 <= z <= z1:
                    best = t
    if dz != 0.0:
        for zc in (z0, z1):
            t = (zc - oz) / dz
            if HIT_EPS < t < best:
                px = fx + t * dx
                py = fy + t * dy
                if px * px + py * py <= r * r:
                    best = t
                    cap = zc
    return best, cap


def cast_rays(origins, dirs, boxes, cylinders, max_range):
    """Nearest surface hit for each ray.

    ``origins`` and ``dirs`` are (n, 3); ``dirs`` must be unit vectors.
    ``boxes`` rows are (xmin, ymin, zmin, xmax, ymax, zmax); ``cylinders``
    rows are (cx, cy, radius, zmin, zmax). Returns ``(points, ranges)``;
    misses have range ``inf`` and NaN points. Planar-face hits are snapped
    onto the face so they lie on it exactly.
    """
    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    boxes = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 6)
    cylinders = np.ascontiguousarray(cylinders, dtype=np.float64).reshape(-1, 5)
    n = origins.shape[0]
    points = np.full((n, 3), np.nan)
    ranges = np.full(n, np.inf)
    box_rows = boxes.tolist()
    cyl_rows = cylinders.tolist()
    for i, (o, d) in enumerate(zip(origins.tolist(), dirs.tolist())):
        ox, oy, oz = o
        dx, dy, dz = d
        best = math.inf
        snap_axis = -1
        snap_value = 0.0
        for box in box_rows:
            t, axis, face = _ray_box(ox, oy, oz, dx, dy, dz, box)
            if t < best:
                best, snap_axis, snap_value = t, axis, face
        for cyl in cyl_rows:
            t, cap = _ray_cylinder(ox, oy, oz, dx, dy, dz, cyl)
            if t < best:
                best = t
                if cap == cap:
                    snap_axis, snap_value = 2, cap
                else:
                    snap_axis = -1
        if best <= max_range:
            hit = [ox + best * dx, oy + best * dy, oz + best * dz]
            if snap_axis >= 0:
                hit[snap_axis] = snap_value
            points[i] = hit
            ranges[i] = best
    return points, ranges


def sector_scan(points, x, y, theta, max_range, offset, n_bins, half_fov):
    """Virtual range scan over a 2D point map.

    Splits the frontal field ``[-half_fov, half_fov]`` (robot frame) into
    ``n_bins`` equal bins and keeps the nearest point of each. Returned
    distances are measured from the robot center minus ``offset`` (the body
    radius); empty bins hold ``inf`` distance and NaN bearing.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 2)
    dist = np.full(n_bins, np.inf)
    bearing = np.full(n_bins, np.nan)
    width = 2.0 * half_fov / n_bins
    two_pi = 2.0 * math.pi
    for px, py in pts.tolist():
        ex = px - x
        ey = py - y
        r = math.sqrt(ex * ex + ey * ey)
        if r > max_range or r == 0.0:
            continue
        b = math.remainder(math.atan2(ey, ex) - theta, two_pi)
        if b <= -math.pi:
            b = math.pi
        if b < -half_fov or b > half_fov:
            continue
        k = int(math.floor((b + half_fov) / width))
        if k >= n_bins:
            k = n_bins - 1
        d = r - offset
        if d < dist[k]:
            dist[k] = d
            bearing[k] = b
    return dist, bearing


# --- fused 3-state EKF step ---------------------------------------------------
#
# ``buf`` is a float64 array of 12: (x, y, theta, P00, P01, ..., P22), updated
# in place. Status codes: 0 ok, 1 innovation covariance ill-conditioned,
# 2 covariance not PSD, 3 robot coincides with a landmark.

OK, ILL_CONDITIONED, NOT_PSD, COINCIDENT = 0, 1, 2, 3
KIND_COMPASS, KIND_RANGE, KIND_BEARING = 0, 1, 2
PSD_EPS = 1e-12
MAX_CONDITION = 1e12
_TWO_PI = 2.0 * math.pi


def _wrap(a):
    r = math.remainder(a, _TWO_PI)
    if r <= -math.pi:
        r = math.pi
    return r


def _psd3(P):
    """True when P + eps*I admits an LDL^T factorization with positive pivots."""
    a = P[0] + PSD_EPS
    if not a > 0.0:
        return False
    l10 = P[3] / a
    l20 = P[6] / a
    d1 = P[4] + PSD_EPS - l10 * P[3]
    if not d1 > 0.0:
        return False
    l21 = (P[7] - l20 * P[3]) / d1
    d2 = P[8] + PSD_EPS - l20 * P[6] - l21 * l21 * d1
    return d2 > 0.0


def _store_symmetric(buf, P):
    for i in range(3):
        for j in range(3):
            buf[3 + 3 * i + j] = 0.5 * (P[3 * i + j] + P[3 * j + i])


def ekf_predict(buf, wR, wL, dt, R, L, delta, q_floor=0.0):
    x, y, th = buf[0], buf[1], buf[2]
    P = [buf[3 + k] for k in range(9)]
    ds_L = dt * R * wL
    ds_R = dt * R * wR
    ds = (ds_L + ds_R) / 2.0
    dth = (ds_R - ds_L) / L
    m = th + dth / 2.0
    c = math.cos(m)
    s = math.sin(m)
    a02 = -ds * s
    a12 = ds * c
    w00 = 0.5 * c - ds * s / (2.0 * L)
    w01 = 0.5 * c + ds * s / (2.0 * L)
    w10 = 0.5 * s + ds * c / (2.0 * L)
    w11 = 0.5 * s - ds * c / (2.0 * L)
    w20 = 1.0 / L
    w21 = -1.0 / L
    k = (dt * R) * (dt * R)
    qR = k * (delta * wR * wR + q_floor)
    qL = k * (delta * wL * wL + q_floor)
    A = (1.0, 0.0, a02, 0.0, 1.0, a12, 0.0, 0.0, 1.0)
    W = (w00, w01, w10, w11, w20, w21)
    AP = [0.0] * 9
    for i in range(3):
        for j in range(3):
            AP[3 * i + j] = A[3 * i] * P[j] + A[3 * i + 1] * P[3 + j] + A[3 * i + 2] * P[6 + j]
    Pn = [0.0] * 9
    for i in range(3):
        for j in range(3):
            Pn[3 * i + j] = (AP[3 * i] * A[3 * j] + AP[3 * i + 1] * A[3 * j + 1]
                             + AP[3 * i + 2] * A[3 * j + 2]
                             + W[2 * i] * qR * W[2 * j] + W[2 * i + 1] * qL * W[2 * j + 1])
    buf[0] = x + ds * c
    buf[1] = y + ds * s
    buf[2] = _wrap(th + dth)
    _store_symmetric(buf, Pn)
    return OK if _psd3([buf[3 + k] for k in range(9)]) else NOT_PSD


def ekf_correct(buf, meas, joseph):
    """Stacked update; ``meas`` is a sequence of (kind, z, variance, lx, ly) rows."""
    x, y, th = buf[0], buf[1], buf[2]
    P = [buf[3 + k] for k in range(9)]
    rows = [[float(v) for v in r] for r in meas]
    n = len(rows)
    if n == 0:
        return OK
    H = [0.0] * (3 * n)
    res = [0.0] * n
    var = [0.0] * n
    for i, (kind, z, v, lx, ly) in enumerate(rows):
        kind = int(kind)
        var[i] = v
        if kind == KIND_COMPASS:
            H[3 * i + 2] = 1.0
            res[i] = _wrap(z - th)
            continue
        dx = lx - x
        dy = ly - y
        r2 = dx * dx + dy * dy
        r = math.sqrt(r2)
        if r < 1e-12:
            return COINCIDENT
        if kind == KIND_RANGE:
            H[3 * i] = -dx / r
            H[3 * i + 1] = -dy / r
            res[i] = z - r
        else:
            H[3 * i] = dy / r2
            H[3 * i + 1] = -dx / r2
            H[3 * i + 2] = -1.0
            res[i] = _wrap(z - _wrap(math.atan2(dy, dx) - th))
    # PHt[a][i]
    PHt = [0.0] * (3 * n)
    for a in range(3):
        for i in range(n):
            PHt[a * n + i] = (P[3 * a] * H[3 * i] + P[3 * a + 1] * H[3 * i + 1]
                              + P[3 * a + 2] * H[3 * i + 2])
    S = [0.0] * (n * n)
    for i in range(n):
        for j in range(n):
            S[i * n + j] = (H[3 * i] * PHt[j] + H[3 * i + 1] * PHt[n + j]
                            + H[3 * i + 2] * PHt[2 * n + j])
        S[i * n + i] += var[i]
    # Cholesky S = C C^T
    C = [0.0] * (n * n)
    for i in range(n):
        for j in range(i + 1):
            acc = S[i * n + j]
            for k in range(j):
                acc -= C[i * n + k] * C[j * n + k]
            if i == j:
                if not acc > 0.0:
                    return ILL_CONDITIONED
                C[i * n + i] = math.sqrt(acc)
            else:
                C[i * n + j] = acc / C[j * n + j]
    dmin = min(C[i * n + i] for i in range(n))
    dmax = max(C[i * n + i] for i in range(n))
    if (dmax / dmin) * (dmax / dmin) > MAX_CONDITION:
        return ILL_CONDITIONED
    # K[a][i]: solve S k_a = PHt[a]
    K = [0.0] * (3 * n)
    tmp = [0.0] * n
    for a in range(3):
        for i in range(n):
            acc = PHt[a * n + i]
            for k in range(i):
                acc -= C[i * n + k] * tmp[k]
            tmp[i] = acc / C[i * n + i]
        for i in range(n - 1, -1, -1):
            acc = tmp[i]
            for k in range(i + 1, n):
                acc -= C[k * n + i] * K[a * n + k]
            K[a * n + i] = acc / C[i * n + i]
    dxv = [0.0, 0.0, 0.0]
    for a in range(3):
        acc = 0.0
        for i in range(n):
            acc += K[a * n + i] * res[i]
        dxv[a] = acc
    IKH = [0.0] * 9
    for a in range(3):
        for b in range(3):
            acc = 1.0 if a == b else 0.0
            for i in range(n):
                acc -= K[a * n + i] * H[3 * i + b]
            IKH[3 * a + b] = acc
    M = [0.0] * 9
    for a in range(3):
        for b in range(3):
            M[3 * a + b] = IKH[3 * a] * P[b] + IKH[3 * a + 1] * P[3 + b] + IKH[3 * a + 2] * P[6 + b]
    Pn = [0.0] * 9
    if joseph:
        for a in range(3):
            for b in range(3):
                acc = M[3 * a] * IKH[3 * b] + M[3 * a + 1] * IKH[3 * b + 1] + M[3 * a + 2] * IKH[3 * b + 2]
                for i in range(n):
                    acc += K[a * n + i] * var[i] * K[b * n + i]
                Pn[3 * a + b] = acc
    else:
        Pn = M
    buf[0] = x + dxv[0]
    buf[1] = y + dxv[1]
    buf[2] = _wrap(th + dxv[2])
    _store_symmetric(buf, Pn)
    return OK if _psd3([buf[3 + k] for k in range(9)]) else NOT_PSD


def nees3(buf, tx, ty, tth):
    """e^T P^-1 e for e = truth - mean; inf if P is not positive definite."""
    e0 = tx - buf[0]
    e1 = ty - buf[1]
    e2 = _wrap(tth - buf[2])
    P = [buf[3 + k] for k in range(9)]
    a = P[0]
    if not a > 0.0:
        return math.inf
    l10 = P[3] / a
    l20 = P[6] / a
    d1 = P[4] - l10 * P[3]
    if not d1 > 0.0:
        return math.inf
    l21 = (P[7] - l20 * P[3]) / d1
    d2 = P[8] - l20 * P[6] - l21 * l21 * d1
    if not d2 > 0.0:
        return math.inf
    # solve L u = e (unit lower L), then sum u_i^2 / d_i
    u0 = e0
    u1 = e1 - l10 * u0
    u2 = e2 - l20 * u0 - l21 * u1
    return u0 * u0 / a + u1 * u1 / d1 + u2 * u2 / d2
