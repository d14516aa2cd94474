# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled ray-casting and sector-scan kernels.

Mirrors ``_kernels_py`` operation for operation; see that module for the
argument conventions.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, atan2, floor, remainder, INFINITY, NAN, M_PI

cnp.import_array()

cdef double HIT_EPS = 1e-12


cdef inline double _ray_box(double ox, double oy, double oz,
                            double dx, double dy, double dz,
                            const double[:, ::1] boxes, Py_ssize_t j,
                            int* axis_out, double* face_out) noexcept nogil:
    cdef double t_enter = -INFINITY
    cdef double t_exit = INFINITY
    cdef int axis = -1
    cdef double face = 0.0
    cdef double o[3]
    cdef double d[3]
    cdef double lo, hi, t1, t2, f1, tmp
    cdef int a
    o[0] = ox; o[1] = oy; o[2] = oz
    d[0] = dx; d[1] = dy; d[2] = dz
    for a in range(3):
        lo = boxes[j, a]
        hi = boxes[j, a + 3]
        if d[a] == 0.0:
            if o[a] < lo or o[a] > hi:
                return INFINITY
            continue
        t1 = (lo - o[a]) / d[a]
        t2 = (hi - o[a]) / d[a]
        f1 = lo
        if t1 > t2:
            tmp = t1; t1 = t2; t2 = tmp
            f1 = hi
        if t1 > t_enter:
            t_enter = t1
            axis = a
            face = f1
        if t2 < t_exit:
            t_exit = t2
    if axis < 0 or t_enter > t_exit or t_enter <= HIT_EPS:
        return INFINITY
    axis_out[0] = axis
    face_out[0] = face
    return t_enter


cdef inline double _ray_cylinder(double ox, double oy, double oz,
                                 double dx, double dy, double dz,
                                 const double[:, ::1] cyls, Py_ssize_t j,
                                 double* cap_out) noexcept nogil:
    cdef double cx = cyls[j, 0], cy = cyls[j, 1], r = cyls[j, 2]
    cdef double z0 = cyls[j, 3], z1 = cyls[j, 4]
    cdef double best = INFINITY
    cdef double cap = NAN
    cdef double fx = ox - cx
    cdef double fy = oy - cy
    cdef double a = dx * dx + dy * dy
    cdef double b, c, disc, t, z, px, py, zc
    cdef int k
    if a > 0.0:
        b = 2.0 * (fx * dx + fy * dy)
        c = fx * fx + fy * fy - r * r
        disc = b * b - 4.0 * a * c
        if disc >= 0.0:
            t = (-b - sqrt(disc)) / (2.0 * a)
            if t > HIT_EPS:
                z = oz + t * dz
                if z0 <= z <= z1:
                    best = t
    if dz != 0.0:
        for k in range(2):
            zc = z0 if k == 0 else z1
            t = (zc - oz) / dz
            if HIT_EPS < t < best:
                px = fx + t * dx
                py = fy + t * dy
                if px * px + py * py <= r * r:
                    best = t
                    cap = zc
    cap_out[0] = cap
    return best


def cast_rays(origins, dirs, boxes, cylinders, double max_range):
    cdef const double[:, ::1] o = np.ascontiguousarray(origins, dtype=np.float64)
    cdef const double[:, ::1] d = np.ascontiguousarray(dirs, dtype=np.float64)
    cdef const double[:, ::1] bx = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 6)
    cdef const double[:, ::1] cy = np.ascontiguousarray(cylinders, dtype=np.float64).reshape(-1, 5)
    cdef Py_ssize_t n = o.shape[0]
    points_arr = np.full((n, 3), np.nan)
    ranges_arr = np.full(n, np.inf)
    cdef double[:, ::1] points = points_arr
    cdef double[::1] ranges = ranges_arr
    cdef Py_ssize_t i, j
    cdef double ox, oy, oz, dx, dy, dz, best, t, snap_value, face, cap
    cdef int snap_axis, axis
    with nogil:
        for i in range(n):
            ox = o[i, 0]; oy = o[i, 1]; oz = o[i, 2]
            dx = d[i, 0]; dy = d[i, 1]; dz = d[i, 2]
            best = INFINITY
            snap_axis = -1
            snap_value = 0.0
            for j in range(bx.shape[0]):
                axis = -1
                t = _ray_box(ox, oy, oz, dx, dy, dz, bx, j, &axis, &face)
                if t < best:
                    best = t
                    snap_axis = axis
                    snap_value = face
            for j in range(cy.shape[0]):
                t = _ray_cylinder(ox, oy, oz, dx, dy, dz, cy, j, &cap)
                if t < best:
                    best = t
                    if cap == cap:
                        snap_axis = 2
                        snap_value = cap
                    else:
                        snap_axis = -1
            if best <= max_range:
                points[i, 0] = ox + best * dx
                points[i, 1] = oy + best * dy
                points[i, 2] = oz + best * dz
                if snap_axis >= 0:
                    points[i, snap_axis] = snap_value
                ranges[i] = best
    return points_arr, ranges_arr


def sector_scan(points, double x, double y, double theta, double max_range,
                double offset, Py_ssize_t n_bins, double half_fov):
    cdef const double[:, ::1] pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 2)
    dist_arr = np.full(n_bins, np.inf)
    bearing_arr = np.full(n_bins, np.nan)
    cdef double[::1] dist = dist_arr
    cdef double[::1] bearing = bearing_arr
    cdef double width = 2.0 * half_fov / n_bins
    cdef double two_pi = 2.0 * M_PI
    cdef double ex, ey, r, b, dd
    cdef Py_ssize_t i, k
    with nogil:
        for i in range(pts.shape[0]):
            ex = pts[i, 0] - x
            ey = pts[i, 1] - y
            r = sqrt(ex * ex + ey * ey)
            if r > max_range or r == 0.0:
                continue
            b = remainder(atan2(ey, ex) - theta, two_pi)
            if b <= -M_PI:
                b = M_PI
            if b < -half_fov or b > half_fov:
                continue
            k = <Py_ssize_t>floor((b + half_fov) / width)
            if k >= n_bins:
                k = n_bins - 1
            dd = r - offset
            if dd < dist[k]:
                dist[k] = dd
                bearing[k] = b
    return dist_arr, bearing_arr


# --- fused 3-state EKF step ---------------------------------------------------

from libc.math cimport sin, cos
from libc.stdlib cimport malloc, free

cdef int OK = 0, ILL_CONDITIONED = 1, NOT_PSD = 2, COINCIDENT = 3
cdef double PSD_EPS = 1e-12
cdef double MAX_CONDITION = 1e12


cdef inline double _wrap(double a) noexcept nogil:
    cdef double r = remainder(a, 2.0 * M_PI)
    if r <= -M_PI:
        r = M_PI
    return r


cdef inline bint _psd3(double* P) noexcept nogil:
    cdef double a = P[0] + PSD_EPS
    if not a > 0.0:
        return False
    cdef double l10 = P[3] / a
    cdef double l20 = P[6] / a
    cdef double d1 = P[4] + PSD_EPS - l10 * P[3]
    if not d1 > 0.0:
        return False
    cdef double l21 = (P[7] - l20 * P[3]) / d1
    cdef double d2 = P[8] + PSD_EPS - l20 * P[6] - l21 * l21 * d1
    return d2 > 0.0


cdef inline void _store_symmetric(double[::1] buf, double* P) noexcept nogil:
    cdef int i, j
    for i in range(3):
        for j in range(3):
            buf[3 + 3 * i + j] = 0.5 * (P[3 * i + j] + P[3 * j + i])


def ekf_predict(double[::1] buf, double wR, double wL, double dt,
                double R, double L, double delta, double q_floor=0.0):
    cdef double x = buf[0], y = buf[1], th = buf[2]
    cdef double P[9]
    cdef double A[9]
    cdef double W[6]
    cdef double AP[9]
    cdef double Pn[9]
    cdef int i, j
    for i in range(9):
        P[i] = buf[3 + i]
    cdef double ds_L = dt * R * wL
    cdef double ds_R = dt * R * wR
    cdef double ds = (ds_L + ds_R) / 2.0
    cdef double dth = (ds_R - ds_L) / L
    cdef double m = th + dth / 2.0
    cdef double c = cos(m)
    cdef double s = sin(m)
    A[0] = 1.0; A[1] = 0.0; A[2] = -ds * s
    A[3] = 0.0; A[4] = 1.0; A[5] = ds * c
    A[6] = 0.0; A[7] = 0.0; A[8] = 1.0
    W[0] = 0.5 * c - ds * s / (2.0 * L)
    W[1] = 0.5 * c + ds * s / (2.0 * L)
    W[2] = 0.5 * s + ds * c / (2.0 * L)
    W[3] = 0.5 * s - ds * c / (2.0 * L)
    W[4] = 1.0 / L
    W[5] = -1.0 / L
    cdef double k = (dt * R) * (dt * R)
    cdef double qR = k * (delta * wR * wR + q_floor)
    cdef double qL = k * (delta * wL * wL + q_floor)
    for i in range(3):
        for j in range(3):
            AP[3 * i + j] = A[3 * i] * P[j] + A[3 * i + 1] * P[3 + j] + A[3 * i + 2] * P[6 + j]
    for i in range(3):
        for j in range(3):
            Pn[3 * i + j] = (AP[3 * i] * A[3 * j] + AP[3 * i + 1] * A[3 * j + 1]
                             + AP[3 * i + 2] * A[3 * j + 2]
                             + W[2 * i] * qR * W[2 * j] + W[2 * i + 1] * qL * W[2 * j + 1])
    buf[0] = x + ds * c
    buf[1] = y + ds * s
    buf[2] = _wrap(th + dth)
    _store_symmetric(buf, Pn)
    for i in range(9):
        P[i] = buf[3 + i]
    return OK if _psd3(P) else NOT_PSD


cdef int _correct(double[::1] buf, const double[:, ::1] meas, bint joseph,
                  double* H, double* res, double* var, double* PHt, double* S,
                  double* C, double* K, double* tmp) noexcept nogil:
    cdef Py_ssize_t n = meas.shape[0]
    cdef double x = buf[0], y = buf[1], th = buf[2]
    cdef double P[9]
    cdef double IKH[9]
    cdef double M[9]
    cdef double Pn[9]
    cdef double dxv[3]
    cdef Py_ssize_t i, j, k, a, b
    cdef int kind
    cdef double z, dx, dy, r2, r, acc, dmin, dmax
    for i in range(9):
        P[i] = buf[3 + i]
    for i in range(3 * n):
        H[i] = 0.0
    for i in range(n):
        kind = <int>meas[i, 0]
        z = meas[i, 1]
        var[i] = meas[i, 2]
        if kind == 0:
            H[3 * i + 2] = 1.0
            res[i] = _wrap(z - th)
            continue
        dx = meas[i, 3] - x
        dy = meas[i, 4] - y
        r2 = dx * dx + dy * dy
        r = sqrt(r2)
        if r < 1e-12:
            return COINCIDENT
        if kind == 1:
            H[3 * i] = -dx / r
            H[3 * i + 1] = -dy / r
            res[i] = z - r
        else:
            H[3 * i] = dy / r2
            H[3 * i + 1] = -dx / r2
            H[3 * i + 2] = -1.0
            res[i] = _wrap(z - _wrap(atan2(dy, dx) - th))
    for a in range(3):
        for i in range(n):
            PHt[a * n + i] = (P[3 * a] * H[3 * i] + P[3 * a + 1] * H[3 * i + 1]
                              + P[3 * a + 2] * H[3 * i + 2])
    for i in range(n):
        for j in range(n):
            S[i * n + j] = (H[3 * i] * PHt[j] + H[3 * i + 1] * PHt[n + j]
                            + H[3 * i + 2] * PHt[2 * n + j])
        S[i * n + i] += var[i]
    for i in range(n * n):
        C[i] = 0.0
    for i in range(n):
        for j in range(i + 1):
            acc = S[i * n + j]
            for k in range(j):
                acc -= C[i * n + k] * C[j * n + k]
            if i == j:
                if not acc > 0.0:
                    return ILL_CONDITIONED
                C[i * n + i] = sqrt(acc)
            else:
                C[i * n + j] = acc / C[j * n + j]
    dmin = C[0]
    dmax = C[0]
    for i in range(1, n):
        if C[i * n + i] < dmin:
            dmin = C[i * n + i]
        if C[i * n + i] > dmax:
            dmax = C[i * n + i]
    if (dmax / dmin) * (dmax / dmin) > MAX_CONDITION:
        return ILL_CONDITIONED
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
    for a in range(3):
        acc = 0.0
        for i in range(n):
            acc += K[a * n + i] * res[i]
        dxv[a] = acc
    for a in range(3):
        for b in range(3):
            acc = 1.0 if a == b else 0.0
            for i in range(n):
                acc -= K[a * n + i] * H[3 * i + b]
            IKH[3 * a + b] = acc
    for a in range(3):
        for b in range(3):
            M[3 * a + b] = IKH[3 * a] * P[b] + IKH[3 * a + 1] * P[3 + b] + IKH[3 * a + 2] * P[6 + b]
    if joseph:
        for a in range(3):
            for b in range(3):
                acc = M[3 * a] * IKH[3 * b] + M[3 * a + 1] * IKH[3 * b + 1] + M[3 * a + 2] * IKH[3 * b + 2]
                for i in range(n):
                    acc += K[a * n + i] * var[i] * K[b * n + i]
                Pn[3 * a + b] = acc
    else:
        for i in range(9):
            Pn[i] = M[i]
    buf[0] = x + dxv[0]
    buf[1] = y + dxv[1]
    buf[2] = _wrap(th + dxv[2])
    _store_symmetric(buf, Pn)
    for i in range(9):
        P[i] = buf[3 + i]
    return OK if _psd3(P) else NOT_PSD


def ekf_correct(double[::1] buf, meas, bint joseph):
    """``meas`` is a sequence of (kind, z, variance, lx, ly) rows."""
    cdef Py_ssize_t n = len(meas)
    if n == 0:
        return OK
    cdef double* work = <double*>malloc((12 * n + 2 * n * n + 5 * n) * sizeof(double))
    if work == NULL:
        raise MemoryError()
    cdef double* rows = work + 12 * n + 2 * n * n
    cdef double[:, ::1] mv = <double[:n, :5]> rows
    cdef Py_ssize_t i, j
    cdef int status
    try:
        for i in range(n):
            row = meas[i]
            for j in range(5):
                rows[5 * i + j] = row[j]
        with nogil:
            status = _correct(buf, mv, joseph,
                              work, work + 3 * n, work + 4 * n, work + 5 * n,
                              work + 8 * n, work + 8 * n + n * n,
                              work + 8 * n + 2 * n * n, work + 11 * n + 2 * n * n)
    finally:
        free(work)
    return status


def nees3(double[::1] buf, double tx, double ty, double tth):
    cdef double e0 = tx - buf[0]
    cdef double e1 = ty - buf[1]
    cdef double e2 = _wrap(tth - buf[2])
    cdef double a = buf[3]
    if not a > 0.0:
        return INFINITY
    cdef double l10 = buf[6] / a
    cdef double l20 = buf[9] / a
    cdef double d1 = buf[7] - l10 * buf[6]
    if not d1 > 0.0:
        return INFINITY
    cdef double l21 = (buf[10] - l20 * buf[6]) / d1
    cdef double d2 = buf[11] - l20 * buf[9] - l21 * l21 * d1
    if not d2 > 0.0:
        return INFINITY
    cdef double u0 = e0
    cdef double u1 = e1 - l10 * u0
    cdef double u2 = e2 - l20 * u0 - l21 * u1
    return u0 * u0 / a + u1 * u1 / d1 + u2 * u2 / d2
