# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Semantics mirror ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt, pow, ceil, floor, M_PI

cnp.import_array()

cdef double LOG_2PI = log(2.0 * M_PI)


cdef inline double _lp(const double[:, :] points, Py_ssize_t n,
                       const double[:, :] means, const double[:, :, :] chol,
                       Py_ssize_t k, double base, double* delta, double* y) noexcept nogil:
    cdef int i, j
    delta[0] = points[n, 0] - means[k, 0]
    delta[1] = points[n, 1] - means[k, 1]
    delta[2] = points[n, 2] - means[k, 2]
    # y_j = sum_{i >= j} L_ij delta_i
    y[0] = chol[k, 0, 0] * delta[0] + chol[k, 1, 0] * delta[1] + chol[k, 2, 0] * delta[2]
    y[1] = chol[k, 1, 1] * delta[1] + chol[k, 2, 1] * delta[2]
    y[2] = chol[k, 2, 2] * delta[2]
    return base - 0.5 * (y[0] * y[0] + y[1] * y[1] + y[2] * y[2])


def _bases(log_weights, chol):
    logdet = np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
    return np.ascontiguousarray(log_weights + logdet - 1.5 * np.log(2.0 * np.pi), dtype=np.float64)


def log_mixture_pdf(points, log_weights, means, chol):
    cdef const double[:, :] P = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[:, :] M = np.ascontiguousarray(means, dtype=np.float64)
    cdef const double[:, :, :] L = np.ascontiguousarray(chol, dtype=np.float64)
    cdef const double[:] base = _bases(log_weights, chol)
    cdef Py_ssize_t N = P.shape[0], K = M.shape[0], n, k
    out = np.empty(N)
    cdef double[:] O = out
    cdef double[:] lp = np.empty(K)
    cdef double delta[3]
    cdef double y[3]
    cdef double mx, s
    with nogil:
        for n in range(N):
            mx = -1e308
            for k in range(K):
                lp[k] = _lp(P, n, M, L, k, base[k], delta, y)
                if lp[k] > mx:
                    mx = lp[k]
            s = 0.0
            for k in range(K):
                s += exp(lp[k] - mx)
            O[n] = mx + log(s)
    return out


def nll_grad(points, log_weights, means, chol):
    cdef const double[:, :] P = np.ascontiguousarray(points, dtype=np.float64)
    cdef const double[:, :] M = np.ascontiguousarray(means, dtype=np.float64)
    cdef const double[:, :, :] L = np.ascontiguousarray(chol, dtype=np.float64)
    cdef const double[:] base = _bases(log_weights, chol)
    cdef Py_ssize_t N = P.shape[0], K = M.shape[0], n, k
    cdef int i, j
    resp_sum = np.zeros(K)
    g_mean = np.zeros((K, 3))
    g_chol = np.zeros((K, 3, 3))
    cdef double[:] RS = resp_sum
    cdef double[:, :] GM = g_mean
    cdef double[:, :, :] GL = g_chol
    cdef double[:] lp = np.empty(K)
    cdef double[:, :] D = np.empty((K, 3))
    cdef double[:, :] Y = np.empty((K, 3))
    cdef double mx, s, lse, r, nll = 0.0
    with nogil:
        for n in range(N):
            mx = -1e308
            for k in range(K):
                lp[k] = _lp(P, n, M, L, k, base[k], &D[k, 0], &Y[k, 0])
                if lp[k] > mx:
                    mx = lp[k]
            s = 0.0
            for k in range(K):
                s += exp(lp[k] - mx)
            lse = mx + log(s)
            nll -= lse
            for k in range(K):
                r = exp(lp[k] - lse)
                RS[k] += r
                # g_mean -= r * L y ; g_chol += r * delta_i y_j (lower part)
                for i in range(3):
                    s = 0.0
                    for j in range(i + 1):
                        s += L[k, i, j] * Y[k, j]
                        GL[k, i, j] += r * D[k, i] * Y[k, j]
                    GM[k, i] -= r * s
        for k in range(K):
            for i in range(3):
                GL[k, i, i] -= RS[k] / L[k, i, i]
    return nll, resp_sum, g_mean, g_chol


def silhouette_loss(weights, means2, cov2, target, long q, double cutoff, bint want_grad=True):
    cdef const double[:] W = np.ascontiguousarray(weights, dtype=np.float64)
    cdef const double[:, :] MU = np.ascontiguousarray(means2, dtype=np.float64)
    cdef const double[:, :, :] S = np.ascontiguousarray(cov2, dtype=np.float64)
    cdef const double[:, :] T = np.ascontiguousarray(target, dtype=np.float64)
    cdef Py_ssize_t H = T.shape[0], Wd = T.shape[1], K = W.shape[0]
    cdef Py_ssize_t k, r, c, r0, r1, c0, c1
    d_arr = np.zeros((H, Wd))
    shat_arr = np.empty((H, Wd))
    cdef double[:, :] D = d_arr
    cdef double[:, :] SH = shat_arr
    cdef double[:, :] GD = np.zeros((H, Wd))
    cdef double[:, :] SI = np.empty((K, 3))
    cdef double[:] COEF = np.empty(K)
    cdef double det, dx, dy, maha, phi, dc, rest, diff, e, vx, vy, loss = 0.0
    cdef double sxx, syy, sxy, hx, hy
    cdef double acc_w, acc_mx, acc_my, acc_xx, acc_yy, acc_xy
    g_w = np.zeros(K)
    g_m = np.zeros((K, 2))
    g_S = np.zeros((K, 2, 2))
    cdef double[:] GW = g_w
    cdef double[:, :] GMU = g_m
    cdef double[:, :, :] GS = g_S
    cdef Py_ssize_t[:, :] BOX = np.empty((K, 4), dtype=np.intp)

    with nogil:
        for k in range(K):
            sxx = S[k, 0, 0]
            syy = S[k, 1, 1]
            sxy = 0.5 * (S[k, 0, 1] + S[k, 1, 0])
            det = sxx * syy - S[k, 0, 1] * S[k, 1, 0]
            SI[k, 0] = syy / det
            SI[k, 1] = sxx / det
            SI[k, 2] = -sxy / det
            COEF[k] = 1.0 / (2.0 * M_PI * sqrt(det))
            # pixel centers x = c + 0.5 with |x - mu_x| <= sqrt(cutoff * sxx)
            hx = sqrt(cutoff * sxx)
            hy = sqrt(cutoff * syy)
            c0 = <Py_ssize_t> ceil(MU[k, 0] - hx - 0.5)
            c1 = <Py_ssize_t> floor(MU[k, 0] + hx - 0.5)
            r0 = <Py_ssize_t> ceil(MU[k, 1] - hy - 0.5)
            r1 = <Py_ssize_t> floor(MU[k, 1] + hy - 0.5)
            BOX[k, 0] = c0 if c0 > 0 else 0
            BOX[k, 1] = c1 if c1 < Wd - 1 else Wd - 1
            BOX[k, 2] = r0 if r0 > 0 else 0
            BOX[k, 3] = r1 if r1 < H - 1 else H - 1
            for r in range(BOX[k, 2], BOX[k, 3] + 1):
                dy = r + 0.5 - MU[k, 1]
                for c in range(BOX[k, 0], BOX[k, 1] + 1):
                    dx = c + 0.5 - MU[k, 0]
                    maha = SI[k, 0] * dx * dx + 2.0 * SI[k, 2] * dx * dy + SI[k, 1] * dy * dy
                    if maha <= cutoff:
                        D[r, c] += W[k] * COEF[k] * exp(-0.5 * maha)

        for r in range(H):
            for c in range(Wd):
                dc = D[r, c] if D[r, c] < 1.0 else 1.0
                rest = pow(1.0 - dc, <double> (q - 1))
                SH[r, c] = 1.0 - rest * (1.0 - dc)
                diff = SH[r, c] - T[r, c]
                loss += diff * diff
                if D[r, c] < 1.0:
                    GD[r, c] = 2.0 * diff * q * rest

        if want_grad:
            for k in range(K):
                acc_w = acc_mx = acc_my = acc_xx = acc_yy = acc_xy = 0.0
                for r in range(BOX[k, 2], BOX[k, 3] + 1):
                    dy = r + 0.5 - MU[k, 1]
                    for c in range(BOX[k, 0], BOX[k, 1] + 1):
                        dx = c + 0.5 - MU[k, 0]
                        maha = SI[k, 0] * dx * dx + 2.0 * SI[k, 2] * dx * dy + SI[k, 1] * dy * dy
                        if maha <= cutoff:
                            e = GD[r, c] * COEF[k] * exp(-0.5 * maha)
                            vx = SI[k, 0] * dx + SI[k, 2] * dy
                            vy = SI[k, 2] * dx + SI[k, 1] * dy
                            acc_w += e
                            acc_mx += e * vx
                            acc_my += e * vy
                            acc_xx += e * vx * vx
                            acc_yy += e * vy * vy
                            acc_xy += e * vx * vy
                GW[k] = acc_w
                GMU[k, 0] = W[k] * acc_mx
                GMU[k, 1] = W[k] * acc_my
                GS[k, 0, 0] = 0.5 * W[k] * (acc_xx - acc_w * SI[k, 0])
                GS[k, 1, 1] = 0.5 * W[k] * (acc_yy - acc_w * SI[k, 1])
                GS[k, 0, 1] = 0.5 * W[k] * (acc_xy - acc_w * SI[k, 2])
                GS[k, 1, 0] = GS[k, 0, 1]

    if not want_grad:
        return loss, shat_arr, None, None, None
    return loss, shat_arr, g_w, g_m, g_S


def rasterize_triangles(tri2d, Py_ssize_t width, Py_ssize_t height):
    cdef const double[:, :, :] TRI = np.ascontiguousarray(tri2d, dtype=np.float64).reshape(-1, 3, 2)
    image = np.zeros((height, width), dtype=np.uint8)
    cdef unsigned char[:, :] IMG = image
    cdef Py_ssize_t t, r, c, r0, r1, c0, c1
    cdef double x0, y0, x1, y1, x2, y2, area, sgn, px, py, e0, e1, e2
    with nogil:
        for t in range(TRI.shape[0]):
            x0 = TRI[t, 0, 0]; y0 = TRI[t, 0, 1]
            x1 = TRI[t, 1, 0]; y1 = TRI[t, 1, 1]
            x2 = TRI[t, 2, 0]; y2 = TRI[t, 2, 1]
            area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
            if area == 0.0:
                continue
            sgn = 1.0 if area > 0 else -1.0
            c0 = <Py_ssize_t> ceil(min(x0, min(x1, x2)) - 0.5)
            c1 = <Py_ssize_t> floor(max(x0, max(x1, x2)) - 0.5)
            r0 = <Py_ssize_t> ceil(min(y0, min(y1, y2)) - 0.5)
            r1 = <Py_ssize_t> floor(max(y0, max(y1, y2)) - 0.5)
            if c0 < 0:
                c0 = 0
            if r0 < 0:
                r0 = 0
            if c1 > width - 1:
                c1 = width - 1
            if r1 > height - 1:
                r1 = height - 1
            for r in range(r0, r1 + 1):
                py = r + 0.5
                for c in range(c0, c1 + 1):
                    if IMG[r, c]:
                        continue
                    px = c + 0.5
                    e0 = sgn * ((x1 - x0) * (py - y0) - (y1 - y0) * (px - x0))
                    e1 = sgn * ((x2 - x1) * (py - y1) - (y2 - y1) * (px - x1))
                    e2 = sgn * ((x0 - x2) * (py - y2) - (y0 - y2) * (px - x2))
                    if e0 >= 0 and e1 >= 0 and e2 >= 0:
                        IMG[r, c] = 1
    return image


def softmin_rows(C, pot, double eps):
    cdef const double[:, :] CC = np.ascontiguousarray(C, dtype=np.float64)
    cdef const double[:] P = np.ascontiguousarray(pot, dtype=np.float64)
    cdef Py_ssize_t n = CC.shape[0], m = CC.shape[1], i, j
    out = np.empty(n)
    cdef double[:] O = out
    cdef double mx, s, x, inv = 1.0 / eps
    with nogil:
        for i in range(n):
            mx = -1e308
            for j in range(m):
                x = (P[j] - CC[i, j]) * inv
                if x > mx:
                    mx = x
            s = 0.0
            for j in range(m):
                s += exp((P[j] - CC[i, j]) * inv - mx)
            O[i] = -eps * (mx + log(s))
    return out
