# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels (see _kernels_py for the reference)."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, sin, cos, exp, fabs

cnp.import_array()


cdef inline double _minmod(double a, double b) noexcept nogil:
    if a * b <= 0.0:
        return 0.0
    return a if fabs(a) < fabs(b) else b


def reinit_rhs(double[::1] phi, double[::1] sgn, cnp.int64_t[:, :, ::1] nb,
               double[:, ::1] sub_p, double[:, ::1] sub_m, double h):
    cdef Py_ssize_t n = phi.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, d
    cdef cnp.int64_t m2, m1, p1, p2
    cdef double f0, fm1, fp1, d2_0, d2_p, d2_m, cp, cm, dp, dm, sp, sm, g2, a, b, ih2
    ih2 = 1.0 / (h * h)
    with nogil:
        for i in range(n):
            f0 = phi[i]
            g2 = 0.0
            for d in range(3):
                m2 = nb[i, d, 0]
                m1 = nb[i, d, 1]
                p1 = nb[i, d, 2]
                p2 = nb[i, d, 3]
                cp = 0.0
                cm = 0.0
                if m1 >= 0 and p1 >= 0:
                    fm1 = phi[m1]
                    fp1 = phi[p1]
                    d2_0 = (fp1 - 2.0 * f0 + fm1) * ih2
                    if p2 >= 0:
                        d2_p = (phi[p2] - 2.0 * fp1 + f0) * ih2
                        cp = _minmod(d2_0, d2_p)
                    if m2 >= 0:
                        d2_m = (f0 - 2.0 * fm1 + phi[m2]) * ih2
                        cm = _minmod(d2_0, d2_m)
                sp = sub_p[i, d]
                sm = sub_m[i, d]
                if p1 >= 0:
                    if sp > 0.0:
                        dp = -f0 / sp - 0.5 * sp * cp
                    else:
                        dp = (phi[p1] - f0) / h - 0.5 * h * cp
                if m1 >= 0:
                    if sm > 0.0:
                        dm = f0 / sm + 0.5 * sm * cm
                    else:
                        dm = (f0 - phi[m1]) / h + 0.5 * h * cm
                if p1 < 0:
                    dp = dm if m1 >= 0 else 0.0
                if m1 < 0:
                    dm = dp if p1 >= 0 else 0.0
                if sgn[i] > 0.0:
                    a = dm if dm > 0.0 else 0.0
                    b = dp if dp < 0.0 else 0.0
                else:
                    a = dm if dm < 0.0 else 0.0
                    b = dp if dp > 0.0 else 0.0
                a = a * a
                b = b * b
                g2 += a if a > b else b
            out[i] = -sgn[i] * (sqrt(g2) - 1.0)
    return out_arr


cdef inline void _monge(int kind, double p0, double p1, double p2, double u, double v,
                        double* q, double* qu, double* qv,
                        double* quu, double* quv, double* qvv) noexcept nogil:
    cdef double su, cu, sv, cv, bb, e
    if kind == 0:
        su = sin(p1 * u)
        cu = cos(p1 * u)
        sv = sin(p2 * v)
        cv = cos(p2 * v)
        q[0] = p0 * su * sv
        qu[0] = p0 * p1 * cu * sv
        qv[0] = p0 * p2 * su * cv
        quu[0] = -p1 * p1 * q[0]
        quv[0] = p0 * p1 * p2 * cu * cv
        qvv[0] = -p2 * p2 * q[0]
    elif kind == 1 or kind == 2:
        bb = -p1 if kind == 1 else p1
        q[0] = p0 * u * u + bb * v * v
        qu[0] = 2 * p0 * u
        qv[0] = 2 * bb * v
        quu[0] = 2 * p0
        quv[0] = 0.0
        qvv[0] = 2 * bb
    else:
        e = p0 * exp(-0.5 * (u * u / p1 + v * v / p2))
        q[0] = e
        qu[0] = -u / p1 * e
        qv[0] = -v / p2 * e
        quu[0] = (u * u / (p1 * p1) - 1.0 / p1) * e
        qvv[0] = (v * v / (p2 * p2) - 1.0 / p2) * e
        quv[0] = u * v / (p1 * p2) * e


def monge_newton(int kind, prm, double[::1] X, double[::1] Y, double[::1] Z,
                 u0, v0, double tol=1e-10, int maxit=100):
    if kind < 0 or kind > 3:
        raise ValueError(f"unknown patch kind {kind}")
    cdef double[::1] pr = np.ascontiguousarray(prm, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] u_arr = np.array(u0, dtype=np.float64, copy=True)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] v_arr = np.array(v0, dtype=np.float64, copy=True)
    cdef Py_ssize_t n = u_arr.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] its_arr = np.zeros(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] done_arr = np.zeros(n, dtype=np.uint8)
    cdef double[::1] u = u_arr
    cdef double[::1] v = v_arr
    cdef cnp.int64_t[::1] its = its_arr
    cdef cnp.uint8_t[::1] done = done_arr
    cdef double p0 = pr[0], p1 = pr[1], p2 = pr[2]
    cdef Py_ssize_t i
    cdef int it
    cdef double uu, vv, x, y, z, q, qu, qv, quu, quv, qvv, r, gu, gv, mu
    cdef double h11, h12, h22, det, du, dv, f_old, f_new, un, vn, qn, t1, t2, t3, t4, t5
    cdef bint tiny
    with nogil:
        for i in range(n):
            uu = u[i]
            vv = v[i]
            x = X[i]
            y = Y[i]
            z = Z[i]
            mu = 0.0
            for it in range(maxit + 1):
                _monge(kind, p0, p1, p2, uu, vv, &q, &qu, &qv, &quu, &quv, &qvv)
                r = q - z
                gu = (uu - x) + r * qu
                gv = (vv - y) + r * qv
                if sqrt(gu * gu + gv * gv) < tol:
                    done[i] = 1
                    break
                if its[i] >= maxit:
                    break
                its[i] += 1
                h11 = 1.0 + qu * qu + r * quu + mu
                h12 = qu * qv + r * quv
                h22 = 1.0 + qv * qv + r * qvv + mu
                det = h11 * h22 - h12 * h12
                if h11 > 0.0 and det > 0.0:
                    du = -(h22 * gu - h12 * gv) / det
                    dv = -(h11 * gv - h12 * gu) / det
                    f_old = 0.5 * ((uu - x) * (uu - x) + (vv - y) * (vv - y) + r * r)
                    un = uu + du
                    vn = vv + dv
                    _monge(kind, p0, p1, p2, un, vn, &qn, &t1, &t2, &t3, &t4, &t5)
                    f_new = 0.5 * ((un - x) * (un - x) + (vn - y) * (vn - y) + (qn - z) * (qn - z))
                    tiny = fabs(du) + fabs(dv) <= 1e-12 * (1.0 + fabs(uu) + fabs(vv))
                    if f_new <= f_old:
                        uu = un
                        vv = vn
                        mu = 0.0 if mu * 0.25 < 1e-12 else mu * 0.25
                        if tiny:
                            done[i] = 1
                            break
                        continue
                    if tiny:
                        done[i] = 1
                        break
                mu = 4.0 * mu if 4.0 * mu > 1e-6 else 1e-6
            u[i] = uu
            v[i] = vv
    return u_arr, v_arr, its_arr, done_arr.astype(bool)
