"""Pure numpy versions of the hot kernels.

Both backends implement the same arithmetic so results agree to rounding.
"""
import numpy as np

SINUSOID, HYP_PARABOLOID, PARABOLOID, GAUSSIAN = 0, 1, 2, 3


def _minmod(a, b):
    return np.where(a * b > 0.0, np.where(np.abs(a) < np.abs(b), a, b), 0.0)


def reinit_rhs(phi, sgn, nb, sub_p, sub_m, h):
    """Right-hand side -sgn*(|grad phi| - 1) with Godunov/ENO2 differences.

    nb[:, d, :] holds neighbor rows at offsets -2, -1, +1, +2 along axis d
    (-1 when missing). sub_p/sub_m hold the subcell distance to the frozen
    interface in the +/- direction, or 0 when there is no crossing.
    """
    n = phi.shape[0]
    grad2 = np.zeros(n)
    pos = sgn > 0.0
    for d in range(3):
        m2, m1, p1, p2 = nb[:, d, 0], nb[:, d, 1], nb[:, d, 2], nb[:, d, 3]
        has_m1, has_p1 = m1 >= 0, p1 >= 0
        has_m2, has_p2 = m2 >= 0, p2 >= 0
        f0 = phi
        fm1 = np.where(has_m1, phi[m1], 0.0)
        fp1 = np.where(has_p1, phi[p1], 0.0)
        fm2 = np.where(has_m2, phi[m2], 0.0)
        fp2 = np.where(has_p2, phi[p2], 0.0)
        both = has_m1 & has_p1
        d2_0 = np.where(both, (fp1 - 2.0 * f0 + fm1) / (h * h), 0.0)
        d2_p = np.where(has_p1 & has_p2, (fp2 - 2.0 * fp1 + f0) / (h * h), 0.0)
        d2_m = np.where(has_m1 & has_m2, (f0 - 2.0 * fm1 + fm2) / (h * h), 0.0)
        cp = np.where(both & has_p2, _minmod(d2_0, d2_p), 0.0)
        cm = np.where(both & has_m2, _minmod(d2_0, d2_m), 0.0)
        sp, sm = sub_p[:, d], sub_m[:, d]
        with np.errstate(divide="ignore", invalid="ignore"):
            dp = np.where(sp > 0.0, -f0 / np.where(sp > 0.0, sp, 1.0) - 0.5 * sp * cp,
                          (fp1 - f0) / h - 0.5 * h * cp)
            dm = np.where(sm > 0.0, f0 / np.where(sm > 0.0, sm, 1.0) + 0.5 * sm * cm,
                          (f0 - fm1) / h + 0.5 * h * cm)
        # one-sided extrapolation at band edges
        dp = np.where(has_p1, dp, np.where(has_m1, dm, 0.0))
        dm = np.where(has_m1, dm, np.where(has_p1, dp, 0.0))
        gp = np.maximum(np.maximum(dm, 0.0) ** 2, np.minimum(dp, 0.0) ** 2)
        gn = np.maximum(np.minimum(dm, 0.0) ** 2, np.maximum(dp, 0.0) ** 2)
        grad2 += np.where(pos, gp, gn)
    return -sgn * (np.sqrt(grad2) - 1.0)


def monge_eval(kind, prm, u, v):
    """q and its first/second derivatives for the Monge patch family."""
    if kind == SINUSOID:
        A, w1, w2 = prm[0], prm[1], prm[2]
        su, cu = np.sin(w1 * u), np.cos(w1 * u)
        sv, cv = np.sin(w2 * v), np.cos(w2 * v)
        q = A * su * sv
        return q, A * w1 * cu * sv, A * w2 * su * cv, -w1 * w1 * q, A * w1 * w2 * cu * cv, -w2 * w2 * q
    if kind == HYP_PARABOLOID or kind == PARABOLOID:
        a = prm[0]
        b = -prm[1] if kind == HYP_PARABOLOID else prm[1]
        q = a * u * u + b * v * v
        return q, 2 * a * u, 2 * b * v, 2 * a + 0 * u, 0 * u, 2 * b + 0 * u
    if kind == GAUSSIAN:
        a, su2, sv2 = prm[0], prm[1], prm[2]
        q = a * np.exp(-0.5 * (u * u / su2 + v * v / sv2))
        qu, qv = -u / su2 * q, -v / sv2 * q
        quu = (u * u / (su2 * su2) - 1.0 / su2) * q
        qvv = (v * v / (sv2 * sv2) - 1.0 / sv2) * q
        quv = u * v / (su2 * sv2) * q
        return q, qu, qv, quu, quv, qvv
    raise ValueError(f"unknown patch kind {kind}")


def monge_newton(kind, prm, X, Y, Z, u0, v0, tol=1e-10, maxit=100):
    """Damped Newton for min_{u,v} |(X,Y,Z) - (u,v,q(u,v))|^2, one point per entry.

    Returns (u, v, iterations, converged).
    """
    prm = np.asarray(prm, dtype=np.float64)
    u = np.array(u0, dtype=np.float64, copy=True)
    v = np.array(v0, dtype=np.float64, copy=True)
    n = u.shape[0]
    mu = np.zeros(n)
    its = np.zeros(n, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    active = np.arange(n)
    for _ in range(maxit + 1):
        if active.size == 0:
            break
        ua, va = u[active], v[active]
        xa, ya, za = X[active], Y[active], Z[active]
        q, qu, qv, quu, quv, qvv = monge_eval(kind, prm, ua, va)
        r = q - za
        gu = (ua - xa) + r * qu
        gv = (va - ya) + r * qv
        gn = np.sqrt(gu * gu + gv * gv)
        conv = gn < tol
        done[active[conv]] = True
        keep = ~conv & (its[active] < maxit)
        active, ua, va, xa, ya, za = active[keep], ua[keep], va[keep], xa[keep], ya[keep], za[keep]
        q, qu, qv, quu, quv, qvv, r, gu, gv = (t[keep] for t in (q, qu, qv, quu, quv, qvv, r, gu, gv))
        if active.size == 0:
            break
        its[active] += 1
        m = mu[active]
        h11 = 1.0 + qu * qu + r * quu + m
        h12 = qu * qv + r * quv
        h22 = 1.0 + qv * qv + r * qvv + m
        det = h11 * h22 - h12 * h12
        pd = (h11 > 0.0) & (det > 0.0)
        sdet = np.where(pd, det, 1.0)
        du = np.where(pd, -(h22 * gu - h12 * gv) / sdet, 0.0)
        dv = np.where(pd, -(h11 * gv - h12 * gu) / sdet, 0.0)
        f_old = 0.5 * ((ua - xa) ** 2 + (va - ya) ** 2 + r * r)
        un, vn = ua + du, va + dv
        qn = monge_eval(kind, prm, un, vn)[0]
        f_new = 0.5 * ((un - xa) ** 2 + (vn - ya) ** 2 + (qn - za) ** 2)
        ok = pd & (f_new <= f_old)
        scale = 1.0 + np.abs(ua) + np.abs(va)
        # a step at rounding level means the minimum is resolved to machine precision
        stalled = pd & (np.abs(du) + np.abs(dv) <= 1e-12 * scale)
        u[active] = np.where(ok, un, ua)
        v[active] = np.where(ok, vn, va)
        mu[active] = np.where(ok, np.where(m * 0.25 < 1e-12, 0.0, m * 0.25), np.maximum(4.0 * m, 1e-6))
        done[active[stalled]] = True
        active = active[~stalled]
    return u, v, its, done
