# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled whole-trajectory kernel for two-dimensional states with scalar
measurements.

Mirrors the library step functions plus the analytic readout bound: one call
runs all four filters and the per-step bounds over a full trajectory without
touching the Python interpreter. Covariances are carried as (a, b, c)
triples of the symmetric matrix [[a, b], [b, c]]. Failures surface as the
integer codes in ERROR_MESSAGES; the pure backend raises the same messages.
"""

from libc.math cimport (
    INFINITY,
    NAN,
    copysign,
    erfc,
    exp,
    hypot,
    isfinite,
    log,
    sqrt,
)

import numpy as np

cimport numpy as cnp

cnp.import_array()

cdef double LOG_2PI = log(2.0 * 3.14159265358979323846)
cdef double INV_SQRT_2PI = 1.0 / sqrt(2.0 * 3.14159265358979323846)
cdef double SQRT1_2 = sqrt(0.5)
cdef double PSD_TOL = 1e-8

ERROR_MESSAGES = {
    1: "singular innovation covariance",
    2: "all mode weights underflowed to zero",
    3: "upper-bound assembly produced a non-finite value",
    4: "covariance eigenvalue below -1e-08",
}


cdef inline int _floor2x2(double* a, double* b, double* c) noexcept nogil:
    """Clamp a slightly negative eigenvalue of [[a,b],[b,c]] to zero.

    Same rank-corrective construction as the library's symmetrize_floor;
    returns 4 when the eigenvalue is negative beyond tolerance.
    """
    cdef double half_gap = hypot(0.5 * (a[0] - c[0]), b[0])
    cdef double lo = 0.5 * (a[0] + c[0]) - half_gap
    cdef double v0, v1, nrm
    if lo < -PSD_TOL:
        return 4
    if lo < 0.0:
        if b[0] != 0.0:
            v0 = b[0]
            v1 = lo - a[0]
            nrm = hypot(v0, v1)
            v0 /= nrm
            v1 /= nrm
        elif a[0] <= c[0]:
            v0 = 1.0
            v1 = 0.0
        else:
            v0 = 0.0
            v1 = 1.0
        a[0] -= lo * v0 * v0
        b[0] -= lo * v0 * v1
        c[0] -= lo * v1 * v1
    return 0


cdef inline void _predict(
    double* f,
    double x0, double x1,
    double pa, double pb, double pc,
    double u0, double u1,
    double qa, double qb, double qc,
    double* xp0, double* xp1,
    double* ppa, double* ppb, double* ppc,
) noexcept nogil:
    cdef double f00 = f[0], f01 = f[1], f10 = f[2], f11 = f[3]
    cdef double fp00 = f00 * pa + f01 * pb
    cdef double fp01 = f00 * pb + f01 * pc
    cdef double fp10 = f10 * pa + f11 * pb
    cdef double fp11 = f10 * pb + f11 * pc
    xp0[0] = f00 * x0 + f01 * x1 + u0
    xp1[0] = f10 * x0 + f11 * x1 + u1
    ppa[0] = qa + fp00 * f00 + fp01 * f01
    ppb[0] = qb + fp00 * f10 + fp01 * f11
    ppc[0] = qc + fp10 * f10 + fp11 * f11


cdef inline int _scalar_update(
    double h0, double h1,
    double xp0, double xp1,
    double ppa, double ppb, double ppc,
    double z, double b, double r, double sign,
    double* zp, double* s, double* w0, double* w1,
    double* xo0, double* xo1,
    double* poa, double* pob, double* poc,
) noexcept nogil:
    """Measurement update of one mode; sign scales the innovation applied to
    the mean (the fault-injection hook) but never the likelihood inputs."""
    cdef double ph0, ph1, resid
    zp[0] = h0 * xp0 + h1 * xp1 + b
    ph0 = ppa * h0 + ppb * h1
    ph1 = ppb * h0 + ppc * h1
    s[0] = h0 * ph0 + h1 * ph1 + r
    if not s[0] > 0.0:
        return 1
    w0[0] = ph0 / s[0]
    w1[0] = ph1 / s[0]
    resid = sign * (z - zp[0])
    xo0[0] = xp0 + w0[0] * resid
    xo1[0] = xp1 + w1[0] * resid
    poa[0] = ppa - s[0] * w0[0] * w0[0]
    pob[0] = ppb - s[0] * w0[0] * w1[0]
    poc[0] = ppc - s[0] * w1[0] * w1[0]
    return _floor2x2(poa, pob, poc)


cdef int _bank(
    int c_v, int c_w,
    double* f, double h0, double h1,
    double* uv, double* qv,
    double* bw, double* rw,
    double* logpw,
    double z, double sign,
    double x0, double x1, double pa, double pb, double pc,
    double* xp, double* pp,
    double* zh, double* sm, double* w0, double* w1,
    double* xo0, double* xo1, double* po,
    double* mu,
    double* comb,
    int* amax,
) noexcept nogil:
    """Full mode bank from one collapsed state: per-mode updates, posterior
    weights, weighted combination, and the first-maximum mode index."""
    cdef int i, j, m, rc, best, n_modes = c_v * c_w
    cdef double lw, mx, tot, dev, cx0, cx1, ca, cb, cc, w
    mx = -INFINITY
    for i in range(c_v):
        _predict(
            f, x0, x1, pa, pb, pc,
            uv[2 * i], uv[2 * i + 1],
            qv[3 * i], qv[3 * i + 1], qv[3 * i + 2],
            &xp[2 * i], &xp[2 * i + 1],
            &pp[3 * i], &pp[3 * i + 1], &pp[3 * i + 2],
        )
        for j in range(c_w):
            m = i * c_w + j
            rc = _scalar_update(
                h0, h1, xp[2 * i], xp[2 * i + 1],
                pp[3 * i], pp[3 * i + 1], pp[3 * i + 2],
                z, bw[j], rw[j], sign,
                &zh[m], &sm[m], &w0[m], &w1[m],
                &xo0[m], &xo1[m], &po[3 * m], &po[3 * m + 1], &po[3 * m + 2],
            )
            if rc != 0:
                return rc
            dev = z - zh[m]
            lw = logpw[m] - 0.5 * (LOG_2PI + log(sm[m])) - 0.5 * dev * dev / sm[m]
            mu[m] = lw
            if lw > mx:
                mx = lw
    if not isfinite(mx):
        return 2
    tot = 0.0
    for m in range(n_modes):
        mu[m] = exp(mu[m] - mx)
        tot += mu[m]
    best = 0
    cx0 = 0.0
    cx1 = 0.0
    for m in range(n_modes):
        mu[m] /= tot
        if mu[m] > mu[best]:
            best = m
        cx0 += mu[m] * xo0[m]
        cx1 += mu[m] * xo1[m]
    ca = 0.0
    cb = 0.0
    cc = 0.0
    for m in range(n_modes):
        w = mu[m]
        ca += w * (po[3 * m] + xo0[m] * xo0[m])
        cb += w * (po[3 * m + 1] + xo0[m] * xo1[m])
        cc += w * (po[3 * m + 2] + xo1[m] * xo1[m])
    ca -= cx0 * cx0
    cb -= cx0 * cx1
    cc -= cx1 * cx1
    rc = _floor2x2(&ca, &cb, &cc)
    if rc != 0:
        return rc
    comb[0] = cx0
    comb[1] = cx1
    comb[2] = ca
    comb[3] = cb
    comb[4] = cc
    amax[0] = best
    return 0


cdef void _siftdown(double* a, int start, int end) noexcept nogil:
    cdef int root = start, child
    cdef double tmp
    while root * 2 + 1 < end:
        child = root * 2 + 1
        if child + 1 < end and a[child] < a[child + 1]:
            child += 1
        if a[root] < a[child]:
            tmp = a[root]
            a[root] = a[child]
            a[child] = tmp
            root = child
        else:
            return


cdef void _heapsort(double* a, int n) noexcept nogil:
    cdef int i
    cdef double tmp
    i = n // 2 - 1
    while i >= 0:
        _siftdown(a, i, n)
        i -= 1
    i = n - 1
    while i > 0:
        tmp = a[0]
        a[0] = a[i]
        a[i] = tmp
        _siftdown(a, 0, i)
        i -= 1


cdef inline void _raw_moments(
    double lo, double hi, double mu, double sd,
    double* m0, double* m1, double* m2,
) noexcept nogil:
    """Raw moments of N(mu, sd^2) over [lo, hi]; endpoints may be infinite."""
    cdef double tlo = (lo - mu) / sd
    cdef double thi = (hi - mu) / sd
    cdef double cdflo = 0.5 * erfc(-tlo * SQRT1_2)
    cdef double cdfhi = 0.5 * erfc(-thi * SQRT1_2)
    cdef double pdflo, pdfhi, tplo, tphi, dpdf
    if isfinite(tlo):
        pdflo = exp(-0.5 * tlo * tlo) * INV_SQRT_2PI
        tplo = tlo * pdflo
    else:
        pdflo = 0.0
        tplo = 0.0
    if isfinite(thi):
        pdfhi = exp(-0.5 * thi * thi) * INV_SQRT_2PI
        tphi = thi * pdfhi
    else:
        pdfhi = 0.0
        tphi = 0.0
    dpdf = pdflo - pdfhi
    m0[0] = cdfhi - cdflo
    m1[0] = mu * m0[0] + sd * dpdf
    m2[0] = mu * mu * m0[0] + 2.0 * mu * sd * dpdf + sd * sd * (m0[0] + tplo - tphi)


cdef int _readout_bound(
    int c_v, int c_w,
    double* pw, double* logpw,
    double* xp,
    double* zh, double* sm, double* sdm, double* w0, double* w1, double* po,
    double* xs0, double* xs1, double* zs,
    double* sc0, double* sc1, double* sc2,
    double* cand,
    double* out_lb, double* out_ubg,
) noexcept nogil:
    """Lower bound and analytic readout upper bound from the current bank.

    Works in the frame centered on the prior-weighted predicted means, where
    the assembled trace is invariant; partitions the measurement line by the
    winning weighted density and integrates truncated moments per interval.
    """
    cdef int n_modes = c_v * c_w
    cdef int m, a, b, o, g, t, ncand
    cdef double xbar0 = 0.0, xbar1 = 0.0, zbar = 0.0
    cdef double tr_m1 = 0.0, tr_m2s = 0.0
    cdef double alpha, beta, gamma, disc, q, r1, r2
    cdef double lo, hi, mid, sc, best_sc
    cdef double m0, m1, m2, zo, zg
    cdef double dot_xx, dot_xgwo, dot_xowg, dot_ww, oxx, oxw, oww
    cdef double acc1 = 0.0, acc3 = 0.0, ubg

    for m in range(n_modes):
        xbar0 += pw[m] * xp[2 * (m // c_w)]
        xbar1 += pw[m] * xp[2 * (m // c_w) + 1]
        zbar += pw[m] * zh[m]
    for m in range(n_modes):
        xs0[m] = xp[2 * (m // c_w)] - xbar0
        xs1[m] = xp[2 * (m // c_w) + 1] - xbar1
        zs[m] = zh[m] - zbar
        tr_m1 += pw[m] * (po[3 * m] + po[3 * m + 2])
        tr_m2s += pw[m] * (
            xs0[m] * xs0[m] + xs1[m] * xs1[m]
            + sm[m] * (w0[m] * w0[m] + w1[m] * w1[m])
        )
        sc2[m] = -0.5 / sm[m]
        sc1[m] = zs[m] / sm[m]
        sc0[m] = logpw[m] - 0.5 * (LOG_2PI + log(sm[m])) - zs[m] * zs[m] / (2.0 * sm[m])

    ncand = 0
    for a in range(n_modes):
        if not pw[a] > 0.0:
            continue
        for b in range(a + 1, n_modes):
            if not pw[b] > 0.0:
                continue
            alpha = sc2[a] - sc2[b]
            beta = sc1[a] - sc1[b]
            gamma = sc0[a] - sc0[b]
            if alpha == 0.0:
                if beta != 0.0:
                    r1 = -gamma / beta
                    if isfinite(r1):
                        cand[ncand] = r1
                        ncand += 1
            else:
                disc = beta * beta - 4.0 * alpha * gamma
                if disc > 0.0:
                    q = -0.5 * (beta + copysign(sqrt(disc), beta))
                    if q == 0.0:
                        r1 = 0.0
                        r2 = -beta / alpha
                    else:
                        r1 = q / alpha
                        r2 = gamma / q
                    if isfinite(r1):
                        cand[ncand] = r1
                        ncand += 1
                    if isfinite(r2):
                        cand[ncand] = r2
                        ncand += 1
    _heapsort(cand, ncand)

    for t in range(ncand + 1):
        lo = -INFINITY if t == 0 else cand[t - 1]
        hi = INFINITY if t == ncand else cand[t]
        if lo == hi:
            continue
        if ncand == 0:
            mid = 0.0
            for m in range(n_modes):
                mid += pw[m] * zs[m]
        elif t == 0:
            mid = cand[0] - 1.0
        elif t == ncand:
            mid = cand[ncand - 1] + 1.0
        else:
            mid = 0.5 * (cand[t - 1] + cand[t])
        o = 0
        best_sc = -INFINITY
        for m in range(n_modes):
            sc = sc0[m] + sc1[m] * mid + sc2[m] * mid * mid
            if sc > best_sc:
                best_sc = sc
                o = m
        zo = zs[o]
        oxx = xs0[o] * xs0[o] + xs1[o] * xs1[o]
        oxw = xs0[o] * w0[o] + xs1[o] * w1[o]
        oww = w0[o] * w0[o] + w1[o] * w1[o]
        for g in range(n_modes):
            if not pw[g] > 0.0:
                continue
            _raw_moments(lo, hi, zs[g], sdm[g], &m0, &m1, &m2)
            zg = zs[g]
            dot_xx = xs0[g] * xs0[o] + xs1[g] * xs1[o]
            dot_xgwo = xs0[g] * w0[o] + xs1[g] * w1[o]
            dot_xowg = xs0[o] * w0[g] + xs1[o] * w1[g]
            dot_ww = w0[g] * w0[o] + w1[g] * w1[o]
            acc1 += pw[g] * (
                m0 * dot_xx
                + (m1 - m0 * zo) * dot_xgwo
                + (m1 - m0 * zg) * dot_xowg
                + (m2 - m1 * zo - zg * m1 + m0 * zg * zo) * dot_ww
            )
            acc3 += pw[g] * (
                m0 * oxx
                + 2.0 * (m1 - m0 * zo) * oxw
                + (m2 - 2.0 * m1 * zo + m0 * zo * zo) * oww
            )

    ubg = tr_m1 + tr_m2s - 2.0 * acc1 + acc3
    if not isfinite(ubg):
        return 3
    out_lb[0] = tr_m1
    out_ubg[0] = ubg
    return 0


cdef int _run(
    int c_v, int c_w, int steps,
    double* f, double h0, double h1,
    double* uv, double* qv, double* bw, double* rw,
    double* pw, double* logpw,
    double* u_mm, double* q_mm, double b_mm, double r_mm,
    double* states, double* zmeas,
    cnp.int64_t* li, cnp.int64_t* lj,
    double* x0, double* p0,
    int window_start, bint hard, double sign,
    double* xp, double* pp,
    double* zh, double* sm, double* sdm, double* w0, double* w1,
    double* xo0, double* xo1, double* po, double* mu,
    double* xs0, double* xs1, double* zs,
    double* sc0, double* sc1, double* sc2,
    double* cand,
    double* err2, double* bnd,
) noexcept nogil:
    cdef int n_modes = c_v * c_w
    cdef double gx0 = x0[0], gx1 = x0[1]
    cdef double gpa = p0[0], gpb = p0[1], gpc = p0[2]
    cdef double rx0 = x0[0], rx1 = x0[1]
    cdef double rpa = p0[0], rpb = p0[1], rpc = p0[2]
    cdef double mx0 = x0[0], mx1 = x0[1]
    cdef double mpa = p0[0], mpb = p0[1], mpc = p0[2]
    cdef double kx0 = x0[0], kx1 = x0[1]
    cdef double kpa = p0[0], kpb = p0[1], kpc = p0[2]
    cdef double comb[5]
    cdef int amax = 0
    cdef bint r_dead = 0
    cdef int k, m, rc, lab_i, lab_j
    cdef double z, xt0, xt1, d0, d1
    cdef double xp0, xp1, ppa, ppb, ppc
    cdef double zp_s, s_s, w0_s, w1_s
    cdef double tr_pk, lb, ubg

    for k in range(steps):
        z = zmeas[k]
        xt0 = states[2 * k]
        xt1 = states[2 * k + 1]

        # moment-matched Kalman filter (no fault hook: sign fixed at 1)
        _predict(
            f, kx0, kx1, kpa, kpb, kpc,
            u_mm[0], u_mm[1], q_mm[0], q_mm[1], q_mm[2],
            &xp0, &xp1, &ppa, &ppb, &ppc,
        )
        rc = _scalar_update(
            h0, h1, xp0, xp1, ppa, ppb, ppc, z, b_mm, r_mm, 1.0,
            &zp_s, &s_s, &w0_s, &w1_s, &kx0, &kx1, &kpa, &kpb, &kpc,
        )
        if rc != 0:
            return rc
        tr_pk = kpa + kpc

        # full bank from the collapsed state
        rc = _bank(
            c_v, c_w, f, h0, h1, uv, qv, bw, rw, logpw, z, sign,
            gx0, gx1, gpa, gpb, gpc,
            xp, pp, zh, sm, w0, w1, xo0, xo1, po, mu, comb, &amax,
        )
        if rc != 0:
            return rc
        gx0 = comb[0]
        gx1 = comb[1]
        gpa = comb[2]
        gpb = comb[3]
        gpc = comb[4]
        d0 = gx0 - xt0
        d1 = gx1 - xt1
        err2[4 * k] = d0 * d0 + d1 * d1
        if not hard:
            d0 = xo0[amax] - xt0
            d1 = xo1[amax] - xt1
            err2[4 * k + 1] = d0 * d0 + d1 * d1

        if k >= window_start:
            for m in range(n_modes):
                sdm[m] = sqrt(sm[m])
            rc = _readout_bound(
                c_v, c_w, pw, logpw, xp, zh, sm, sdm, w0, w1, po,
                xs0, xs1, zs, sc0, sc1, sc2, cand, &lb, &ubg,
            )
            if rc != 0:
                return rc
            bnd[3 * k] = lb
            bnd[3 * k + 1] = ubg
            bnd[3 * k + 2] = tr_pk
        else:
            bnd[3 * k] = NAN
            bnd[3 * k + 1] = NAN
            bnd[3 * k + 2] = NAN

        # readout filter recursing on its own selected component; the bank
        # buffers are free again now that the bounds are done
        if hard:
            if r_dead:
                err2[4 * k + 1] = INFINITY
            else:
                rc = _bank(
                    c_v, c_w, f, h0, h1, uv, qv, bw, rw, logpw, z, sign,
                    rx0, rx1, rpa, rpb, rpc,
                    xp, pp, zh, sm, w0, w1, xo0, xo1, po, mu, comb, &amax,
                )
                if rc != 0:
                    r_dead = 1
                    err2[4 * k + 1] = INFINITY
                else:
                    rx0 = xo0[amax]
                    rx1 = xo1[amax]
                    rpa = po[3 * amax]
                    rpb = po[3 * amax + 1]
                    rpc = po[3 * amax + 2]
                    d0 = rx0 - xt0
                    d1 = rx1 - xt1
                    err2[4 * k + 1] = d0 * d0 + d1 * d1

        # oracle filter conditioned on the recorded active clusters
        lab_i = <int> li[k]
        lab_j = <int> lj[k]
        _predict(
            f, mx0, mx1, mpa, mpb, mpc,
            uv[2 * lab_i], uv[2 * lab_i + 1],
            qv[3 * lab_i], qv[3 * lab_i + 1], qv[3 * lab_i + 2],
            &xp0, &xp1, &ppa, &ppb, &ppc,
        )
        rc = _scalar_update(
            h0, h1, xp0, xp1, ppa, ppb, ppc,
            z, bw[lab_j], rw[lab_j], sign,
            &zp_s, &s_s, &w0_s, &w1_s, &mx0, &mx1, &mpa, &mpb, &mpc,
        )
        if rc != 0:
            return rc
        d0 = mx0 - xt0
        d1 = mx1 - xt1
        err2[4 * k + 2] = d0 * d0 + d1 * d1

        d0 = kx0 - xt0
        d1 = kx1 - xt1
        err2[4 * k + 3] = d0 * d0 + d1 * d1

    return 0


def run_trajectory(
    double[::1] f_flat,
    double h0,
    double h1,
    double[:, ::1] uv,
    double[:, ::1] qv,
    double[::1] bw,
    double[::1] rw,
    double[::1] pw,
    double[::1] logpw,
    double[::1] u_mm,
    double[::1] q_mm,
    double b_mm,
    double r_mm,
    double[:, ::1] states,
    double[::1] zmeas,
    cnp.int64_t[::1] li,
    cnp.int64_t[::1] lj,
    double[::1] x0,
    double[::1] p0,
    int window_start,
    bint hard,
    double sign,
    double[:, ::1] err2_out,
    double[:, ::1] bounds_out,
):
    """Run all four filters plus per-step bounds over one trajectory.

    Outputs land in err2_out (steps, 4) and bounds_out (steps, 3); the
    return value is 0 on success or a key of ERROR_MESSAGES. A numeric
    failure inside the hard-decision readout recursion does not abort the
    run: its remaining errors become infinity, matching the pure backend.
    """
    cdef int c_v = uv.shape[0]
    cdef int c_w = bw.shape[0]
    cdef int n_modes = c_v * c_w
    cdef int steps = states.shape[0]
    cdef int code

    scratch = np.empty(c_v * 5 + n_modes * 17, dtype=np.float64)
    cand_arr = np.empty(n_modes * (n_modes - 1) + 2, dtype=np.float64)
    cdef double[::1] sc_mv = scratch
    cdef double[::1] cand_mv = cand_arr
    cdef double* xp = &sc_mv[0]
    cdef double* pp = xp + c_v * 2
    cdef double* zh = xp + c_v * 5
    cdef double* sm = zh + n_modes
    cdef double* sdm = zh + 2 * n_modes
    cdef double* w0 = zh + 3 * n_modes
    cdef double* w1 = zh + 4 * n_modes
    cdef double* xo0 = zh + 5 * n_modes
    cdef double* xo1 = zh + 6 * n_modes
    cdef double* po = zh + 7 * n_modes
    cdef double* mu = zh + 10 * n_modes
    cdef double* xs0 = zh + 11 * n_modes
    cdef double* xs1 = zh + 12 * n_modes
    cdef double* zs = zh + 13 * n_modes
    cdef double* sc0 = zh + 14 * n_modes
    cdef double* sc1 = zh + 15 * n_modes
    cdef double* sc2 = zh + 16 * n_modes

    with nogil:
        code = _run(
            c_v, c_w, steps,
            &f_flat[0], h0, h1,
            &uv[0, 0], &qv[0, 0], &bw[0], &rw[0],
            &pw[0], &logpw[0],
            &u_mm[0], &q_mm[0], b_mm, r_mm,
            &states[0, 0], &zmeas[0],
            &li[0], &lj[0],
            &x0[0], &p0[0],
            window_start, hard, sign,
            xp, pp, zh, sm, sdm, w0, w1, xo0, xo1, po, mu,
            xs0, xs1, zs, sc0, sc1, sc2,
            &cand_mv[0],
            &err2_out[0, 0], &bounds_out[0, 0],
        )
    return code
