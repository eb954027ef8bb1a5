"""Compiled inner loops: box-box narrow phase, warm-start matching and the
sequential-impulse contact solver.

Everything here works on flat float64/int64 arrays so that numba can compile
it; without numba the same code runs (slowly) as plain Python.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


MAX_POINTS = 4

# face axis preference: an axis must beat the current best by this much
_REL = 0.98
_ABS_FACE = 1e-5
_ABS_EDGE = 1e-4


@njit(cache=True)
def _sgn(x):
    return 1.0 if x >= 0.0 else -1.0


@njit(cache=True)
def _clip(poly, npoly, nrm, off, out):
    """Keep the part of ``poly`` with nrm.x <= off (Sutherland-Hodgman)."""
    nout = 0
    if npoly == 0:
        return 0
    prev = poly[npoly - 1]
    dprev = prev[0] * nrm[0] + prev[1] * nrm[1] + prev[2] * nrm[2] - off
    for k in range(npoly):
        cur = poly[k]
        dcur = cur[0] * nrm[0] + cur[1] * nrm[1] + cur[2] * nrm[2] - off
        if dprev <= 0.0:
            if dcur <= 0.0:
                out[nout, :] = cur
                nout += 1
            else:
                s = dprev / (dprev - dcur)
                out[nout, :] = prev + s * (cur - prev)
                nout += 1
        elif dcur <= 0.0:
            s = dprev / (dprev - dcur)
            out[nout, :] = prev + s * (cur - prev)
            nout += 1
            out[nout, :] = cur
            nout += 1
        prev = cur
        dprev = dcur
    return nout


@njit(cache=True)
def _reduce(pts, depths, n, nrm, out_pts, out_depths):
    """Pick at most four well spread points, deepest first."""
    if n <= MAX_POINTS:
        for k in range(n):
            out_pts[k, :] = pts[k]
            out_depths[k] = depths[k]
        return n
    chosen = np.full(MAX_POINTS, -1, dtype=np.int64)
    best = 0
    for k in range(1, n):
        if depths[k] > depths[best]:
            best = k
    chosen[0] = best
    for slot in range(1, MAX_POINTS):
        pick = -1
        score = -1.0
        for k in range(n):
            used = False
            for s in range(slot):
                if chosen[s] == k:
                    used = True
            if used:
                continue
            dmin = 1e300
            for s in range(slot):
                dv = pts[k] - pts[chosen[s]]
                # distance measured in the contact plane
                dn = dv[0] * nrm[0] + dv[1] * nrm[1] + dv[2] * nrm[2]
                dd = dv[0] ** 2 + dv[1] ** 2 + dv[2] ** 2 - dn * dn
                if dd < dmin:
                    dmin = dd
            if dmin > score:
                score = dmin
                pick = k
        chosen[slot] = pick
    for s in range(MAX_POINTS):
        out_pts[s, :] = pts[chosen[s]]
        out_depths[s] = depths[chosen[s]]
    return MAX_POINTS


@njit(cache=True)
def _face_contact(pr, Rr, hr, axis, nref, pi, Ri, hi, tol, out_pts, out_depths):
    """Clip the incident face of box (pi, Ri, hi) against the reference face of
    box (pr, Rr, hr) whose outward normal is ``nref``."""
    a1 = (axis + 1) % 3
    a2 = (axis + 2) % 3
    c = pr + nref * hr[axis]
    u = Rr[:, a1].copy()
    v = Rr[:, a2].copy()
    # incident face: most anti-parallel to nref
    j = 0
    bestd = -1.0
    for k in range(3):
        dk = abs(Ri[0, k] * nref[0] + Ri[1, k] * nref[1] + Ri[2, k] * nref[2])
        if dk > bestd:
            bestd = dk
            j = k
    sj = -_sgn(Ri[0, j] * nref[0] + Ri[1, j] * nref[1] + Ri[2, j] * nref[2])
    ci = pi + sj * hi[j] * Ri[:, j]
    k1 = (j + 1) % 3
    k2 = (j + 2) % 3
    e1 = hi[k1] * Ri[:, k1]
    e2 = hi[k2] * Ri[:, k2]
    poly = np.empty((8, 3))
    tmp = np.empty((8, 3))
    poly[0, :] = ci + e1 + e2
    poly[1, :] = ci - e1 + e2
    poly[2, :] = ci - e1 - e2
    poly[3, :] = ci + e1 - e2
    n = 4
    cu = c[0] * u[0] + c[1] * u[1] + c[2] * u[2]
    cv = c[0] * v[0] + c[1] * v[1] + c[2] * v[2]
    n = _clip(poly, n, u, cu + hr[a1], tmp)
    n = _clip(tmp, n, -u, -cu + hr[a1], poly)
    n = _clip(poly, n, v, cv + hr[a2], tmp)
    n = _clip(tmp, n, -v, -cv + hr[a2], poly)
    cn = c[0] * nref[0] + c[1] * nref[1] + c[2] * nref[2]
    pts = np.empty((8, 3))
    depths = np.empty(8)
    m = 0
    for k in range(n):
        q = poly[k]
        dep = cn - (q[0] * nref[0] + q[1] * nref[1] + q[2] * nref[2])
        if dep >= -tol:
            pts[m, :] = q + nref * (0.5 * dep)
            depths[m] = dep
            m += 1
    return _reduce(pts, depths, m, nref, out_pts, out_depths)


@njit(cache=True)
def box_box(p1, R1, h1, p2, R2, h2, tol, out_pts, out_depths, out_normal):
    """Separating-axis test between two oriented boxes.

    Returns the number of manifold points (0 if separated by more than
    ``tol``). The normal points from box 1 to box 2; depths are signed
    (negative while the points are still ``-depth`` apart).
    """
    d = p2 - p1
    C = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            C[i, j] = R1[0, i] * R2[0, j] + R1[1, i] * R2[1, j] + R1[2, i] * R2[2, j]
    dA = np.empty(3)
    dB = np.empty(3)
    for i in range(3):
        dA[i] = R1[0, i] * d[0] + R1[1, i] * d[1] + R1[2, i] * d[2]
        dB[i] = R2[0, i] * d[0] + R2[1, i] * d[1] + R2[2, i] * d[2]

    sepA = -1e300
    axA = 0
    for i in range(3):
        rb = h2[0] * abs(C[i, 0]) + h2[1] * abs(C[i, 1]) + h2[2] * abs(C[i, 2])
        s = abs(dA[i]) - h1[i] - rb
        if s > tol:
            return 0
        if s > sepA:
            sepA = s
            axA = i
    sepB = -1e300
    axB = 0
    for j in range(3):
        ra = h1[0] * abs(C[0, j]) + h1[1] * abs(C[1, j]) + h1[2] * abs(C[2, j])
        s = abs(dB[j]) - ra - h2[j]
        if s > tol:
            return 0
        if s > sepB:
            sepB = s
            axB = j
    sepE = -1e300
    eI = -1
    eJ = -1
    nE = np.zeros(3)
    for i in range(3):
        for j in range(3):
            ax = R1[:, i]
            bx = R2[:, j]
            L0 = ax[1] * bx[2] - ax[2] * bx[1]
            L1 = ax[2] * bx[0] - ax[0] * bx[2]
            L2 = ax[0] * bx[1] - ax[1] * bx[0]
            ln = math.sqrt(L0 * L0 + L1 * L1 + L2 * L2)
            if ln < 1e-6:
                continue
            L0 /= ln
            L1 /= ln
            L2 /= ln
            ra = 0.0
            rb = 0.0
            for k in range(3):
                ra += h1[k] * abs(R1[0, k] * L0 + R1[1, k] * L1 + R1[2, k] * L2)
                rb += h2[k] * abs(R2[0, k] * L0 + R2[1, k] * L1 + R2[2, k] * L2)
            dl = d[0] * L0 + d[1] * L1 + d[2] * L2
            s = abs(dl) - ra - rb
            if s > tol:
                return 0
            if s > sepE:
                sepE = s
                eI = i
                eJ = j
                sg = _sgn(dl)
                nE[0] = L0 * sg
                nE[1] = L1 * sg
                nE[2] = L2 * sg

    use_b = sepB > _REL * sepA + _ABS_FACE
    face_sep = sepB if use_b else sepA
    if eI >= 0 and sepE > _REL * face_sep + _ABS_EDGE:
        # edge-edge: one point midway between the closest points of the edges
        ua = R1[:, eI].copy()
        ub = R2[:, eJ].copy()
        pa = p1.copy()
        pb = p2.copy()
        for k in range(3):
            if k != eI:
                ak = R1[:, k]
                pa += h1[k] * _sgn(ak[0] * nE[0] + ak[1] * nE[1] + ak[2] * nE[2]) * ak
            if k != eJ:
                bk = R2[:, k]
                pb -= h2[k] * _sgn(bk[0] * nE[0] + bk[1] * nE[1] + bk[2] * nE[2]) * bk
        w = pa - pb
        b = ua[0] * ub[0] + ua[1] * ub[1] + ua[2] * ub[2]
        dd = ua[0] * w[0] + ua[1] * w[1] + ua[2] * w[2]
        e = ub[0] * w[0] + ub[1] * w[1] + ub[2] * w[2]
        den = 1.0 - b * b
        s = 0.0
        t = 0.0
        if den > 1e-12:
            s = (b * e - dd) / den
            t = (e - b * dd) / den
        s = min(max(s, -h1[eI]), h1[eI])
        t = min(max(t, -h2[eJ]), h2[eJ])
        ca = pa + s * ua
        cb = pb + t * ub
        out_pts[0, :] = 0.5 * (ca + cb)
        out_depths[0] = -sepE
        out_normal[:] = nE
        return 1

    if use_b:
        nref = -_sgn(dB[axB]) * R2[:, axB]
        n = _face_contact(p2, R2, h2, axB, nref, p1, R1, h1, tol, out_pts, out_depths)
        out_normal[:] = -nref
    else:
        nref = _sgn(dA[axA]) * R1[:, axA]
        n = _face_contact(p1, R1, h1, axA, nref, p2, R2, h2, tol, out_pts, out_depths)
        out_normal[:] = nref
    return n


@njit(cache=True)
def detect_pairs(pairs, pos, rot, half, tol, out_a, out_b, out_pt, out_n, out_depth):
    """Run the narrow phase over candidate ``pairs``; returns contact count."""
    m = 0
    pts = np.empty((MAX_POINTS, 3))
    deps = np.empty(MAX_POINTS)
    nrm = np.empty(3)
    for k in range(pairs.shape[0]):
        i = pairs[k, 0]
        j = pairs[k, 1]
        n = box_box(pos[i], rot[i], half[i], pos[j], rot[j], half[j], tol, pts, deps, nrm)
        for c in range(n):
            out_a[m] = i
            out_b[m] = j
            out_pt[m, :] = pts[c]
            out_n[m, :] = nrm
            out_depth[m] = deps[c]
            m += 1
    return m


@njit(cache=True)
def match_warm_start(new_code, new_local, old_code, old_local, old_ln, old_lt, radius,
                     out_ln, out_lt):
    """Copy accumulated impulses from the nearest cached point of the same pair.

    ``old_code`` must be sorted ascending.
    """
    r2 = radius * radius
    for c in range(new_code.shape[0]):
        out_ln[c] = 0.0
        out_lt[c, 0] = 0.0
        out_lt[c, 1] = 0.0
        out_lt[c, 2] = 0.0
        lo = np.searchsorted(old_code, new_code[c])
        best = -1
        bestd = r2
        k = lo
        while k < old_code.shape[0] and old_code[k] == new_code[c]:
            dv = new_local[c] - old_local[k]
            dd = dv[0] * dv[0] + dv[1] * dv[1] + dv[2] * dv[2]
            if dd <= bestd:
                bestd = dd
                best = k
            k += 1
        if best >= 0:
            out_ln[c] = old_ln[best]
            out_lt[c, :] = old_lt[best]


@njit(cache=True)
def _cross(a, b):
    return np.array((a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]))


@njit(cache=True)
def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@njit(cache=True)
def tangent_basis(n):
    if abs(n[0]) >= 0.57735:
        t1 = np.array((n[1], -n[0], 0.0))
    else:
        t1 = np.array((0.0, n[2], -n[1]))
    t1 /= math.sqrt(_dot(t1, t1))
    return t1, _cross(n, t1)


@njit(cache=True)
def _jac(ra, rb, u, Ia, Ib, out, k):
    """Store ra x u, rb x u and their images under the inverse inertias."""
    out[k, 0, 0] = ra[1] * u[2] - ra[2] * u[1]
    out[k, 0, 1] = ra[2] * u[0] - ra[0] * u[2]
    out[k, 0, 2] = ra[0] * u[1] - ra[1] * u[0]
    out[k, 1, 0] = rb[1] * u[2] - rb[2] * u[1]
    out[k, 1, 1] = rb[2] * u[0] - rb[0] * u[2]
    out[k, 1, 2] = rb[0] * u[1] - rb[1] * u[0]
    for r in range(3):
        sa = 0.0
        sb = 0.0
        for q in range(3):
            sa += Ia[r, q] * out[k, 0, q]
            sb += Ib[r, q] * out[k, 1, q]
        out[k, 2, r] = sa
        out[k, 3, r] = sb


@njit(cache=True)
def _rel_vel(J, k, u, a, b, vel, omega):
    s = 0.0
    for r in range(3):
        s += u[r] * (vel[b, r] - vel[a, r]) + J[k, 1, r] * omega[b, r] - J[k, 0, r] * omega[a, r]
    return s


@njit(cache=True)
def _push(J, k, u, lam, a, b, vel, omega, inv_mass):
    for r in range(3):
        vel[a, r] -= lam * inv_mass[a] * u[r]
        vel[b, r] += lam * inv_mass[b] * u[r]
        omega[a, r] -= lam * J[k, 2, r]
        omega[b, r] += lam * J[k, 3, r]


@njit(cache=True)
def solve_contacts(ca, cb, pt, nrm, depth, mu, lam_n, lam_t,
                   pos, vel, omega, inv_mass, inv_I, dt, iterations, baumgarte, slop,
                   max_bias):
    """Sequential impulses with accumulated clamping, Coulomb cone friction
    and Baumgarte position bias. Restitution is zero.

    ``lam_n`` and ``lam_t`` hold the warm-start impulses on entry and the
    accumulated impulses on exit (``lam_t`` as a world-space vector).
    """
    m = ca.shape[0]
    # rows: direction n, t1, t2 per contact
    U = np.empty((m, 3, 3))
    Jn = np.empty((m, 4, 3))
    J1 = np.empty((m, 4, 3))
    J2 = np.empty((m, 4, 3))
    kn = np.empty(m)
    kt1 = np.empty(m)
    kt2 = np.empty(m)
    bias = np.empty(m)
    l1 = np.empty(m)
    l2 = np.empty(m)
    ra = np.empty(3)
    rb = np.empty(3)
    for c in range(m):
        a = ca[c]
        b = cb[c]
        for r in range(3):
            ra[r] = pt[c, r] - pos[a, r]
            rb[r] = pt[c, r] - pos[b, r]
        t1, t2 = tangent_basis(nrm[c])
        U[c, 0, :] = nrm[c]
        U[c, 1, :] = t1
        U[c, 2, :] = t2
        _jac(ra, rb, U[c, 0], inv_I[a], inv_I[b], Jn, c)
        _jac(ra, rb, t1, inv_I[a], inv_I[b], J1, c)
        _jac(ra, rb, t2, inv_I[a], inv_I[b], J2, c)
        base = inv_mass[a] + inv_mass[b]
        en = base
        e1 = base
        e2 = base
        for r in range(3):
            en += Jn[c, 0, r] * Jn[c, 2, r] + Jn[c, 1, r] * Jn[c, 3, r]
            e1 += J1[c, 0, r] * J1[c, 2, r] + J1[c, 1, r] * J1[c, 3, r]
            e2 += J2[c, 0, r] * J2[c, 2, r] + J2[c, 1, r] * J2[c, 3, r]
        kn[c] = 1.0 / en
        kt1[c] = 1.0 / e1
        kt2[c] = 1.0 / e2
        if depth[c] < 0.0:
            # speculative: allow closing the gap within this step, no more
            bias[c] = depth[c] / dt
        else:
            bias[c] = min(baumgarte / dt * max(depth[c] - slop, 0.0), max_bias)
        l1[c] = _dot(lam_t[c], t1)
        l2[c] = _dot(lam_t[c], t2)
        lim = mu[c] * lam_n[c]
        ln = math.sqrt(l1[c] * l1[c] + l2[c] * l2[c])
        if ln > lim:
            s = lim / ln if ln > 0.0 else 0.0
            l1[c] *= s
            l2[c] *= s
        _push(Jn, c, U[c, 0], lam_n[c], a, b, vel, omega, inv_mass)
        _push(J1, c, U[c, 1], l1[c], a, b, vel, omega, inv_mass)
        _push(J2, c, U[c, 2], l2[c], a, b, vel, omega, inv_mass)

    for _ in range(iterations):
        for c in range(m):
            a = ca[c]
            b = cb[c]
            vn = _rel_vel(Jn, c, U[c, 0], a, b, vel, omega)
            newn = max(lam_n[c] + (bias[c] - vn) * kn[c], 0.0)
            _push(Jn, c, U[c, 0], newn - lam_n[c], a, b, vel, omega, inv_mass)
            lam_n[c] = newn

            # friction last, against the normal impulse just computed
            d1 = -_rel_vel(J1, c, U[c, 1], a, b, vel, omega) * kt1[c]
            d2 = -_rel_vel(J2, c, U[c, 2], a, b, vel, omega) * kt2[c]
            n1 = l1[c] + d1
            n2 = l2[c] + d2
            lim = mu[c] * newn
            ln = math.sqrt(n1 * n1 + n2 * n2)
            if ln > lim:
                s = lim / ln if ln > 0.0 else 0.0
                n1 *= s
                n2 *= s
            _push(J1, c, U[c, 1], n1 - l1[c], a, b, vel, omega, inv_mass)
            _push(J2, c, U[c, 2], n2 - l2[c], a, b, vel, omega, inv_mass)
            l1[c] = n1
            l2[c] = n2

    for c in range(m):
        for r in range(3):
            lam_t[c, r] = l1[c] * U[c, 1, r] + l2[c] * U[c, 2, r]
