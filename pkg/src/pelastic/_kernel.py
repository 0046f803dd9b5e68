"""Fused stepping kernel for the flow loop (numba).

The public flow API lives in flow.py; this module holds the jitted inner
loop used for the four built-in ambients.  It mirrors the numpy operators
of curve.py / energy.py stencil for stencil (an equivalence test pins the
two paths together) and exists purely because explicit dt ~ h^4 stepping
needs millions of RK4 steps per scenario.

Ambient kind codes: 0 Euclidean(n), 1 sphere, 2 hyperboloid, 3 revolution
(curved kinds are hard-wired to three components).  Revolution profile
modes: 0 -> f(t) = 1 + 1/t, 1 -> f(t) = const.  Error codes returned by
the kernel are translated in flow.py.
"""

import numpy as np
from numba import njit

OK = 0
ERR_RETRACT = 1
ERR_DOMAIN = 2
ERR_VANISH = 3
ERR_DEGEN = 4
ERR_DT_UNDERFLOW = 5
ERR_ENERGY_RETRY = 6

# chunk statuses
CONTINUE = 0
CONVERGED = 1
ESCAPED = 2
MAX_TIME = 3
FAILURE = 4


@njit(cache=True)
def _retract(P, kind, pmode, pa, tmin):
    n, d = P.shape
    if kind == 0:
        return OK
    if kind == 1:
        for i in range(n):
            s = np.sqrt(P[i, 0] ** 2 + P[i, 1] ** 2 + P[i, 2] ** 2)
            if s < 1e-14:
                return ERR_RETRACT
            P[i, 0] /= s
            P[i, 1] /= s
            P[i, 2] /= s
        return OK
    if kind == 2:
        for i in range(n):
            s = P[i, 2] ** 2 - P[i, 0] ** 2 - P[i, 1] ** 2
            if s <= 0.0 or P[i, 2] <= 0.0:
                return ERR_RETRACT
            s = np.sqrt(s)
            P[i, 0] /= s
            P[i, 1] /= s
            P[i, 2] /= s
        return OK
    for i in range(n):
        z = P[i, 2]
        if z < tmin:
            return ERR_DOMAIN
        r = np.sqrt(P[i, 0] ** 2 + P[i, 1] ** 2)
        if r < 1e-14:
            return ERR_RETRACT
        f = 1.0 + 1.0 / z if pmode == 0 else pa
        sc = f / r
        P[i, 0] *= sc
        P[i, 1] *= sc
    return OK


@njit(cache=True)
def _proj_tangent(P, A, kind, pmode, pa):
    """Project every row of A onto the tangent space at P, in place."""
    n = A.shape[0]
    if kind == 0:
        return
    if kind == 1:
        for i in range(n):
            dot = A[i, 0] * P[i, 0] + A[i, 1] * P[i, 1] + A[i, 2] * P[i, 2]
            A[i, 0] -= dot * P[i, 0]
            A[i, 1] -= dot * P[i, 1]
            A[i, 2] -= dot * P[i, 2]
        return
    if kind == 2:
        for i in range(n):
            dot = A[i, 0] * P[i, 0] + A[i, 1] * P[i, 1] - A[i, 2] * P[i, 2]
            A[i, 0] += dot * P[i, 0]
            A[i, 1] += dot * P[i, 1]
            A[i, 2] += dot * P[i, 2]
        return
    for i in range(n):
        z = P[i, 2]
        if pmode == 0:
            fp = -1.0 / (z * z)
        else:
            fp = 0.0
        den = np.sqrt(1.0 + fp * fp)
        r = np.sqrt(P[i, 0] ** 2 + P[i, 1] ** 2)
        n0 = -P[i, 0] / (r * den)
        n1 = -P[i, 1] / (r * den)
        n2 = fp / den
        dot = A[i, 0] * n0 + A[i, 1] * n1 + A[i, 2] * n2
        A[i, 0] -= dot * n0
        A[i, 1] -= dot * n1
        A[i, 2] -= dot * n2


@njit(cache=True)
def _remove_tau(A, tau, neg):
    """Subtract the tau component of every row (form inner with sign neg)."""
    n, d = A.shape
    for i in range(n):
        dot = 0.0
        for j in range(d - 1):
            dot += A[i, j] * tau[i, j]
        dot += neg * A[i, d - 1] * tau[i, d - 1]
        for j in range(d):
            A[i, j] -= dot * tau[i, j]


@njit(cache=True)
def _nabla_into(P, speeds, tau, a, out, kind, pmode, pa, neg):
    """One normal-connection application: perp(d a / ds), centered stencil."""
    n, d = a.shape
    half_n = 0.5 * n
    for i in range(n):
        ip = i + 1 if i + 1 < n else 0
        im = i - 1 if i >= 1 else n - 1
        inv = half_n / speeds[i]
        for j in range(d):
            out[i, j] = (a[ip, j] - a[im, j]) * inv
    _proj_tangent(P, out, kind, pmode, pa)
    _remove_tau(out, tau, neg)


@njit(cache=True)
def _curve_fields(P, kind, pmode, pa, tmin, p_exp, lam, speeds, tau, k, kn):
    """Speeds, unit tangent, curvature and basic scalars of the state.

    Returns (err, ds_min, kmax, kmin, energy, length).
    """
    n, d = P.shape
    half_n = 0.5 * n
    neg = -1.0 if kind == 2 else 1.0
    is_p2 = p_exp == 2.0
    if kind == 3:
        for i in range(n):
            if P[i, 2] < tmin:
                return ERR_DOMAIN, 0.0, 0.0, 0.0, 0.0, 0.0
    for i in range(n):
        ip = i + 1 if i + 1 < n else 0
        im = i - 1 if i >= 1 else n - 1
        s2 = 0.0
        for j in range(d):
            dj = (P[ip, j] - P[im, j]) * half_n
            tau[i, j] = dj
            if j == d - 1:
                s2 += neg * dj * dj
            else:
                s2 += dj * dj
        if s2 < 1e-24:
            return ERR_DEGEN, 0.0, 0.0, 0.0, 0.0, 0.0
        speeds[i] = np.sqrt(s2)
    _proj_tangent(P, tau, kind, pmode, pa)
    for i in range(n):
        t2 = 0.0
        for j in range(d - 1):
            t2 += tau[i, j] * tau[i, j]
        t2 += neg * tau[i, d - 1] * tau[i, d - 1]
        if t2 < 1e-24:
            return ERR_DEGEN, 0.0, 0.0, 0.0, 0.0, 0.0
        tn = np.sqrt(t2)
        for j in range(d):
            tau[i, j] /= tn
    for i in range(n):
        ip = i + 1 if i + 1 < n else 0
        im = i - 1 if i >= 1 else n - 1
        inv = half_n / speeds[i]
        for j in range(d):
            k[i, j] = (tau[ip, j] - tau[im, j]) * inv
    _proj_tangent(P, k, kind, pmode, pa)
    _remove_tau(k, tau, neg)
    ds_min = 1e300
    kmax = 0.0
    kmin = 1e300
    energy = 0.0
    length = 0.0
    inv_n = 1.0 / n
    for i in range(n):
        k2 = 0.0
        for j in range(d - 1):
            k2 += k[i, j] * k[i, j]
        k2 += neg * k[i, d - 1] * k[i, d - 1]
        if k2 < 0.0:
            k2 = 0.0
        kni = np.sqrt(k2)
        kn[i] = kni
        if kni > kmax:
            kmax = kni
        if kni < kmin:
            kmin = kni
        ds = speeds[i] * inv_n
        if ds < ds_min:
            ds_min = ds
        length += ds
        if is_p2:
            energy += (lam + 0.5 * k2) * ds
        else:
            energy += (lam + kni**p_exp / p_exp) * ds
    return OK, ds_min, kmax, kmin, energy, length


@njit(cache=True)
def _velocity(P, kind, pmode, pa, tmin, p_exp, lam, speeds, tau, k, kn, w, t1, V):
    """Flow velocity (-gradient) into V; returns state scalars.

    Returns (err, ds_min, kmax, kmin, energy, residual, length).
    """
    n, d = P.shape
    err, ds_min, kmax, kmin, energy, length = _curve_fields(
        P, kind, pmode, pa, tmin, p_exp, lam, speeds, tau, k, kn
    )
    if err != OK:
        return err, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    neg = -1.0 if kind == 2 else 1.0
    is_p2 = p_exp == 2.0
    if is_p2:
        for i in range(n):
            for j in range(d):
                w[i, j] = k[i, j]
    else:
        for i in range(n):
            if kn[i] < 1e-8:
                return ERR_VANISH, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
            c = kn[i] ** (p_exp - 2.0)
            for j in range(d):
                w[i, j] = c * k[i, j]
    _nabla_into(P, speeds, tau, w, t1, kind, pmode, pa, neg)
    _nabla_into(P, speeds, tau, t1, V, kind, pmode, pa, neg)  # V holds nabla^2 w
    inv_pc = (p_exp - 1.0) / p_exp  # 1/p'
    pc = p_exp / (p_exp - 1.0)
    racc = 0.0
    inv_n = 1.0 / n
    for i in range(n):
        if kind == 0:
            K = 0.0
        elif kind == 1:
            K = 1.0
        elif kind == 2:
            K = -1.0
        else:
            z = P[i, 2]
            if pmode == 0:
                f = 1.0 + 1.0 / z
                fp = -1.0 / (z * z)
                fpp = 2.0 / (z * z * z)
            else:
                f = pa
                fp = 0.0
                fpp = 0.0
            u = 1.0 + fp * fp
            K = -fpp / (f * u * u)
        tt = 0.0
        wt = 0.0
        for j in range(d - 1):
            tt += tau[i, j] * tau[i, j]
            wt += w[i, j] * tau[i, j]
        tt += neg * tau[i, d - 1] * tau[i, d - 1]
        wt += neg * w[i, d - 1] * tau[i, d - 1]
        if is_p2:
            coef = kn[i] * kn[i] * 0.5 - lam
        else:
            coef = kn[i] ** p_exp * inv_pc - lam
        v2 = 0.0
        for j in range(d):
            vj = -(V[i, j] + coef * k[i, j] + K * (tt * w[i, j] - wt * tau[i, j]))
            V[i, j] = vj
            if j == d - 1:
                v2 += neg * vj * vj
            else:
                v2 += vj * vj
        if v2 < 0.0:
            v2 = 0.0
        if is_p2:
            racc += v2 * speeds[i] * inv_n
        else:
            racc += v2 ** (0.5 * pc) * speeds[i] * inv_n
    if is_p2:
        residual = np.sqrt(racc)
    else:
        residual = racc ** (1.0 / pc)
    return OK, ds_min, kmax, kmin, energy, residual, length


@njit(cache=True)
def _rk4(P, V1, dt, kind, pmode, pa, tmin, p_exp, lam,
         speeds, tau, k, kn, w, t1, y, V2, newP):
    """One classical RK4 update with per-stage retraction; result in newP."""
    n, d = P.shape
    for i in range(n):
        for j in range(d):
            newP[i, j] = P[i, j] + (dt / 6.0) * V1[i, j]
            y[i, j] = P[i, j] + 0.5 * dt * V1[i, j]
    err = _retract(y, kind, pmode, pa, tmin)
    if err != OK:
        return err
    err = _velocity(y, kind, pmode, pa, tmin, p_exp, lam,
                    speeds, tau, k, kn, w, t1, V2)[0]
    if err != OK:
        return err
    for i in range(n):
        for j in range(d):
            newP[i, j] += (dt / 3.0) * V2[i, j]
            y[i, j] = P[i, j] + 0.5 * dt * V2[i, j]
    err = _retract(y, kind, pmode, pa, tmin)
    if err != OK:
        return err
    err = _velocity(y, kind, pmode, pa, tmin, p_exp, lam,
                    speeds, tau, k, kn, w, t1, V2)[0]
    if err != OK:
        return err
    for i in range(n):
        for j in range(d):
            newP[i, j] += (dt / 3.0) * V2[i, j]
            y[i, j] = P[i, j] + dt * V2[i, j]
    err = _retract(y, kind, pmode, pa, tmin)
    if err != OK:
        return err
    err = _velocity(y, kind, pmode, pa, tmin, p_exp, lam,
                    speeds, tau, k, kn, w, t1, V2)[0]
    if err != OK:
        return err
    for i in range(n):
        for j in range(d):
            newP[i, j] += (dt / 6.0) * V2[i, j]
    return _retract(newP, kind, pmode, pa, tmin)


@njit(cache=True)
def _reparam(P, newP, s, chords, kind, pmode, pa, tmin):
    """Resample at equal cumulative chord length, 4-point Lagrange, retract."""
    n, d = P.shape
    neg = -1.0 if kind == 2 else 1.0
    total = 0.0
    for i in range(n):
        ip = i + 1 if i + 1 < n else 0
        c2 = 0.0
        for j in range(d):
            dj = P[ip, j] - P[i, j]
            if j == d - 1:
                c2 += neg * dj * dj
            else:
                c2 += dj * dj
        if c2 <= 0.0:
            return ERR_DEGEN
        s[i] = total
        chords[i] = np.sqrt(c2)
        total += chords[i]
    s[n] = total
    seg = 0
    for m in range(n):
        t = m * total / n
        while seg + 1 <= n - 1 and s[seg + 1] <= t:
            seg += 1
        im1 = seg - 1 if seg >= 1 else n - 1
        ip1 = seg + 1 if seg + 1 < n else 0
        ip2 = seg + 2 if seg + 2 < n else seg + 2 - n
        x0 = s[seg] - chords[im1]
        x1 = s[seg]
        x2 = s[seg + 1]
        x3 = s[seg + 1] + chords[ip1]
        l0 = ((t - x1) * (t - x2) * (t - x3)) / ((x0 - x1) * (x0 - x2) * (x0 - x3))
        l1 = ((t - x0) * (t - x2) * (t - x3)) / ((x1 - x0) * (x1 - x2) * (x1 - x3))
        l2 = ((t - x0) * (t - x1) * (t - x3)) / ((x2 - x0) * (x2 - x1) * (x2 - x3))
        l3 = ((t - x0) * (t - x1) * (t - x2)) / ((x3 - x0) * (x3 - x1) * (x3 - x2))
        for j in range(d):
            newP[m, j] = l0 * P[im1, j] + l1 * P[seg, j] + l2 * P[ip1, j] + l3 * P[ip2, j]
    err = _retract(newP, kind, pmode, pa, tmin)
    if err != OK:
        return err
    for i in range(n):
        for j in range(d):
            P[i, j] = newP[i, j]
    return OK


# ----------------------------------------------------------------------
# Specialized planar path (Euclidean, d = 2).  Projection and retraction
# are trivial there, and the planar ellipse scenario needs millions of
# steps; flat coordinate arrays let LLVM vectorize the stencil passes.
# ----------------------------------------------------------------------


@njit(cache=True)
def _vel_r2(px, py, sp, inv, tx, ty, kx, ky, wx, wy, ax, ay, vx, vy, p_exp, lam):
    """Planar flow velocity; same stencils as the generic kernel.

    Returns (err, ds_min, kmax, kmin, energy, residual, length).
    """
    n = px.shape[0]
    half_n = 0.5 * n
    inv_n = 1.0 / n
    is_p2 = p_exp == 2.0

    tx[0] = (px[1] - px[n - 1]) * half_n
    ty[0] = (py[1] - py[n - 1]) * half_n
    tx[n - 1] = (px[0] - px[n - 2]) * half_n
    ty[n - 1] = (py[0] - py[n - 2]) * half_n
    for i in range(1, n - 1):
        tx[i] = (px[i + 1] - px[i - 1]) * half_n
        ty[i] = (py[i + 1] - py[i - 1]) * half_n
    ds_min = 1e300
    length = 0.0
    for i in range(n):
        s2 = tx[i] * tx[i] + ty[i] * ty[i]
        if s2 < 1e-24:
            return ERR_DEGEN, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
        s = np.sqrt(s2)
        sp[i] = s
        inv[i] = 1.0 / s
        tx[i] *= inv[i]
        ty[i] *= inv[i]
        ds = s * inv_n
        if ds < ds_min:
            ds_min = ds
        length += ds

    kx[0] = (tx[1] - tx[n - 1]) * half_n * inv[0]
    ky[0] = (ty[1] - ty[n - 1]) * half_n * inv[0]
    kx[n - 1] = (tx[0] - tx[n - 2]) * half_n * inv[n - 1]
    ky[n - 1] = (ty[0] - ty[n - 2]) * half_n * inv[n - 1]
    for i in range(1, n - 1):
        c = half_n * inv[i]
        kx[i] = (tx[i + 1] - tx[i - 1]) * c
        ky[i] = (ty[i + 1] - ty[i - 1]) * c
    kmax = 0.0
    kmin = 1e300
    energy = 0.0
    for i in range(n):
        dot = kx[i] * tx[i] + ky[i] * ty[i]
        kx[i] -= dot * tx[i]
        ky[i] -= dot * ty[i]
        k2 = kx[i] * kx[i] + ky[i] * ky[i]
        kni = np.sqrt(k2)
        if kni > kmax:
            kmax = kni
        if kni < kmin:
            kmin = kni
        if is_p2:
            energy += (lam + 0.5 * k2) * sp[i] * inv_n
        else:
            energy += (lam + kni**p_exp / p_exp) * sp[i] * inv_n
    if is_p2:
        for i in range(n):
            wx[i] = kx[i]
            wy[i] = ky[i]
    else:
        for i in range(n):
            kni = np.sqrt(kx[i] * kx[i] + ky[i] * ky[i])
            if kni < 1e-8:
                return ERR_VANISH, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
            c = kni ** (p_exp - 2.0)
            wx[i] = c * kx[i]
            wy[i] = c * ky[i]

    ax[0] = (wx[1] - wx[n - 1]) * half_n * inv[0]
    ay[0] = (wy[1] - wy[n - 1]) * half_n * inv[0]
    ax[n - 1] = (wx[0] - wx[n - 2]) * half_n * inv[n - 1]
    ay[n - 1] = (wy[0] - wy[n - 2]) * half_n * inv[n - 1]
    for i in range(1, n - 1):
        c = half_n * inv[i]
        ax[i] = (wx[i + 1] - wx[i - 1]) * c
        ay[i] = (wy[i + 1] - wy[i - 1]) * c
    for i in range(n):
        dot = ax[i] * tx[i] + ay[i] * ty[i]
        ax[i] -= dot * tx[i]
        ay[i] -= dot * ty[i]

    vx[0] = (ax[1] - ax[n - 1]) * half_n * inv[0]
    vy[0] = (ay[1] - ay[n - 1]) * half_n * inv[0]
    vx[n - 1] = (ax[0] - ax[n - 2]) * half_n * inv[n - 1]
    vy[n - 1] = (ay[0] - ay[n - 2]) * half_n * inv[n - 1]
    for i in range(1, n - 1):
        c = half_n * inv[i]
        vx[i] = (ax[i + 1] - ax[i - 1]) * c
        vy[i] = (ay[i + 1] - ay[i - 1]) * c
    inv_pc = (p_exp - 1.0) / p_exp
    pc = p_exp / (p_exp - 1.0)
    racc = 0.0
    for i in range(n):
        dot = vx[i] * tx[i] + vy[i] * ty[i]
        lx = vx[i] - dot * tx[i]
        ly = vy[i] - dot * ty[i]
        k2 = kx[i] * kx[i] + ky[i] * ky[i]
        if is_p2:
            coef = 0.5 * k2 - lam
        else:
            coef = np.sqrt(k2) ** p_exp * inv_pc - lam
        a = -(lx + coef * kx[i])
        b = -(ly + coef * ky[i])
        vx[i] = a
        vy[i] = b
        v2 = a * a + b * b
        if is_p2:
            racc += v2 * sp[i] * inv_n
        else:
            racc += v2 ** (0.5 * pc) * sp[i] * inv_n
    residual = np.sqrt(racc) if is_p2 else racc ** (1.0 / pc)
    return OK, ds_min, kmax, kmin, energy, residual, length


@njit(cache=True)
def _reparam_r2(px, py, s, chords, nx, ny):
    """Planar resampling at equal cumulative chord length (4-pt Lagrange)."""
    n = px.shape[0]
    total = 0.0
    for i in range(n):
        ip = i + 1 if i + 1 < n else 0
        dx = px[ip] - px[i]
        dy = py[ip] - py[i]
        c2 = dx * dx + dy * dy
        if c2 <= 0.0:
            return ERR_DEGEN
        s[i] = total
        chords[i] = np.sqrt(c2)
        total += chords[i]
    s[n] = total
    seg = 0
    for m in range(n):
        t = m * total / n
        while seg + 1 <= n - 1 and s[seg + 1] <= t:
            seg += 1
        im1 = seg - 1 if seg >= 1 else n - 1
        ip1 = seg + 1 if seg + 1 < n else 0
        ip2 = seg + 2 if seg + 2 < n else seg + 2 - n
        x0 = s[seg] - chords[im1]
        x1 = s[seg]
        x2 = s[seg + 1]
        x3 = s[seg + 1] + chords[ip1]
        l0 = ((t - x1) * (t - x2) * (t - x3)) / ((x0 - x1) * (x0 - x2) * (x0 - x3))
        l1 = ((t - x0) * (t - x2) * (t - x3)) / ((x1 - x0) * (x1 - x2) * (x1 - x3))
        l2 = ((t - x0) * (t - x1) * (t - x3)) / ((x2 - x0) * (x2 - x1) * (x2 - x3))
        l3 = ((t - x0) * (t - x1) * (t - x2)) / ((x3 - x0) * (x3 - x1) * (x3 - x2))
        nx[m] = l0 * px[im1] + l1 * px[seg] + l2 * px[ip1] + l3 * px[ip2]
        ny[m] = l0 * py[im1] + l1 * py[seg] + l2 * py[ip1] + l3 * py[ip2]
    for i in range(n):
        px[i] = nx[i]
        py[i] = ny[i]
    return OK


@njit(cache=True)
def run_chunk_r2(px, py, t0, step0, last_dt0, p_exp, lam,
                 dt_safety, t_max, reparam_every, tol_res,
                 esc_on, esc_coord, esc_bound, esc_dir,
                 mono_tol, sample_every,
                 samp_step, samp_time, samp_energy, samp_res, samp_dt,
                 samp_length, samp_kmax, samp_kmin, samp_pts):
    """Planar chunk runner; mirrors run_chunk with the flat fast path.

    The accepted candidate's velocity doubles as the next step's first
    stage, so one accepted step costs four velocity evaluations.
    """
    n = px.shape[0]
    sp = np.empty(n)
    inv = np.empty(n)
    tx = np.empty(n)
    ty = np.empty(n)
    kx = np.empty(n)
    ky = np.empty(n)
    wx = np.empty(n)
    wy = np.empty(n)
    ax = np.empty(n)
    ay = np.empty(n)
    v1x = np.empty(n)
    v1y = np.empty(n)
    v2x = np.empty(n)
    v2y = np.empty(n)
    yx = np.empty(n)
    yy = np.empty(n)
    cx = np.empty(n)
    cy = np.empty(n)
    s = np.empty(n + 1)
    chords = np.empty(n)

    cap = samp_step.shape[0]
    ns = 0
    t = t0
    step = step0
    last_dt = last_dt0
    tol_eff = tol_res * (1.0 - 1e-9)

    err, ds_min, kmax, kmin, energy, res, length = _vel_r2(
        px, py, sp, inv, tx, ty, kx, ky, wx, wy, ax, ay, v1x, v1y, p_exp, lam
    )
    if err != OK:
        return FAILURE, err, step, t, last_dt, ns
    fresh = True

    while True:
        if not fresh:
            err, ds_min, kmax, kmin, energy, res, length = _vel_r2(
                px, py, sp, inv, tx, ty, kx, ky, wx, wy, ax, ay, v1x, v1y,
                p_exp, lam
            )
            if err != OK:
                return FAILURE, err, step, t, last_dt, ns
            fresh = True

        if sample_every > 0 and step % sample_every == 0:
            samp_step[ns] = step
            samp_time[ns] = t
            samp_energy[ns] = energy
            samp_res[ns] = res
            samp_dt[ns] = last_dt
            samp_length[ns] = length
            samp_kmax[ns] = kmax
            samp_kmin[ns] = kmin
            for i in range(n):
                samp_pts[ns, i, 0] = px[i]
                samp_pts[ns, i, 1] = py[i]
            ns += 1

        if res < tol_eff:
            return CONVERGED, OK, step, t, last_dt, ns
        if esc_on == 1:
            mean_c = 0.0
            if esc_coord == 0:
                for i in range(n):
                    mean_c += px[i]
            else:
                for i in range(n):
                    mean_c += py[i]
            mean_c /= n
            if (esc_dir > 0 and mean_c >= esc_bound) or (
                esc_dir < 0 and mean_c <= esc_bound
            ):
                return ESCAPED, OK, step, t, last_dt, ns
        if t >= t_max:
            return MAX_TIME, OK, step, t, last_dt, ns
        if ns >= cap:
            return CONTINUE, OK, step, t, last_dt, ns

        if p_exp == 2.0:
            stiff = 1.0 if kmax > 0.0 else 0.0
        else:
            stiff = kmax ** (p_exp - 2.0)
        dt = dt_safety * ds_min**4 / (1.0 + stiff)
        if dt < 1e-12:
            return FAILURE, ERR_DT_UNDERFLOW, step, t, last_dt, ns

        accepted = False
        for _ in range(21):
            # RK4 stages on the flat arrays (no retraction needed in R^2)
            for i in range(n):
                cx[i] = px[i] + (dt / 6.0) * v1x[i]
                cy[i] = py[i] + (dt / 6.0) * v1y[i]
                yx[i] = px[i] + 0.5 * dt * v1x[i]
                yy[i] = py[i] + 0.5 * dt * v1y[i]
            err = _vel_r2(yx, yy, sp, inv, tx, ty, kx, ky, wx, wy, ax, ay,
                          v2x, v2y, p_exp, lam)[0]
            if err != OK:
                return FAILURE, err, step, t, last_dt, ns
            for i in range(n):
                cx[i] += (dt / 3.0) * v2x[i]
                cy[i] += (dt / 3.0) * v2y[i]
                yx[i] = px[i] + 0.5 * dt * v2x[i]
                yy[i] = py[i] + 0.5 * dt * v2y[i]
            err = _vel_r2(yx, yy, sp, inv, tx, ty, kx, ky, wx, wy, ax, ay,
                          v2x, v2y, p_exp, lam)[0]
            if err != OK:
                return FAILURE, err, step, t, last_dt, ns
            for i in range(n):
                cx[i] += (dt / 3.0) * v2x[i]
                yx[i] = px[i] + dt * v2x[i]
                cy[i] += (dt / 3.0) * v2y[i]
                yy[i] = py[i] + dt * v2y[i]
            err = _vel_r2(yx, yy, sp, inv, tx, ty, kx, ky, wx, wy, ax, ay,
                          v2x, v2y, p_exp, lam)[0]
            if err != OK:
                return FAILURE, err, step, t, last_dt, ns
            for i in range(n):
                cx[i] += (dt / 6.0) * v2x[i]
                cy[i] += (dt / 6.0) * v2y[i]
            err, nds_min, nkmax, nkmin, e_new, nres, nlength = _vel_r2(
                cx, cy, sp, inv, tx, ty, kx, ky, wx, wy, ax, ay, v2x, v2y,
                p_exp, lam
            )
            if err != OK:
                return FAILURE, err, step, t, last_dt, ns
            if e_new <= energy + mono_tol:
                accepted = True
                break
            dt *= 0.5
        if not accepted:
            return FAILURE, ERR_ENERGY_RETRY, step, t, last_dt, ns

        for i in range(n):
            px[i] = cx[i]
            py[i] = cy[i]
            v1x[i] = v2x[i]
            v1y[i] = v2y[i]
        ds_min, kmax, kmin, energy, res, length = nds_min, nkmax, nkmin, e_new, nres, nlength
        t += dt
        step += 1
        last_dt = dt

        if reparam_every > 0 and step % reparam_every == 0:
            err = _reparam_r2(px, py, s, chords, yx, yy)
            if err != OK:
                return FAILURE, err, step, t, last_dt, ns
        else:
            fresh = True
            continue
        fresh = False


@njit(cache=True)
def run_chunk(P, t0, step0, last_dt0,
              kind, pmode, pa, tmin, p_exp, lam,
              dt_safety, t_max, reparam_every, tol_res,
              esc_on, esc_coord, esc_bound, esc_dir,
              mono_tol, sample_every,
              samp_step, samp_time, samp_energy, samp_res, samp_dt,
              samp_length, samp_kmax, samp_kmin, samp_pts):
    """Advance the flow until termination or the sample buffer fills.

    Returns (status, err, step, t, last_dt, n_samples).  The caller owns
    the buffers and re-invokes with the returned state on CONTINUE.
    """
    n, d = P.shape
    speeds = np.empty(n)
    kn = np.empty(n)
    tau = np.empty((n, d))
    k = np.empty((n, d))
    w = np.empty((n, d))
    t1 = np.empty((n, d))
    V1 = np.empty((n, d))
    V2 = np.empty((n, d))
    y = np.empty((n, d))
    newP = np.empty((n, d))
    s = np.empty(n + 1)
    chords = np.empty(n)

    cap = samp_step.shape[0]
    ns = 0
    t = t0
    step = step0
    last_dt = last_dt0
    tol_eff = tol_res * (1.0 - 1e-9)

    while True:
        err, ds_min, kmax, kmin, energy, res, length = _velocity(
            P, kind, pmode, pa, tmin, p_exp, lam, speeds, tau, k, kn, w, t1, V1
        )
        if err != OK:
            return FAILURE, err, step, t, last_dt, ns

        if sample_every > 0 and step % sample_every == 0:
            samp_step[ns] = step
            samp_time[ns] = t
            samp_energy[ns] = energy
            samp_res[ns] = res
            samp_dt[ns] = last_dt
            samp_length[ns] = length
            samp_kmax[ns] = kmax
            samp_kmin[ns] = kmin
            for i in range(n):
                for j in range(d):
                    samp_pts[ns, i, j] = P[i, j]
            ns += 1

        if res < tol_eff:
            return CONVERGED, OK, step, t, last_dt, ns
        if esc_on == 1:
            mean_c = 0.0
            for i in range(n):
                mean_c += P[i, esc_coord]
            mean_c /= n
            if (esc_dir > 0 and mean_c >= esc_bound) or (
                esc_dir < 0 and mean_c <= esc_bound
            ):
                return ESCAPED, OK, step, t, last_dt, ns
        if t >= t_max:
            return MAX_TIME, OK, step, t, last_dt, ns
        if ns >= cap:
            return CONTINUE, OK, step, t, last_dt, ns

        if p_exp == 2.0:
            stiff = 1.0 if kmax > 0.0 else 0.0
        else:
            stiff = kmax ** (p_exp - 2.0)
        dt = dt_safety * ds_min**4 / (1.0 + stiff)
        if dt < 1e-12:
            return FAILURE, ERR_DT_UNDERFLOW, step, t, last_dt, ns

        accepted = False
        for _ in range(21):
            err = _rk4(P, V1, dt, kind, pmode, pa, tmin, p_exp, lam,
                       speeds, tau, k, kn, w, t1, y, V2, newP)
            if err != OK:
                return FAILURE, err, step, t, last_dt, ns
            err, _, _, _, e_new, _ = _curve_fields(
                newP, kind, pmode, pa, tmin, p_exp, lam, speeds, tau, k, kn
            )
            if err != OK:
                return FAILURE, err, step, t, last_dt, ns
            if e_new <= energy + mono_tol:
                accepted = True
                break
            dt *= 0.5
        if not accepted:
            return FAILURE, ERR_ENERGY_RETRY, step, t, last_dt, ns

        for i in range(n):
            for j in range(d):
                P[i, j] = newP[i, j]
        t += dt
        step += 1
        last_dt = dt

        if reparam_every > 0 and step % reparam_every == 0:
            err = _reparam(P, newP, s, chords, kind, pmode, pa, tmin)
            if err != OK:
                return FAILURE, err, step, t, last_dt, ns
