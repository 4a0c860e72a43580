"""Numba kernels for planar articulated-body dynamics.

Everything here works on a tree of single-dof joints, one rigid body per dof,
with ``parent[i] < i``. Spatial quantities are planar 3-vectors expressed in
world coordinates at the world origin: motion ``(omega, vx, vz)`` and force
``(moment, fx, fz)``. Angles are counter-clockwise in the x-z plane, so a
positive pitch lifts the +x side.
"""

import math

import numpy as np
from numba import njit

PRISMATIC_X = 0
PRISMATIC_Z = 1
REVOLUTE = 2


@njit(cache=True)
def _rot(phi, x, z):
    c = math.cos(phi)
    s = math.sin(phi)
    return c * x - s * z, s * x + c * z


@njit(cache=True)
def forward_kinematics(jtype, parent, offset, q, phi, pos, S):
    """Fill body angles, body origins and world-frame motion subspaces."""
    n = q.shape[0]
    for i in range(n):
        p = parent[i]
        if p < 0:
            php = 0.0
            px0 = 0.0
            pz0 = 0.0
        else:
            php = phi[p]
            px0 = pos[p, 0]
            pz0 = pos[p, 1]
        ox = offset[i, 0]
        oz = offset[i, 1]
        t = jtype[i]
        if t == PRISMATIC_X:
            ox += q[i]
        elif t == PRISMATIC_Z:
            oz += q[i]
        dx, dz = _rot(php, ox, oz)
        pos[i, 0] = px0 + dx
        pos[i, 1] = pz0 + dz
        if t == REVOLUTE:
            phi[i] = php + q[i]
            S[i, 0] = 1.0
            S[i, 1] = pos[i, 1]
            S[i, 2] = -pos[i, 0]
        else:
            phi[i] = php
            if t == PRISMATIC_X:
                ax, az = _rot(php, 1.0, 0.0)
            else:
                ax, az = _rot(php, 0.0, 1.0)
            S[i, 0] = 0.0
            S[i, 1] = ax
            S[i, 2] = az


@njit(cache=True)
def world_inertias(mass, inertia, com, phi, pos, Iw):
    n = mass.shape[0]
    for i in range(n):
        dx, dz = _rot(phi[i], com[i, 0], com[i, 1])
        cx = pos[i, 0] + dx
        cz = pos[i, 1] + dz
        m = mass[i]
        Iw[i, 0, 0] = inertia[i] + m * (cx * cx + cz * cz)
        Iw[i, 0, 1] = -m * cz
        Iw[i, 0, 2] = m * cx
        Iw[i, 1, 0] = -m * cz
        Iw[i, 1, 1] = m
        Iw[i, 1, 2] = 0.0
        Iw[i, 2, 0] = m * cx
        Iw[i, 2, 1] = 0.0
        Iw[i, 2, 2] = m


@njit(cache=True)
def crba(parent, S, Iw, M):
    """Composite-rigid-body algorithm; writes the joint-space inertia into M."""
    n = parent.shape[0]
    M[:, :] = 0.0
    Ic = Iw.copy()
    for i in range(n - 1, -1, -1):
        p = parent[i]
        if p >= 0:
            for r in range(3):
                for c in range(3):
                    Ic[p, r, c] += Ic[i, r, c]
    F = np.empty(3)
    for i in range(n):
        for r in range(3):
            F[r] = Ic[i, r, 0] * S[i, 0] + Ic[i, r, 1] * S[i, 1] + Ic[i, r, 2] * S[i, 2]
        M[i, i] = S[i, 0] * F[0] + S[i, 1] * F[1] + S[i, 2] * F[2]
        j = i
        while parent[j] >= 0:
            j = parent[j]
            val = S[j, 0] * F[0] + S[j, 1] * F[1] + S[j, 2] * F[2]
            M[i, j] = val
            M[j, i] = val


@njit(cache=True)
def rnea(parent, S, Iw, qd, qdd, gravity, tau):
    """Recursive Newton-Euler inverse dynamics in world coordinates."""
    n = parent.shape[0]
    v = np.zeros((n, 3))
    a = np.zeros((n, 3))
    f = np.zeros((n, 3))
    h = np.empty(3)
    for i in range(n):
        p = parent[i]
        if p >= 0:
            vp0, vp1, vp2 = v[p, 0], v[p, 1], v[p, 2]
            ap0, ap1, ap2 = a[p, 0], a[p, 1], a[p, 2]
        else:
            vp0, vp1, vp2 = 0.0, 0.0, 0.0
            # fictitious upward acceleration of the ground stands in for gravity
            ap0, ap1, ap2 = 0.0, 0.0, gravity
        w = vp0 + S[i, 0] * qd[i]
        vx = vp1 + S[i, 1] * qd[i]
        vz = vp2 + S[i, 2] * qd[i]
        v[i, 0] = w
        v[i, 1] = vx
        v[i, 2] = vz
        # crm(v_i) S_i qd_i
        c1 = (vz * S[i, 0] - w * S[i, 2]) * qd[i]
        c2 = (-vx * S[i, 0] + w * S[i, 1]) * qd[i]
        a[i, 0] = ap0 + S[i, 0] * qdd[i]
        a[i, 1] = ap1 + S[i, 1] * qdd[i] + c1
        a[i, 2] = ap2 + S[i, 2] * qdd[i] + c2
        for r in range(3):
            h[r] = Iw[i, r, 0] * w + Iw[i, r, 1] * vx + Iw[i, r, 2] * vz
        for r in range(3):
            f[i, r] = Iw[i, r, 0] * a[i, 0] + Iw[i, r, 1] * a[i, 1] + Iw[i, r, 2] * a[i, 2]
        # crf(v_i) h
        f[i, 0] += -vz * h[1] + vx * h[2]
        f[i, 1] += -w * h[2]
        f[i, 2] += w * h[1]
    for i in range(n - 1, -1, -1):
        tau[i] = S[i, 0] * f[i, 0] + S[i, 1] * f[i, 1] + S[i, 2] * f[i, 2]
        p = parent[i]
        if p >= 0:
            for r in range(3):
                f[p, r] += f[i, r]


@njit(cache=True)
def point_world(body, local, phi, pos):
    dx, dz = _rot(phi[body], local[0], local[1])
    return pos[body, 0] + dx, pos[body, 1] + dz


@njit(cache=True)
def point_jacobian(parent, S, body, px, pz, J):
    """2 x n Jacobian mapping generalized velocity to the point's velocity."""
    n = parent.shape[0]
    for j in range(n):
        J[0, j] = 0.0
        J[1, j] = 0.0
    j = body
    while j >= 0:
        J[0, j] = S[j, 1] - S[j, 0] * pz
        J[1, j] = S[j, 2] + S[j, 0] * px
        j = parent[j]


@njit(cache=True)
def cholesky_solve(A, b, x):
    """Solve A x = b for symmetric positive definite A. Returns False if A is not SPD."""
    n = A.shape[0]
    L = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if s <= 0.0:
                    return False
                L[i, i] = math.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    y = np.empty(n)
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * y[k]
        y[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):
        s = y[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return True


@njit(cache=True)
def terrain_height(heights, x0, cell, x):
    if heights.shape[0] == 0:
        return 0.0
    idx = int(math.floor((x - x0) / cell))
    if idx < 0 or idx >= heights.shape[0]:
        return 0.0
    return heights[idx]


@njit(cache=True)
def _sign(x):
    if x > 0.0:
        return 1.0
    if x < 0.0:
        return -1.0
    return 0.0


@njit(cache=True)
def kinetic_gradient(parent, S, Iw, qd, out):
    """Partial derivative of kinetic energy w.r.t. q at fixed qd.

    Equals ``(v_i x S_i) . H_i`` with ``H_i`` the spatial momentum of the
    subtree rooted at body i.
    """
    n = parent.shape[0]
    vb = np.zeros((n, 3))
    H = np.zeros((n, 3))
    for i in range(n):
        p = parent[i]
        for r in range(3):
            vb[i, r] = (vb[p, r] if p >= 0 else 0.0) + S[i, r] * qd[i]
        for r in range(3):
            H[i, r] = Iw[i, r, 0] * vb[i, 0] + Iw[i, r, 1] * vb[i, 1] + Iw[i, r, 2] * vb[i, 2]
    for i in range(n - 1, -1, -1):
        p = parent[i]
        if p >= 0:
            for r in range(3):
                H[p, r] += H[i, r]
    for i in range(n):
        w, vx, vz = vb[i, 0], vb[i, 1], vb[i, 2]
        d1 = vz * S[i, 0] - w * S[i, 2]
        d2 = -vx * S[i, 0] + w * S[i, 1]
        out[i] = d1 * H[i, 1] + d2 * H[i, 2]


@njit(cache=True)
def momentum(jtype, parent, offset, mass, inertia, com, q, v, p):
    """Generalized momentum ``M(q) v``."""
    n = q.shape[0]
    phi = np.empty(n)
    pos = np.empty((n, 2))
    S = np.empty((n, 3))
    Iw = np.empty((n, 3, 3))
    M = np.empty((n, n))
    forward_kinematics(jtype, parent, offset, q, phi, pos, S)
    world_inertias(mass, inertia, com, phi, pos, Iw)
    crba(parent, S, Iw, M)
    for i in range(n):
        s = 0.0
        for j in range(n):
            s += M[i, j] * v[j]
        p[i] = s


@njit(cache=True)
def velocity(jtype, parent, offset, mass, inertia, com, q, p, v):
    """Velocity ``M(q)^-1 p``. Returns False if M is not positive definite."""
    n = q.shape[0]
    phi = np.empty(n)
    pos = np.empty((n, 2))
    S = np.empty((n, 3))
    Iw = np.empty((n, 3, 3))
    M = np.empty((n, n))
    forward_kinematics(jtype, parent, offset, q, phi, pos, S)
    world_inertias(mass, inertia, com, phi, pos, Iw)
    crba(parent, S, Iw, M)
    return cholesky_solve(M, p, v)


FIXED_POINT_ITERS = 2


@njit(cache=True)
def substep(
    dt, gravity,
    jtype, parent, offset, mass, inertia, com,
    foot_body, foot_local, knee_body, knee_local, base_body, base_local,
    kp, kd, tau_lim, coulomb, viscous, qlo, qhi, delay,
    k_n, c_n, k_t, mu, heights, x0, cell,
    ext_fx, ext_fz, target,
    q, v, p, qdd, tau_m, tau_f, buf,
    fn, ft, incontact, t_air, last_air, touchdown, t_start,
    knee_hit, base_hit, clock, dyn_q, dyn_v,
):
    """Advance one physics step in place. Returns 0 on success, 1 on divergence.

    Semi-implicit (symplectic) Euler on the canonical pair (q, p = M v):
    ``p+ = p + dt (dT/dq - g + tau + J^T f)`` with the velocity-dependent
    term iterated to the end-of-step velocity, then ``q+ = q + dt v+`` with
    ``v+ = M(q)^-1 p+``. On return ``v`` is only the step velocity v+; callers
    that need the exact velocity at the new configuration use :func:`velocity`.
    ``qdd`` is the acceleration satisfying ``M qdd + b = tau + J^T f`` at the
    pre-step (``dyn_q``, ``dyn_v``).
    """
    n = q.shape[0]
    na = kp.shape[0]
    off = n - na
    phi = np.empty(n)
    pos = np.empty((n, 2))
    S = np.empty((n, 3))
    Iw = np.empty((n, 3, 3))
    M = np.zeros((n, n))
    b = np.empty(n)
    grav = np.empty(n)
    dT = np.empty(n)
    zero = np.zeros(n)
    forward_kinematics(jtype, parent, offset, q, phi, pos, S)
    world_inertias(mass, inertia, com, phi, pos, Iw)
    crba(parent, S, Iw, M)
    if not cholesky_solve(M, p, v):
        return 1
    rnea(parent, S, Iw, v, zero, gravity, b)
    rnea(parent, S, Iw, zero, zero, gravity, grav)

    # delayed PD command
    for r in range(buf.shape[0] - 1, 0, -1):
        for k in range(na):
            buf[r, k] = buf[r - 1, k]
    for k in range(na):
        buf[0, k] = target[k]
    gen = np.zeros(n)
    for k in range(na):
        j = off + k
        pd = kp[k] * (buf[delay, k] - q[j]) - kd[k] * v[j]
        if pd > tau_lim[k]:
            pd = tau_lim[k]
        elif pd < -tau_lim[k]:
            pd = -tau_lim[k]
        fr = coulomb[k] * _sign(v[j]) + viscous[k] * v[j]
        tau_m[k] = pd
        tau_f[k] = fr
        gen[j] = pd - fr

    # penalty normal forces, compression-only damping
    nf = foot_body.shape[0]
    Jt = np.zeros((nf, n))
    Jp = np.empty((2, n))
    contact = np.zeros(nf, dtype=np.bool_)
    for c in range(nf):
        px, pz = point_world(foot_body[c], foot_local[c], phi, pos)
        point_jacobian(parent, S, foot_body[c], px, pz, Jp)
        d = terrain_height(heights, x0, cell, px) - pz
        fn[c] = 0.0
        ft[c] = 0.0
        if d > 0.0:
            vz = 0.0
            for j in range(n):
                vz += Jp[1, j] * v[j]
            f = k_n * d + c_n * max(-vz, 0.0)
            fn[c] = f
            contact[c] = True
            for j in range(n):
                gen[j] += Jp[1, j] * f
        for j in range(n):
            Jt[c, j] = Jp[0, j]

    for c in range(knee_body.shape[0]):
        px, pz = point_world(knee_body[c], knee_local[c], phi, pos)
        if pz < terrain_height(heights, x0, cell, px):
            knee_hit[c] = 1.0
    for c in range(base_local.shape[0]):
        px, pz = point_world(base_body, base_local[c], phi, pos)
        if pz < terrain_height(heights, x0, cell, px):
            base_hit[0] = 1.0

    if ext_fx != 0.0 or ext_fz != 0.0:
        point_jacobian(parent, S, base_body, pos[base_body, 0], pos[base_body, 1], Jp)
        for j in range(n):
            gen[j] += Jp[0, j] * ext_fx + Jp[1, j] * ext_fz

    # tangential friction: viscous slip damping solved implicitly, clamped to the cone
    stick = np.zeros(nf, dtype=np.bool_)
    fslide = np.zeros(nf)
    vn = v.copy()
    A = np.empty((n, n))
    rhs = np.empty(n)
    for _fp in range(FIXED_POINT_ITERS):
        kinetic_gradient(parent, S, Iw, vn, dT)
        for c in range(nf):
            stick[c] = contact[c]
        for _it in range(nf + 1):
            for r in range(n):
                for c2 in range(n):
                    A[r, c2] = M[r, c2]
                rhs[r] = p[r] + dt * (gen[r] + dT[r] - grav[r])
            for c in range(nf):
                if stick[c]:
                    for r in range(n):
                        for c2 in range(n):
                            A[r, c2] += dt * k_t * Jt[c, r] * Jt[c, c2]
                elif contact[c]:
                    for r in range(n):
                        rhs[r] += dt * Jt[c, r] * fslide[c]
            if not cholesky_solve(A, rhs, vn):
                return 1
            changed = False
            for c in range(nf):
                if stick[c]:
                    slip = 0.0
                    for j in range(n):
                        slip += Jt[c, j] * vn[j]
                    f = -k_t * slip
                    lim = mu * fn[c]
                    if abs(f) > lim:
                        stick[c] = False
                        fslide[c] = _sign(f) * lim
                        changed = True
                    else:
                        ft[c] = f
            if not changed:
                break
    for c in range(nf):
        if contact[c] and not stick[c]:
            ft[c] = fslide[c]
        for j in range(n):
            gen[j] += Jt[c, j] * ft[c]

    # acceleration consistent with the equation of motion at (q, v)
    for j in range(n):
        rhs[j] = gen[j] - b[j]
    cholesky_solve(M, rhs, qdd)

    for j in range(n):
        dyn_q[j] = q[j]
        dyn_v[j] = v[j]
        q[j] += vn[j] * dt
    for k in range(na):
        j = off + k
        if q[j] < qlo[k]:
            q[j] = qlo[k]
            if vn[j] < 0.0:
                vn[j] = 0.0
        elif q[j] > qhi[k]:
            q[j] = qhi[k]
            if vn[j] > 0.0:
                vn[j] = 0.0
    for i in range(n):
        s = 0.0
        for j in range(n):
            s += M[i, j] * vn[j]
        p[i] = s
        v[i] = vn[i]

    for c in range(nf):
        if contact[c]:
            if incontact[c] == 0.0:
                last_air[c] = t_air[c]
                touchdown[c] = 1.0
                t_start[c] = clock[0]
            t_air[c] = 0.0
            incontact[c] = 1.0
        else:
            t_air[c] += dt
            incontact[c] = 0.0
    clock[0] += dt

    for j in range(n):
        if not (math.isfinite(q[j]) and math.isfinite(p[j])):
            return 1
    return 0


@njit(cache=True)
def simulate_batch(
    nsub, dt, gravity,
    jtype, parent, offset, mass, inertia, com,
    foot_body, foot_local, knee_body, knee_local, base_body, base_local,
    kp, kd, tau_lim, coulomb, viscous, qlo, qhi, delay,
    k_n, c_n, k_t, mu, heights, x0, cell,
    ext_start, ext_end, target,
    q, v, p, qdd, tau_m, tau_f, buf,
    fn, ft, incontact, t_air, last_air, touchdown, t_start,
    knee_hit, base_hit, clock, dyn_q, dyn_v, status,
):
    """Run ``nsub`` physics steps for every environment in the batch.

    Arrays carrying a leading batch axis: mass, inertia, com, coulomb, delay,
    mu, heights, ext_start, ext_end, target and all state arrays. The external
    base force is interpolated linearly from ``ext_start`` to ``ext_end`` and
    sampled at substep midpoints, so the delivered impulse equals the trapezoid
    of the two end samples. On exit ``v`` holds the exact velocity ``M^-1 p``.
    """
    N = q.shape[0]
    for e in range(N):
        if status[e] != 0:
            continue
        for s in range(nsub):
            frac = (s + 0.5) / nsub
            fx = ext_start[e, 0] + (ext_end[e, 0] - ext_start[e, 0]) * frac
            fz = ext_start[e, 1] + (ext_end[e, 1] - ext_start[e, 1]) * frac
            code = substep(
                dt, gravity,
                jtype, parent, offset, mass[e], inertia[e], com[e],
                foot_body, foot_local, knee_body, knee_local, base_body, base_local,
                kp, kd, tau_lim, coulomb[e], viscous, qlo, qhi, delay[e],
                k_n, c_n, k_t, mu[e], heights[e], x0, cell,
                fx, fz, target[e],
                q[e], v[e], p[e], qdd[e], tau_m[e], tau_f[e], buf[e],
                fn[e], ft[e], incontact[e], t_air[e], last_air[e], touchdown[e], t_start[e],
                knee_hit[e], base_hit[e], clock[e], dyn_q[e], dyn_v[e],
            )
            if code != 0:
                status[e] = code
                break
        if status[e] == 0:
            if not velocity(jtype, parent, offset, mass[e], inertia[e], com[e], q[e], p[e], v[e]):
                status[e] = 1


@njit(cache=True)
def sync_momentum(jtype, parent, offset, mass, inertia, com, q, v, p, rows):
    """Recompute ``p = M(q) v`` for the listed batch rows (after external edits to v)."""
    for e in rows:
        momentum(jtype, parent, offset, mass[e], inertia[e], com[e], q[e], v[e], p[e])
