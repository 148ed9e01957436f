"""Compiled closed-loop right-hand side and RK4 stepper.

Mirrors :meth:`riseform.sim.ClosedLoop.rhs_numpy` operation for operation;
the numpy version is the reference and the test suite checks the two agree.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

PLANT_ARM = 0
PLANT_DOUBLE_INTEGRATOR = 1


@njit(cache=True)
def _sigmoid(s: float) -> float:
    if s >= 0.0:
        return 1.0 / (1.0 + math.exp(-s))
    z = math.exp(s)
    return z / (1.0 + z)


@njit(cache=True)
def _sign(x: float) -> float:
    if x > 0.0:
        return 1.0
    if x < 0.0:
        return -1.0
    return 0.0


@njit(cache=True)
def rhs(
    t, y, out, dims, offs, pinned, offsets, zeta0, zeta0_l1, sc, tune, damping,
    plant_kind, arm, disturbance_on, use_lag, lag_norms, lag_kappa,
):
    n_agents, dim, n1, m1, m2 = dims[0], dims[1], dims[2], dims[3], dims[4]
    k1, k2, k3, k4, b = sc[0], sc[1], sc[2], sc[3], sc[4]
    k34 = k3 + k4
    p = y[offs[0]:offs[1]].reshape((n_agents, dim))
    v = y[offs[1]:offs[2]].reshape((n_agents, dim))
    p_l = y[offs[2]:offs[3]]
    v_l = y[offs[3]:offs[4]]
    uint = y[offs[4]:offs[5]].reshape((n_agents, dim))
    kint = y[offs[5]:offs[6]]
    vw = y[offs[6]:offs[7]].reshape((n_agents, n1 + 1, m1))
    zw = y[offs[7]:offs[8]].reshape((n_agents, m1 + 1, m2))
    ww = y[offs[8]:offs[9]].reshape((n_agents, m2 + 1, dim))

    dp = out[offs[0]:offs[1]].reshape((n_agents, dim))
    dv = out[offs[1]:offs[2]].reshape((n_agents, dim))
    dpl = out[offs[2]:offs[3]]
    dvl = out[offs[3]:offs[4]]
    du = out[offs[4]:offs[5]].reshape((n_agents, dim))
    dk = out[offs[5]:offs[6]]
    dvw = out[offs[6]:offs[7]].reshape((n_agents, n1 + 1, m1))
    dzw = out[offs[7]:offs[8]].reshape((n_agents, m1 + 1, m2))
    dww = out[offs[8]:offs[9]].reshape((n_agents, m2 + 1, dim))

    for k in range(dim):
        dpl[k] = v_l[k]
        dvl[k] = -p_l[k] + damping[k] * (1.0 - p_l[k] * p_l[k]) * v_l[k]

    e = np.zeros(dim)
    delta = np.zeros(dim)
    zeta = np.zeros(dim)
    u = np.zeros(dim)
    x = np.zeros(n1 + 1)
    s2 = np.zeros(m1)
    a2 = np.zeros(m1)
    d2 = np.zeros(m1)
    sig2 = np.zeros(m1 + 1)
    lin2 = np.zeros(m1 + 1)
    s1 = np.zeros(m2)
    a1 = np.zeros(m2)
    d1 = np.zeros(m2)
    sig1 = np.zeros(m2 + 1)
    z_lin2 = np.zeros(m2)
    w_term = np.zeros(m2 + 1)
    g1 = np.zeros(m2)
    g2 = np.zeros(m1)
    yhat = np.zeros(dim)

    for i in range(n_agents):
        for k in range(dim):
            e[k] = 0.0
            delta[k] = 0.0
        for j in range(n_agents):
            h = pinned[i, j]
            if h != 0.0:
                for k in range(dim):
                    e[k] += h * (p[j, k] - p_l[k] - offsets[j, k])
                    delta[k] += h * (v[j, k] - v_l[k])
        l1 = 0.0
        for k in range(dim):
            zeta[k] = delta[k] + k1 * e[k]
            l1 += abs(zeta[k])
        live = 1.0 if l1 >= b else 0.0

        if use_lag:
            nv, nz, nw, kappa_in = lag_norms[i, 0], lag_norms[i, 1], lag_norms[i, 2], lag_kappa[i]
        else:
            nv = 0.0
            for r in range(n1 + 1):
                for c in range(m1):
                    nv += vw[i, r, c] * vw[i, r, c]
            nz = 0.0
            for r in range(m1 + 1):
                for c in range(m2):
                    nz += zw[i, r, c] * zw[i, r, c]
            nw = 0.0
            for r in range(m2 + 1):
                for c in range(dim):
                    nw += ww[i, r, c] * ww[i, r, c]
            nv, nz, nw = math.sqrt(nv), math.sqrt(nz), math.sqrt(nw)
            kappa_in = max(l1, b) - max(zeta0_l1[i], b) + kint[i]
        kappa = max(l1, b) - max(zeta0_l1[i], b) + kint[i]

        # augmented input [1, p, v, zeta, |V|, |Z|, |W|, kappa]
        x[0] = 1.0
        for k in range(dim):
            x[1 + k] = p[i, k]
            x[1 + dim + k] = v[i, k]
            x[1 + 2 * dim + k] = zeta[k]
        x[1 + 3 * dim] = nv
        x[2 + 3 * dim] = nz
        x[3 + 3 * dim] = nw
        x[4 + 3 * dim] = kappa_in

        sig2[0] = 1.0
        lin2[0] = 0.0
        for c in range(m1):
            acc = 0.0
            for r in range(n1 + 1):
                acc += x[r] * vw[i, r, c]
            s2[c] = acc
            a2[c] = _sigmoid(acc)
            d2[c] = a2[c] * (1.0 - a2[c])
            sig2[c + 1] = a2[c]
            lin2[c + 1] = d2[c] * acc
        sig1[0] = 1.0
        for c in range(m2):
            acc = 0.0
            acc2 = 0.0
            for r in range(m1 + 1):
                acc += sig2[r] * zw[i, r, c]
                acc2 += lin2[r] * zw[i, r, c]
            s1[c] = acc
            z_lin2[c] = acc2
            a1[c] = _sigmoid(acc)
            d1[c] = a1[c] * (1.0 - a1[c])
            sig1[c + 1] = a1[c]
        for k in range(dim):
            acc = 0.0
            for r in range(m2 + 1):
                acc += sig1[r] * ww[i, r, k]
            yhat[k] = acc

        for k in range(dim):
            u[k] = -k34 * (zeta[k] - zeta0[i, k]) - uint[i, k]
            du[i, k] = yhat[k] + k2 * k34 * zeta[k] + kappa * live * _sign(zeta[k])
        dk[i] = k2 * l1 * live

        # weight tuning
        w_term[0] = sig1[0]
        for c in range(m2):
            w_term[c + 1] = sig1[c + 1] - d1[c] * s1[c] - d1[c] * z_lin2[c]
        for r in range(m2 + 1):
            for k in range(dim):
                dww[i, r, k] = tune[i, 0] * (k2 * w_term[r] * zeta[k] - l1 * ww[i, r, k])
        for c in range(m2):
            acc = 0.0
            for k in range(dim):
                acc += ww[i, c + 1, k] * zeta[k]
            g1[c] = acc * d1[c]
        for r in range(m1 + 1):
            base = sig2[r] - lin2[r]
            for c in range(m2):
                dzw[i, r, c] = tune[i, 1] * (k2 * base * g1[c] - l1 * zw[i, r, c])
        for c in range(m1):
            acc = 0.0
            for r in range(m2):
                acc += zw[i, c + 1, r] * g1[r]
            g2[c] = acc * d2[c]
        for r in range(n1 + 1):
            for c in range(m1):
                dvw[i, r, c] = tune[i, 2] * (k2 * x[r] * g2[c] - l1 * vw[i, r, c])

        # plant
        for k in range(dim):
            dp[i, k] = v[i, k]
        if plant_kind == PLANT_DOUBLE_INTEGRATOR:
            for k in range(dim):
                dv[i, k] = u[k]
        else:
            am1, am2, r1, r2, grav = arm[i, 0], arm[i, 1], arm[i, 2], arm[i, 3], arm[i, 4]
            q1, q2 = p[i, 0], p[i, 1]
            qd1, qd2 = v[i, 0], v[i, 1]
            c2 = math.cos(q2)
            a = am2 * r1 * r2
            m22 = am2 * r2 * r2
            m12 = m22 + a * c2
            m11 = (am1 + am2) * r1 * r1 + m22 + 2.0 * a * c2
            hh = a * math.sin(q2)
            c12 = math.cos(q1 + q2)
            rhs0 = u[0] - (-hh * qd2 * qd1 - hh * (qd1 + qd2) * qd2) - ((am1 + am2) * r1 * math.cos(q1) + am2 * r2 * c12) * grav
            rhs1 = u[1] - hh * qd1 * qd1 - am2 * r2 * c12 * grav
            if disturbance_on:
                rhs0 -= -0.12 * math.cos(t)
                rhs1 -= 0.1 * math.sin(t)
            det = m11 * m22 - m12 * m12
            dv[i, 0] = (m22 * rhs0 - m12 * rhs1) / det
            dv[i, 1] = (m11 * rhs1 - m12 * rhs0) / det


@njit(cache=True)
def advance(
    t, y, h, n_sub, dims, offs, pinned, offsets, zeta0, zeta0_l1, sc, tune, damping,
    plant_kind, arm, disturbance_on, use_lag, lag_norms, lag_kappa,
):
    """``n_sub`` classical RK4 steps of size ``h``; returns the final state.

    Stops early and returns the last state reached if a non-finite value
    appears; the caller detects this with ``isfinite``.
    """
    n = y.size
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    cur = y.copy()
    for s in range(n_sub):
        ts = t + s * h
        rhs(ts, cur, k1, dims, offs, pinned, offsets, zeta0, zeta0_l1, sc, tune, damping,
            plant_kind, arm, disturbance_on, use_lag, lag_norms, lag_kappa)
        for q in range(n):
            tmp[q] = cur[q] + 0.5 * h * k1[q]
        rhs(ts + 0.5 * h, tmp, k2, dims, offs, pinned, offsets, zeta0, zeta0_l1, sc, tune, damping,
            plant_kind, arm, disturbance_on, use_lag, lag_norms, lag_kappa)
        for q in range(n):
            tmp[q] = cur[q] + 0.5 * h * k2[q]
        rhs(ts + 0.5 * h, tmp, k3, dims, offs, pinned, offsets, zeta0, zeta0_l1, sc, tune, damping,
            plant_kind, arm, disturbance_on, use_lag, lag_norms, lag_kappa)
        for q in range(n):
            tmp[q] = cur[q] + h * k3[q]
        rhs(ts + h, tmp, k4, dims, offs, pinned, offsets, zeta0, zeta0_l1, sc, tune, damping,
            plant_kind, arm, disturbance_on, use_lag, lag_norms, lag_kappa)
        finite = True
        for q in range(n):
            cur[q] = cur[q] + (h / 6.0) * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q])
            if not np.isfinite(cur[q]):
                finite = False
        if not finite:
            return cur
    return cur
