"""Compiled inner loop for the three-timescale learner.

One njit kernel advances the full iterate in place for a block of steps.
The Cholesky factorization is hand-rolled so a non-positive pivot (or a
pivot-ratio condition estimate beyond 1e14) can be reported with the exact
step index instead of aborting the process from compiled code.

Schedule roles are passed as parallel arrays indexed by:
    0 theta step, 1 critic step, 2 average-cost step, 3 Lagrange step,
    4 Fisher step, 5 constraint-average step.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

KIND_POWER = 0
KIND_POWER_LOG = 1

ROLE_THETA = 0
ROLE_CRITIC = 1
ROLE_COST = 2
ROLE_LAGRANGE = 3
ROLE_FISHER = 4
ROLE_CONSTRAINT = 5

STATUS_OK = -1

COND_LIMIT = 1e14


@njit(cache=True, inline="always")
def _sched(kind, coef, exp, n):
    val = coef / (1.0 + n) ** exp
    if kind == KIND_POWER_LOG:
        val *= math.sqrt(math.log(1.0 + n))
    return val


@njit(cache=True)
def _cholesky(G, L):
    """Lower-triangular factor of G into L. Returns (ok, pivot_ratio_sq)."""
    d = G.shape[0]
    for i in range(d):
        for j in range(i + 1):
            s = G[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if s <= 0.0:
                    return False, math.inf
                L[i, i] = math.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    lo = L[0, 0]
    hi = L[0, 0]
    for i in range(1, d):
        if L[i, i] < lo:
            lo = L[i, i]
        if L[i, i] > hi:
            hi = L[i, i]
    return True, (hi / lo) ** 2


@njit(cache=True)
def _chol_solve(L, rhs, out):
    """Solve (L L^T) out = rhs."""
    d = L.shape[0]
    for i in range(d):
        s = rhs[i]
        for k in range(i):
            s -= L[i, k] * out[k]
        out[i] = s / L[i, i]
    for i in range(d - 1, -1, -1):
        s = out[i]
        for k in range(i + 1, d):
            s -= L[k, i] * out[k]
        out[i] = s / L[i, i]


@njit(cache=True)
def advance(
    rng,
    n_steps,
    start_n,
    theta,
    v,
    L_avg,  # length-1 array
    U,
    gamma,
    G,
    Ginv,
    state,  # length-1 int64 array: current MDP state
    trans_cum,  # (S, A, S) cumulative transition rows, last entry 1.0
    cost,  # (S, A)
    ccosts,  # (N, S, A)
    alphas,  # (N,)
    fmat,  # (S, d1)
    x_sa,  # (S, A, d)
    sched_kind,  # (6,) int64
    sched_coef,  # (6,) float64
    sched_exp,  # (6,) float64
    natural,
    freeze_theta,
    use_sherman,
    u_v,
    cap_m,
    fisher_cond_limit,
    cost_noise,
    counters,  # (3,) int64: v norm, gamma range, G symmetry violations
):
    """Run n_steps updates in place. Returns STATUS_OK or the failing step."""
    S = trans_cum.shape[0]
    A = trans_cum.shape[1]
    N = alphas.shape[0]
    d = theta.shape[0]
    d1 = v.shape[0]

    w = np.empty(A)
    psi = np.empty(d)
    direction = np.empty(d)
    chol = np.zeros((d, d))
    h_obs = np.empty(N)
    U_pre = np.empty(N)

    for i in range(n_steps):
        n = start_n + i
        s = state[0]

        # SPD certificate for G(n); the factor also feeds the natural step
        ok, cond_sq = _cholesky(G, chol)
        if (not ok) or cond_sq > fisher_cond_limit:
            return n

        # action probabilities (overflow-safe softmax) and action draw
        mx = -1e308
        for a in range(A):
            sc = 0.0
            for k in range(d):
                sc += x_sa[s, a, k] * theta[k]
            w[a] = sc
            if sc > mx:
                mx = sc
        tot = 0.0
        for a in range(A):
            w[a] = math.exp(w[a] - mx)
            tot += w[a]
        u = rng.random() * tot
        act = A - 1
        acc = 0.0
        for a in range(A):
            acc += w[a]
            if u < acc:
                act = a
                break

        # next state draw from the cumulative row
        u2 = rng.random()
        s_next = np.searchsorted(trans_cum[s, act], u2)
        if s_next >= S:
            s_next = S - 1

        # observed costs (optionally with bounded uniform noise)
        q = cost[s, act]
        for k in range(N):
            h_obs[k] = ccosts[k, s, act]
        if cost_noise > 0.0:
            q += (2.0 * rng.random() - 1.0) * cost_noise
            for k in range(N):
                h_obs[k] += (2.0 * rng.random() - 1.0) * cost_noise

        relaxed = q
        for k in range(N):
            relaxed += gamma[k] * (h_obs[k] - alphas[k])

        # average-cost estimate; the TD error uses the pre-update value
        L_pre = L_avg[0]
        d_n = _sched(sched_kind[ROLE_COST], sched_coef[ROLE_COST], sched_exp[ROLE_COST], n)
        L_avg[0] = L_pre + d_n * (relaxed - L_pre)

        delta = relaxed - L_pre
        for k in range(d1):
            delta += v[k] * (fmat[s_next, k] - fmat[s, k])

        # critic update with ball projection
        b_n = _sched(sched_kind[ROLE_CRITIC], sched_coef[ROLE_CRITIC], sched_exp[ROLE_CRITIC], n)
        vnorm_sq = 0.0
        for k in range(d1):
            v[k] += b_n * delta * fmat[s, k]
            vnorm_sq += v[k] * v[k]
        if vnorm_sq > u_v * u_v:
            scalefac = u_v / math.sqrt(vnorm_sq)
            for k in range(d1):
                v[k] *= scalefac
            vnorm_sq = u_v * u_v
        if vnorm_sq > u_v * u_v * (1.0 + 1e-12):
            counters[0] += 1

        # score vector at the sampled pair
        for k in range(d):
            m = 0.0
            for a in range(A):
                m += w[a] * x_sa[s, a, k]
            psi[k] = x_sa[s, act, k] - m / tot

        # actor update: descend the Lagrangian along the (preconditioned) score;
        # the stationary mean of delta*psi is the policy gradient of L
        if not freeze_theta:
            a_n = _sched(sched_kind[ROLE_THETA], sched_coef[ROLE_THETA], sched_exp[ROLE_THETA], n)
            if a_n != 0.0:
                if natural:
                    if use_sherman:
                        for r in range(d):
                            acc2 = 0.0
                            for c in range(d):
                                acc2 += Ginv[r, c] * psi[c]
                            direction[r] = delta * acc2
                    else:
                        for r in range(d):
                            direction[r] = delta * psi[r]
                        _chol_solve(chol, direction, direction)
                else:
                    for r in range(d):
                        direction[r] = delta * psi[r]
                for r in range(d):
                    theta[r] -= a_n * direction[r]

        # constraint-cost averages; multiplier update uses the pre-update value
        u_n = _sched(
            sched_kind[ROLE_CONSTRAINT], sched_coef[ROLE_CONSTRAINT], sched_exp[ROLE_CONSTRAINT], n
        )
        c_n = _sched(
            sched_kind[ROLE_LAGRANGE], sched_coef[ROLE_LAGRANGE], sched_exp[ROLE_LAGRANGE], n
        )
        for k in range(N):
            U_pre[k] = U[k]
            U[k] += u_n * (h_obs[k] - U[k])
            g = gamma[k] + c_n * (U_pre[k] - alphas[k])
            if g < 0.0:
                g = 0.0
            elif g > cap_m:
                g = cap_m
            gamma[k] = g
            if gamma[k] < 0.0 or gamma[k] > cap_m:
                counters[1] += 1

        # Fisher estimate: convex combination with the score outer product
        f_n = _sched(sched_kind[ROLE_FISHER], sched_coef[ROLE_FISHER], sched_exp[ROLE_FISHER], n)
        if f_n != 0.0:
            one_m = 1.0 - f_n
            for r in range(d):
                for c in range(d):
                    G[r, c] = one_m * G[r, c] + f_n * psi[r] * psi[c]
            if natural and use_sherman:
                # Sherman-Morrison on (1-f)G + f psi psi^T
                denom = 0.0
                for r in range(d):
                    acc3 = 0.0
                    for c in range(d):
                        acc3 += Ginv[r, c] * psi[c]
                    direction[r] = acc3  # reuse as Ginv psi
                    denom += psi[r] * acc3
                scale = f_n / (one_m * (one_m + f_n * denom))
                for r in range(d):
                    for c in range(d):
                        Ginv[r, c] = Ginv[r, c] / one_m - scale * direction[r] * direction[c]

        # symmetry audit (exact by construction, counted if float drift appears)
        sym_bad = False
        for r in range(d):
            for c in range(r):
                if abs(G[r, c] - G[c, r]) > 1e-12:
                    sym_bad = True
        if sym_bad:
            counters[2] += 1

        state[0] = s_next

    return STATUS_OK
