"""Brute-force reference computations.

Everything here walks atoms with plain Python loops and dictionaries and
never calls the library's grouping or projection code, so agreement with
the library is a genuine cross-check.
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict

import numpy as np
from scipy.optimize import brentq


def cells(labels_t) -> dict:
    out = defaultdict(list)
    for i, c in enumerate(labels_t):
        out[int(c)].append(i)
    return out


def cond_exp(weights, labels_t, x) -> np.ndarray:
    out = np.empty(len(weights))
    for members in cells(labels_t).values():
        m = sum(weights[i] for i in members)
        v = sum(weights[i] * x[i] for i in members) / m
        for i in members:
            out[i] = v
    return out


def azema(space, theta) -> np.ndarray:
    """``S_t = Q(theta > t | F_t)`` by counting atoms."""
    T = space.horizon
    w = space.weights
    S = np.empty((T + 1, space.n))
    for t in range(T + 1):
        alive = [1.0 if theta[i] > t else 0.0 for i in range(space.n)]
        S[t] = cond_exp(w, space.F[t], alive)
    return S


def doob(space, X, labels="F"):
    """Martingale and predictable parts by explicit summation."""
    lab = space.F if labels == "F" else space.G
    T = space.horizon
    A = np.zeros_like(X)
    for t in range(1, T + 1):
        A[t] = A[t - 1] + cond_exp(space.weights, lab[t - 1], X[t] - X[t - 1])
    return X - X[0] - A, A


def hazard_by_counting(space, theta, t) -> np.ndarray:
    """``Q(theta = t | theta >= t, G_{t-1})`` per atom, 0 where nobody survives."""
    out = np.zeros(space.n)
    for members in cells(space.G[t - 1]).values():
        surv = sum(space.weights[i] for i in members if theta[i] >= t)
        hit = sum(space.weights[i] for i in members if theta[i] == t)
        for i in members:
            out[i] = hit / surv if surv > 0 else 0.0
    return out


def bsde_full(space, theta, T, g, G, x):
    """Backward induction on ``G`` cells with a root finder per node.

    ``g(t, z, x)`` scalar driver; ``G`` and ``x`` arrays ``(T_space + 1, n)``.
    Returns ``Z`` on ``[0, T]`` stopped before ``theta``.
    """
    w = space.weights
    Z = np.zeros((T + 1, space.n))
    for t in range(T, 0, -1):
        dv = hazard_by_counting(space, theta, t)
        for members in cells(space.G[t - 1]).values():
            alive = [i for i in members if theta[i] >= t]
            if not alive:
                continue
            surv = [i for i in members if theta[i] > t]
            mass = sum(w[i] for i in surv)
            m = sum(w[i] * Z[t, i] for i in surv) / mass if mass > 0 else 0.0
            i0 = alive[0]
            Gv, xv, h = G[t, i0], x[t, i0], dv[i0]

            def f(z):
                return z * (1 + h) - m - Gv * h - g(t, z, xv)

            lo, hi = -1e3, 1e3
            z = brentq(f, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
            for i in alive:
                Z[t - 1, i] = z
    # stopped before theta: after default keep the last pre-default value
    for i in range(space.n):
        if math.isfinite(theta[i]) and theta[i] <= T:
            k = int(theta[i])
            Z[k:, i] = Z[max(k - 1, 0), i]
    return Z


def cox_path_sum(space, theta, T, rate, c) -> float:
    """``Z_0`` for ``g(z) = -rate z`` and constant recovery ``c`` on a Cox tree.

    The step equation is linear with ``F``-predictable coefficients, so
    ``Z_0 = E[sum_t c dv_t prod_{s <= t} (1 + dv_s + rate)^{-1}]`` over
    ``F`` paths; hazards are read off atom counts.
    """
    w = space.weights
    total = 0.0
    # group atoms by their terminal F cell (the factor path)
    for members in cells(space.F[T]).values():
        pw = sum(w[i] for i in members)
        acc, disc = 0.0, 1.0
        for t in range(1, T + 1):
            surv = sum(w[i] for i in members if theta[i] >= t)
            hit = sum(w[i] for i in members if theta[i] == t)
            dv = hit / surv
            disc /= 1.0 + dv + rate
            acc += c * dv * disc
        total += pw * acc
    return total


def f_stopping_times(space, limit: int = 200000):
    """Every ``F`` stopping time with values in ``{0..T, inf}``.

    Built cell by cell: at each ``t`` every unstopped ``F_t`` cell either
    stops now or carries on.
    """
    T = space.horizon
    out = []

    def walk(t, value):
        if len(out) > limit:
            raise RuntimeError("search space too large")
        if t > T:
            out.append(value.copy())
            return
        open_cells = [m for m in cells(space.F[t]).values() if math.isinf(value[m[0]])]
        for picks in itertools.product((False, True), repeat=len(open_cells)):
            nxt = value.copy()
            for chosen, members in zip(picks, open_cells):
                if chosen:
                    nxt[members] = t
            walk(t + 1, nxt)

    walk(0, np.full(space.n, math.inf))
    return out


def f_sets(space, t):
    """Every ``F_t``-measurable event as a boolean mask."""
    cl = list(cells(space.F[t]).values())
    for picks in itertools.product((False, True), repeat=len(cl)):
        mask = np.zeros(space.n, bool)
        for chosen, members in zip(picks, cl):
            if chosen:
                mask[members] = True
        yield mask
