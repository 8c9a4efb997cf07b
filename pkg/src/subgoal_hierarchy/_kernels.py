"""Per-episode inner loops for tabular Q-learning and SMDP execution.

The kernels are plain Python over numpy arrays and are compiled with
``numba.njit`` unless ``SUBGOAL_HIERARCHY_NO_NUMBA`` is set to a non-empty,
non-zero value.  Both paths consume the same pre-drawn uniforms, so they
produce bit-identical tables.

Uniform layout per primitive step ``t``: ``u[t, 0]`` exploration draw,
``u[t, 1]`` random-action draw, ``u[t, 2]`` transition draw.
"""

from __future__ import annotations

import os

import numpy as np

_flag = os.environ.get("SUBGOAL_HIERARCHY_NO_NUMBA", "").strip().lower()
USE_NUMBA = _flag in ("", "0", "false", "no")

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None
    USE_NUMBA = False


def _jit(fn):
    if USE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn


@_jit
def _argmax(row):
    best = 0
    for j in range(1, row.shape[0]):
        if row[j] > row[best]:
            best = j
    return best


@_jit
def _sample(cum_row, u):
    k = 0
    last = cum_row.shape[0] - 1
    while k < last and u >= cum_row[k]:
        k += 1
    return k


def _q_episode(q, nxt, cum, rew, term, region, exits, bonus, start,
               alpha, gamma, eps, u, max_steps, out_s, out_a, out_r, learn):
    """One epsilon-greedy Q-learning episode; returns (steps, reached).

    ``reached`` is True when the episode ends on an environment terminal or,
    for option learning, on an exit pair.  Leaving ``region`` other than via
    an exit ends the episode without bootstrapping.
    """
    n_actions = q.shape[1]
    s = start
    out_s[0] = s
    steps = 0
    reached = False
    for t in range(max_steps):
        if u[t, 0] < eps:
            a = int(u[t, 1] * n_actions)
            if a >= n_actions:
                a = n_actions - 1
        else:
            a = _argmax(q[s])
        k = _sample(cum[s, a], u[t, 2])
        s2 = nxt[s, a, k]
        r = rew[s, a, k]
        done = term[s, a, k]
        stop = done
        r_learn = r
        if exits[s, a]:
            r_learn = r + bonus
            stop = True
            done = True
        elif not region[s2]:
            stop = True
        if learn:
            if stop:
                target = r_learn
            else:
                target = r_learn + gamma * q[s2, _argmax(q[s2])]
            q[s, a] += alpha * (target - q[s, a])
        out_a[t] = a
        out_r[t] = r
        out_s[t + 1] = s2
        steps = t + 1
        s = s2
        if stop:
            reached = done
            break
    return steps, reached


def _policy_episode(policy, nxt, cum, rew, term, region, exits, start, u,
                    max_steps, out_s, out_a, out_r):
    """Follow a fixed deterministic policy; same stopping rules as training."""
    s = start
    out_s[0] = s
    steps = 0
    reached = False
    for t in range(max_steps):
        a = policy[s]
        k = _sample(cum[s, a], u[t, 2])
        s2 = nxt[s, a, k]
        out_a[t] = a
        out_r[t] = rew[s, a, k]
        out_s[t + 1] = s2
        steps = t + 1
        done = term[s, a, k]
        if exits[s, a]:
            reached = True
            break
        if done:
            reached = True
            break
        s = s2
        if not region[s2]:
            break
    return steps, reached


@_jit
def _admissible(s, n_prim, opt_init, first, opt_region, covered_only):
    # covered_only: primitives are offered only where no option applies
    n_opt = opt_init.shape[0]
    mask = np.zeros(n_prim + n_opt, dtype=np.bool_)
    any_opt = False
    for o in range(n_opt):
        if opt_init[o, s] or (first and opt_region[o, s]):
            mask[n_prim + o] = True
            any_opt = True
    if not (covered_only and any_opt):
        for j in range(n_prim):
            mask[j] = True
    return mask


@_jit
def _choose_greedy(row, mask, priority, tie_tol):
    best = -1
    for j in range(row.shape[0]):
        if mask[j] and (best < 0 or row[j] > row[best]):
            best = j
    top = best
    for j in range(row.shape[0]):
        if mask[j] and row[j] >= row[best] - tie_tol and priority[j] > priority[top]:
            top = j
    return top


@_jit
def _best_value(row, mask):
    best = -1
    for j in range(row.shape[0]):
        if mask[j] and (best < 0 or row[j] > row[best]):
            best = j
    return row[best]


def _smdp_episode(q, nxt, cum, rew, term, n_prim, opt_policy, opt_region,
                  opt_exits, opt_init, opt_maxlen, priority, tie_tol,
                  covered_only, start,
                  alpha, gamma, eps, u, max_steps, out_s, out_a, out_r,
                  out_dec, out_dec_t, learn):
    """One SMDP Q-learning episode over primitives and options.

    Returns (primitive steps, reached, decisions).  ``out_dec`` receives the
    abstract action chosen at each decision and ``out_dec_t`` the primitive
    step at which it was taken.
    """
    s = start
    out_s[0] = s
    t = 0
    n_dec = 0
    reached = False
    b = 0
    while t < max_steps:
        mask = _admissible(s, n_prim, opt_init, t == 0, opt_region, covered_only)
        if u[t, 0] < eps:
            n_adm = 0
            for j in range(mask.shape[0]):
                if mask[j]:
                    n_adm += 1
            pick = int(u[t, 1] * n_adm)
            if pick >= n_adm:
                pick = n_adm - 1
            c = -1
            for j in range(mask.shape[0]):
                if mask[j]:
                    c += 1
                    if c == pick:
                        b = j
                        break
        else:
            b = _choose_greedy(q[s], mask, priority, tie_tol)
        s0 = s
        out_dec_t[n_dec] = t
        r_acc = 0.0
        disc = 1.0
        done = False
        if b < n_prim:
            k = _sample(cum[s, b], u[t, 2])
            s2 = nxt[s, b, k]
            r = rew[s, b, k]
            done = term[s, b, k]
            out_a[t] = b
            out_r[t] = r
            out_s[t + 1] = s2
            r_acc = r_acc + disc * r
            disc = disc * gamma
            t += 1
            s = s2
        else:
            o = b - n_prim
            length = 0
            while t < max_steps:
                a = opt_policy[o, s]
                k = _sample(cum[s, a], u[t, 2])
                s2 = nxt[s, a, k]
                r = rew[s, a, k]
                done = term[s, a, k]
                out_a[t] = a
                out_r[t] = r
                out_s[t + 1] = s2
                r_acc = r_acc + disc * r
                disc = disc * gamma
                t += 1
                length += 1
                exited = opt_exits[o, s, a]
                s = s2
                if done or exited or not opt_region[o, s2]:
                    break
                if opt_maxlen[o] > 0 and length >= opt_maxlen[o]:
                    break
        out_dec[n_dec] = b
        n_dec += 1
        if learn:
            if done:
                target = r_acc
            else:
                nmask = _admissible(s, n_prim, opt_init, False, opt_region, covered_only)
                target = r_acc + disc * _best_value(q[s], nmask)
            q[s0, b] += alpha * (target - q[s0, b])
        if done:
            reached = True
            break
    return t, reached, n_dec


argmax_row = _argmax
q_episode = _jit(_q_episode)
policy_episode = _jit(_policy_episode)
smdp_episode = _jit(_smdp_episode)
