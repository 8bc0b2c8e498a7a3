"""Hot numeric kernels for diagonal-Gaussian mixtures.

Every kernel exists twice: a loop version compiled with numba and a
vectorised numpy version. Both are importable (``*_nb`` / ``*_np``) so they
can be checked against each other; the unsuffixed names dispatch to whichever
backend :mod:`wiseale._accel` selected.

Arrays are float64 throughout. ``mu`` and ``lv`` are ``(M, d)`` means and
log-variances of the mixture components. ``adam_update`` is the fused
optimizer update; it takes contiguous arrays.
"""

import math

import numpy as np

from wiseale._accel import USE_NUMBA, njit

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# numpy implementations


def pairwise_log_overlap_np(mu, lv):
    var = np.exp(lv)
    s = var[:, None, :] + var[None, :, :]
    d = mu[:, None, :] - mu[None, :, :]
    return np.sum(-0.5 * (LOG_2PI + np.log(s)) - 0.5 * d * d / s, axis=2)


def kl_ub_value_grad_np(mu, lv):
    m = mu.shape[0]
    var = np.exp(lv)
    s = var[:, None, :] + var[None, :, :]
    d = mu[:, None, :] - mu[None, :, :]
    logo = np.sum(-0.5 * (LOG_2PI + np.log(s)) - 0.5 * d * d / s, axis=2)
    top = logo.max(axis=1, keepdims=True)
    w = np.exp(logo - top)
    tot = w.sum(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(tot[:, 0])
    w /= tot
    value = np.sum(lse - math.log(m)) / m + np.sum(var + mu * mu + LOG_2PI) / (2.0 * m)

    h = (w + w.T)[:, :, None] / m
    inv_s = 1.0 / s
    dmu = -np.sum(h * d * inv_s, axis=1) + mu / m
    dvar = np.sum(h * (-0.5 * inv_s + 0.5 * d * d * inv_s * inv_s), axis=1) + 0.5 / m
    return value, dmu, dvar * var


def mixture_log_density_np(z, mu, lv, chunk=8192):
    m = mu.shape[0]
    inv_var = np.exp(-lv)
    norm = -0.5 * np.sum(LOG_2PI + lv, axis=1)
    out = np.empty(z.shape[0])
    for start in range(0, z.shape[0], chunk):
        zc = z[start:start + chunk]
        diff = zc[:, None, :] - mu[None, :, :]
        comp = norm[None, :] - 0.5 * np.sum(diff * diff * inv_var[None, :, :], axis=2)
        top = comp.max(axis=1)
        out[start:start + chunk] = top + np.log(np.sum(np.exp(comp - top[:, None]), axis=1))
    return out - math.log(m)


# ---------------------------------------------------------------------------
# numba implementations


@njit
def _pairwise_from_var_nb(mu, var):
    m, dz = mu.shape
    out = np.empty((m, m))
    for i in range(m):
        for j in range(i, m):
            acc = 0.0
            for k in range(dz):
                s = var[i, k] + var[j, k]
                d = mu[i, k] - mu[j, k]
                acc += -0.5 * (LOG_2PI + math.log(s)) - 0.5 * d * d / s
            out[i, j] = acc
            out[j, i] = acc
    return out


@njit
def pairwise_log_overlap_nb(mu, lv):
    return _pairwise_from_var_nb(mu, np.exp(lv))


@njit
def kl_ub_value_grad_nb(mu, lv):
    m, dz = mu.shape
    var = np.exp(lv)
    logo = _pairwise_from_var_nb(mu, var)
    w = np.empty((m, m))
    value = 0.0
    for i in range(m):
        top = logo[i, 0]
        for j in range(1, m):
            if logo[i, j] > top:
                top = logo[i, j]
        tot = 0.0
        for j in range(m):
            w[i, j] = math.exp(logo[i, j] - top)
            tot += w[i, j]
        for j in range(m):
            w[i, j] /= tot
        value += top + math.log(tot) - math.log(m)
    value /= m
    quad = 0.0
    for i in range(m):
        for k in range(dz):
            quad += var[i, k] + mu[i, k] * mu[i, k] + LOG_2PI
    value += quad / (2.0 * m)

    dmu = np.empty((m, dz))
    dlv = np.empty((m, dz))
    for i in range(m):
        for k in range(dz):
            gm = 0.0
            gv = 0.0
            for j in range(m):
                h = (w[i, j] + w[j, i]) / m
                inv_s = 1.0 / (var[i, k] + var[j, k])
                d = mu[i, k] - mu[j, k]
                gm -= h * d * inv_s
                gv += h * (-0.5 * inv_s + 0.5 * d * d * inv_s * inv_s)
            dmu[i, k] = gm + mu[i, k] / m
            dlv[i, k] = (gv + 0.5 / m) * var[i, k]
    return value, dmu, dlv


@njit
def mixture_log_density_nb(z, mu, lv):
    m, dz = mu.shape
    n = z.shape[0]
    inv_var = np.exp(-lv)
    norm = np.empty(m)
    for i in range(m):
        acc = 0.0
        for k in range(dz):
            acc += LOG_2PI + lv[i, k]
        norm[i] = -0.5 * acc
    comp = np.empty(m)
    out = np.empty(n)
    log_m = math.log(m)
    for p in range(n):
        top = -np.inf
        for i in range(m):
            acc = 0.0
            for k in range(dz):
                d = z[p, k] - mu[i, k]
                acc += d * d * inv_var[i, k]
            comp[i] = norm[i] - 0.5 * acc
            if comp[i] > top:
                top = comp[i]
        tot = 0.0
        for i in range(m):
            tot += math.exp(comp[i] - top)
        out[p] = top + math.log(tot) - log_m
    return out


def adam_update_np(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    m_new = beta1 * m + (1.0 - beta1) * g
    v_new = beta2 * v + (1.0 - beta2) * (g * g)
    p_new = p - lr * (m_new / bc1) / (np.sqrt(v_new / bc2) + eps)
    return p_new, m_new, v_new


@njit
def adam_update_nb(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    p_new = np.empty_like(p)
    m_new = np.empty_like(m)
    v_new = np.empty_like(v)
    pf, gf, mf, vf = p.ravel(), g.ravel(), m.ravel(), v.ravel()
    pn, mn, vn = p_new.ravel(), m_new.ravel(), v_new.ravel()
    for i in range(pf.size):
        mi = beta1 * mf[i] + (1.0 - beta1) * gf[i]
        vi = beta2 * vf[i] + (1.0 - beta2) * (gf[i] * gf[i])
        pn[i] = pf[i] - lr * (mi / bc1) / (math.sqrt(vi / bc2) + eps)
        mn[i] = mi
        vn[i] = vi
    return p_new, m_new, v_new


if USE_NUMBA:
    pairwise_log_overlap = pairwise_log_overlap_nb
    kl_ub_value_grad = kl_ub_value_grad_nb
    mixture_log_density = mixture_log_density_nb
    adam_update = adam_update_nb
else:
    pairwise_log_overlap = pairwise_log_overlap_np
    kl_ub_value_grad = kl_ub_value_grad_np
    mixture_log_density = mixture_log_density_np
    adam_update = adam_update_np
