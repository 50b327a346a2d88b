"""Compiled inner loops.

Each kernel here has a plain numpy counterpart in the public modules; the
test-suite checks that the two agree on identical inputs.
"""

import math

import numba
import numpy as np


@numba.njit(cache=True)
def path_scores(z, s0, drift, vol, lower, upper, floor, g_out, sn_out):
    """Evolve each row of ``z`` and write its performance and terminal price."""
    m, n = z.shape
    for i in range(m):
        s = s0
        acc = 0.0
        for k in range(n - 1):
            s = s * math.exp(drift + vol * z[i, k])
            if s > upper[k]:
                acc += upper[k] - s
            elif s < lower[k]:
                acc += s - lower[k]
        s = s * math.exp(drift + vol * z[i, n - 1])
        if s > upper[n - 1]:
            acc += upper[n - 1] - s
        elif s < floor:
            acc += s - floor
        g_out[i] = acc
        sn_out[i] = s


@numba.njit(cache=True)
def mma_sweep(z, g, sn, noise, unif, spread, threshold, s0, drift, vol,
              lower, upper, floor, accepted):
    """One modified-Metropolis transition for every chain, in place.

    Component proposals ``z + spread * noise`` are kept with probability
    ``min(1, phi(psi) / phi(z))``; the assembled candidate replaces the
    state only if its performance reaches ``threshold``.
    """
    m, n = z.shape
    cand = np.empty(n)
    for i in range(m):
        changed = False
        for k in range(n):
            cur = z[i, k]
            psi = cur + spread * noise[i, k]
            ratio = math.exp(0.5 * (cur * cur - psi * psi))
            if unif[i, k] < ratio:
                cand[k] = psi
                changed = True
            else:
                cand[k] = cur
        if not changed:
            accepted[i] = False
            continue
        s = s0
        acc = 0.0
        for k in range(n - 1):
            s = s * math.exp(drift + vol * cand[k])
            if s > upper[k]:
                acc += upper[k] - s
            elif s < lower[k]:
                acc += s - lower[k]
        s = s * math.exp(drift + vol * cand[n - 1])
        if s > upper[n - 1]:
            acc += upper[n - 1] - s
        elif s < floor:
            acc += s - floor
        if acc >= threshold:
            for k in range(n):
                z[i, k] = cand[k]
            g[i] = acc
            sn[i] = s
            accepted[i] = True
        else:
            accepted[i] = False


@numba.njit(cache=True)
def _upper_factor(a, b, upper, var_h):
    # zero diffusion: an interior segment cannot cross
    if var_h <= 0.0:
        return 1.0
    return 1.0 - math.exp(-2.0 * (upper - a) * (upper - b) / var_h)


@numba.njit(cache=True)
def _lower_factor(a, b, lower, var_h):
    if var_h <= 0.0:
        return 1.0
    return 1.0 - math.exp(-2.0 * (a - lower) * (b - lower) / var_h)


@numba.njit(cache=True)
def _inside(x, lower, upper):
    return lower < x < upper


@numba.njit(cache=True)
def mlmc_level(dw, s0, mu, sigma, h_fine, refine, lower, upper, strike,
               coupled, half_step, local_scale, monitor_stride,
               out_fine, out_coarse, dig_fine, dig_coarse):
    """Fine and coupled coarse Milstein paths with bridge survival weights.

    ``monitor_stride > 0`` switches from bridge weighting to a hard barrier
    check every ``monitor_stride`` fine (or coarse) steps.
    """
    m, nf = dw.shape
    nc = nf // refine
    h_coarse = h_fine * refine
    half = refine // 2
    coarse_stride = monitor_stride // refine
    for i in range(m):
        # fine path
        s = s0
        w_f = 1.0
        for k in range(nf):
            d = dw[i, k]
            s_next = s * (1.0 + mu * h_fine + sigma * d + 0.5 * sigma * sigma * (d * d - h_fine))
            if monitor_stride > 0:
                if (k + 1) % monitor_stride == 0 and not (lower <= s_next <= upper):
                    w_f = 0.0
            elif w_f > 0.0:
                if not (_inside(s, lower, upper) and _inside(s_next, lower, upper)):
                    w_f = 0.0
                else:
                    b = sigma * (s if local_scale else s0)
                    var_h = b * b * h_fine
                    w_f *= _upper_factor(s, s_next, upper, var_h) * _lower_factor(s, s_next, lower, var_h)
            s = s_next
        pay = s - strike
        if pay > 0.0:
            out_fine[i] = pay * w_f
        else:
            out_fine[i] = 0.0
        dig_fine[i] = w_f if s >= strike else 0.0

        if not coupled:
            out_coarse[i] = 0.0
            dig_coarse[i] = 0.0
            continue

        # coarse path driven by summed fine increments
        s = s0
        w_c = 1.0
        for j in range(nc):
            d = 0.0
            d_half = 0.0
            for q in range(refine):
                d += dw[i, j * refine + q]
                if q < half:
                    d_half += dw[i, j * refine + q]
            s_next = s * (1.0 + mu * h_coarse + sigma * d + 0.5 * sigma * sigma * (d * d - h_coarse))
            if monitor_stride > 0:
                if (j + 1) % coarse_stride == 0 and not (lower <= s_next <= upper):
                    w_c = 0.0
            elif w_c > 0.0:
                b = sigma * (s if local_scale else s0)
                s_mid = 0.5 * (s + s_next) + b * (d_half - 0.5 * d)
                if not (_inside(s, lower, upper) and _inside(s_mid, lower, upper)
                        and _inside(s_next, lower, upper)):
                    w_c = 0.0
                else:
                    hh = 0.5 * h_coarse if half_step else h_coarse
                    var_h = b * b * hh
                    w_c *= (_upper_factor(s, s_mid, upper, var_h)
                            * _upper_factor(s_mid, s_next, upper, var_h)
                            * _lower_factor(s, s_mid, lower, var_h)
                            * _lower_factor(s_mid, s_next, lower, var_h))
            s = s_next
        pay = s - strike
        if pay > 0.0:
            out_coarse[i] = pay * w_c
        else:
            out_coarse[i] = 0.0
        dig_coarse[i] = w_c if s >= strike else 0.0


def scores(z, s0, drift, vol, lower, upper, floor):
    z = np.ascontiguousarray(z, dtype=float)
    g = np.empty(z.shape[0])
    sn = np.empty(z.shape[0])
    path_scores(z, float(s0), float(drift), float(vol), lower, upper, float(floor), g, sn)
    return g, sn
