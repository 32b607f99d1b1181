"""Compiled integrands for the generator families.

Every integral in the U-representation reduces to ``log ∫ exp(l(s)) ds`` over
the real line with ``l`` concave: component log-pdf / log-cdf / log-sf terms
at shifted arguments plus a linear term. The general case splits the line at
the mode, maps each half onto [0, 1) and integrates adaptively with a 15-point
Gauss-Kronrod rule.

The likelihood hot path uses the special form
``l(s) = slope*s - Σ_i c_i exp(-a_i s)``. There the trapezoidal rule on a
uniform grid anchored at the mode converges geometrically, and the grid values
follow from a multiplicative recurrence with one ``exp`` per node.
"""

import math

import numpy as np
from numba import njit

GUMBEL = 0
REVERSE_EXPONENTIAL = 1
REVERSE_GUMBEL = 2

PDF = 0
CDF = 1
SF = 2

# integrand cut-off below the peak, in log units (exp(-40) ~ 4e-18)
_LOG_CUT = 40.0
_STEPS_PER_WIDTH = 4.0
_MAX_NODES = 1_000_000
_TRAPEZOID_NODE_BUDGET = 2000.0


@njit(cache=True, error_model="numpy")
def log1mexp(q):
    """log(1 - exp(-q)) for q >= 0."""
    if q <= 0.0:
        return -math.inf
    if q > 1e-3:
        return math.log(-math.expm1(-q))
    return math.log(q) + math.log1p(-0.5 * q + q * q / 6.0)


@njit(cache=True, error_model="numpy")
def _ratio(q):
    # q / expm1(q) and its derivative, for q >= 0
    if q < 1e-6:
        return 1.0 - 0.5 * q, -0.5 + q / 6.0
    if q > 700.0:
        e = math.exp(-q)
        return q * e, (1.0 - q) * e
    em = math.expm1(q)
    return q / em, (em - q * (em + 1.0)) / (em * em)


@njit(cache=True, error_model="numpy")
def term(kind, ttype, z, a, b):
    """Value, first and second derivative in z of one component log term."""
    if kind == GUMBEL:
        w = a * (z - b)
        if -w > 700.0:
            return -math.inf, math.inf, -math.inf
        q = math.exp(-w)
        if ttype == PDF:
            return math.log(a) - w - q, a * (q - 1.0), -a * a * q
        if ttype == CDF:
            return -q, a * q, -a * a * q
        r, dr = _ratio(q)
        return log1mexp(q), -a * r, a * a * q * dr
    if kind == REVERSE_GUMBEL:
        w = a * (z - b)
        if w > 700.0:
            return -math.inf, -math.inf, -math.inf
        p = math.exp(w)
        if ttype == PDF:
            return math.log(a) + w - p, a * (1.0 - p), -a * a * p
        if ttype == SF:
            return -p, -a * p, -a * a * p
        r, dr = _ratio(p)
        return log1mexp(p), a * r, a * a * p * dr
    y = (z + b) / a
    if ttype == PDF:
        if y >= 0.0:
            return -math.inf, 0.0, 0.0
        return y - math.log(a), 1.0 / a, 0.0
    if ttype == CDF:
        if y >= 0.0:
            return 0.0, 0.0, 0.0
        return y, 1.0 / a, 0.0
    if y >= 0.0:
        return -math.inf, -math.inf, 0.0
    em = math.expm1(-y)
    return math.log(-math.expm1(y)), -1.0 / (a * em), -math.exp(-y) / (a * a * em * em)


@njit(cache=True, error_model="numpy")
def term_value(kind, ttype, z, a, b, log_a):
    if kind == GUMBEL:
        w = a * (z - b)
        if -w > 700.0:
            return -math.inf
        q = math.exp(-w)
        if ttype == PDF:
            return log_a - w - q
        if ttype == CDF:
            return -q
        return log1mexp(q)
    if kind == REVERSE_GUMBEL:
        w = a * (z - b)
        if w > 700.0:
            return -math.inf
        p = math.exp(w)
        if ttype == PDF:
            return log_a + w - p
        if ttype == SF:
            return -p
        return log1mexp(p)
    y = (z + b) / a
    if ttype == PDF:
        return y - log_a if y < 0.0 else -math.inf
    if ttype == CDF:
        return y if y < 0.0 else 0.0
    return math.log(-math.expm1(y)) if y < 0.0 else -math.inf


@njit(cache=True, error_model="numpy")
def _ell(s, slope, kinds, types, alphas, betas, shifts):
    v = slope * s
    d1 = slope
    d2 = 0.0
    for k in range(kinds.shape[0]):
        t0, t1, t2 = term(kinds[k], types[k], shifts[k] + s, alphas[k], betas[k])
        v += t0
        d1 += t1
        d2 += t2
    return v, d1, d2


@njit(cache=True, error_model="numpy")
def _ell_value(s, slope, kinds, types, alphas, betas, shifts, log_alphas):
    v = slope * s
    for k in range(kinds.shape[0]):
        v += term_value(kinds[k], types[k], shifts[k] + s, alphas[k], betas[k], log_alphas[k])
    return v


# Gauss-Kronrod 7/15 abscissae and weights on [-1, 1]
_XGK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0,
])
_WGK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])
_GK_RTOL = 1e-8
_GK_MAX_PIECES = 400


@njit(cache=True, error_model="numpy")
def _mapped(t, mode, scale, direction, peak, slope, kinds, types, alphas, betas, shifts, log_alphas):
    # half-line s = mode + direction*scale*t/(1-t), t in [0, 1)
    u = 1.0 - t
    if u <= 0.0:
        return 0.0
    s = mode + direction * scale * t / u
    v = _ell_value(s, slope, kinds, types, alphas, betas, shifts, log_alphas) - peak
    if v < -745.0:
        return 0.0
    return math.exp(v) * scale / (u * u)


@njit(cache=True, error_model="numpy")
def _gk15(a, b, mode, scale, direction, peak, slope, kinds, types, alphas, betas, shifts, log_alphas):
    c = 0.5 * (a + b)
    r = 0.5 * (b - a)
    fc = _mapped(c, mode, scale, direction, peak, slope, kinds, types, alphas, betas, shifts, log_alphas)
    k = fc * _WGK[7]
    g = fc * _WG[3]
    for j in range(7):
        dx = r * _XGK[j]
        f = (_mapped(c - dx, mode, scale, direction, peak, slope, kinds, types, alphas, betas, shifts, log_alphas)
             + _mapped(c + dx, mode, scale, direction, peak, slope, kinds, types, alphas, betas, shifts, log_alphas))
        k += _WGK[j] * f
        if j % 2 == 1:
            g += _WG[j // 2] * f
    return k * r, abs((k - g) * r)


@njit(cache=True, error_model="numpy")
def _adaptive_half(mode, scale, direction, peak, slope, kinds, types, alphas, betas, shifts, log_alphas):
    lo = np.empty(_GK_MAX_PIECES)
    hi = np.empty(_GK_MAX_PIECES)
    val = np.empty(_GK_MAX_PIECES)
    err = np.empty(_GK_MAX_PIECES)
    n = 4
    for i in range(n):
        lo[i] = i / n
        hi[i] = (i + 1) / n
        val[i], err[i] = _gk15(lo[i], hi[i], mode, scale, direction, peak, slope,
                               kinds, types, alphas, betas, shifts, log_alphas)
    while n < _GK_MAX_PIECES - 1:
        total = 0.0
        total_err = 0.0
        worst = 0
        for i in range(n):
            total += val[i]
            total_err += err[i]
            if err[i] > err[worst]:
                worst = i
        if total_err <= _GK_RTOL * total:
            break
        mid = 0.5 * (lo[worst] + hi[worst])
        lo[n] = mid
        hi[n] = hi[worst]
        hi[worst] = mid
        val[worst], err[worst] = _gk15(lo[worst], hi[worst], mode, scale, direction, peak, slope,
                                       kinds, types, alphas, betas, shifts, log_alphas)
        val[n], err[n] = _gk15(lo[n], hi[n], mode, scale, direction, peak, slope,
                               kinds, types, alphas, betas, shifts, log_alphas)
        n += 1
    total = 0.0
    for i in range(n):
        total += val[i]
    return total


@njit(cache=True, error_model="numpy")
def log_integral(slope, kinds, types, alphas, betas, shifts):
    """log ∫ exp(slope*s + Σ_k term_k(shift_k + s)) ds over the real line.

    The log-integrand must be concave with a finite integral. The line is
    split at the mode and each half is mapped onto [0, 1) for adaptive
    Gauss-Kronrod integration.
    """
    lo = 0.0
    hi = 0.0
    _, d, _ = _ell(0.0, slope, kinds, types, alphas, betas, shifts)
    step = 1.0
    if d > 0.0:
        hi = step
        for _ in range(200):
            _, d, _ = _ell(hi, slope, kinds, types, alphas, betas, shifts)
            if d < 0.0:
                break
            lo = hi
            step *= 2.0
            hi = lo + step
    else:
        lo = -step
        for _ in range(200):
            _, d, _ = _ell(lo, slope, kinds, types, alphas, betas, shifts)
            if d > 0.0:
                break
            hi = lo
            step *= 2.0
            lo = hi - step
    # safeguarded Newton on the decreasing derivative
    s = 0.5 * (lo + hi)
    width_prev = math.inf
    for _ in range(400):
        _, d, dd = _ell(s, slope, kinds, types, alphas, betas, shifts)
        if d > 0.0:
            lo = s
        else:
            hi = s
        if hi - lo < 1e-12 * (1.0 + abs(s)):
            break
        # Newton crawls on steep cliffs; bisect whenever the bracket fails to halve
        slow = hi - lo > 0.5 * width_prev
        width_prev = hi - lo
        newton = dd < 0.0 and math.isfinite(d) and math.isfinite(dd) and not slow
        s_new = s - d / dd if newton else math.nan
        if not (s_new > lo and s_new < hi):
            s_new = 0.5 * (lo + hi)
            newton = False
        if newton and abs(s_new - s) < 1e-13 * (1.0 + abs(s)):
            s = s_new
            break
        s = s_new
    peak, _, dd = _ell(s, slope, kinds, types, alphas, betas, shifts)
    if not math.isfinite(peak):
        return -math.inf
    width = 1.0 / math.sqrt(-dd) if dd < 0.0 else 1.0
    log_alphas = np.log(alphas)
    total = 0.0
    for direction in (1.0, -1.0):
        # map scale: distance at which the log-integrand has dropped by one
        near = 0.0
        far = width
        for _ in range(100):
            v = _ell_value(s + direction * far, slope, kinds, types, alphas, betas, shifts, log_alphas)
            if v - peak < -1.0:
                break
            near = far
            far *= 2.0
        for _ in range(20):
            mid = 0.5 * (near + far)
            v = _ell_value(s + direction * mid, slope, kinds, types, alphas, betas, shifts, log_alphas)
            if v - peak < -1.0:
                far = mid
            else:
                near = mid
        total += _adaptive_half(s, 0.5 * (near + far), direction, peak, slope, kinds, types,
                                alphas, betas, shifts, log_alphas)
    return peak + math.log(total)


@njit(cache=True, error_model="numpy")
def log_expsum_integral(slope, logc, rates):
    """log ∫ exp(slope*s - Σ_i exp(logc_i - rates_i*s)) ds, slope < 0 < rates."""
    n = rates.shape[0]
    # the mode solves Σ rates_i c_i exp(-rates_i s) = -slope; starting from the
    # largest single-term root, Newton on the convex log-sum is monotone
    target = math.log(-slope)
    s = -math.inf
    for i in range(n):
        r = (logc[i] + math.log(rates[i]) - target) / rates[i]
        if r > s:
            s = r
    for _ in range(100):
        m = -math.inf
        for i in range(n):
            e = logc[i] + math.log(rates[i]) - rates[i] * s
            if e > m:
                m = e
        num = 0.0
        den = 0.0
        for i in range(n):
            w = math.exp(logc[i] + math.log(rates[i]) - rates[i] * s - m)
            num += w
            den += rates[i] * w
        g = m + math.log(num) - target
        step = g * num / den
        s += step
        if abs(step) < 1e-14 * (1.0 + abs(s)):
            break
    peak = slope * s
    curv = 0.0
    amax = 0.0
    for i in range(n):
        e = math.exp(logc[i] - rates[i] * s)
        peak -= e
        curv += rates[i] * rates[i] * e
        if rates[i] > amax:
            amax = rates[i]
    width = 1.0 / math.sqrt(curv)
    if width * amax > 1.0:
        width = 1.0 / amax
    h = width / _STEPS_PER_WIDTH
    # grid values exp(-rates_i*(s ± k h)) by recurrence
    c0 = np.empty(n)
    up = np.empty(n)
    down = np.empty(n)
    for i in range(n):
        c0[i] = math.exp(logc[i] - rates[i] * s)
        up[i] = math.exp(-rates[i] * h)
        down[i] = math.exp(rates[i] * h)
    total = 1.0
    cur = c0.copy()
    for k in range(1, _MAX_NODES):
        v = slope * (s + k * h)
        for i in range(n):
            cur[i] *= up[i]
            v -= cur[i]
        rel = v - peak
        if rel < -_LOG_CUT:
            break
        total += math.exp(rel)
    cur[:] = c0
    for k in range(1, _MAX_NODES):
        v = slope * (s - k * h)
        for i in range(n):
            cur[i] *= down[i]
            v -= cur[i]
        rel = v - peak
        if rel < -_LOG_CUT:
            break
        total += math.exp(rel)
    return peak + math.log(h * total)


@njit(cache=True, error_model="numpy")
def log_normalizer(kind, alphas, betas):
    """log E[exp(max U)] for independent components of one family."""
    n = alphas.shape[0]
    if kind == GUMBEL:
        # E[e^max U] = Σ_j ∫ e^u f_j(u) Π_{k≠j} F_k(u) du; for Gumbel margins the
        # j-th integrand is a_j e^{a_j b_j} exp((1 - a_j) u - Σ_k e^{a_k b_k - a_k u})
        logc = alphas * betas
        amax = alphas.max()
        kinds = np.full(n, kind, dtype=np.int64)
        shifts = np.zeros(n)
        out = -math.inf
        for j in range(n):
            slope = 1.0 - alphas[j]
            if amax * (_LOG_CUT / -slope) * _STEPS_PER_WIDTH < _TRAPEZOID_NODE_BUDGET:
                lj = math.log(alphas[j]) + logc[j] + log_expsum_integral(slope, logc, alphas)
            else:
                types = np.full(n, CDF, dtype=np.int64)
                types[j] = PDF
                lj = log_integral(1.0, kinds, types, alphas, betas, shifts)
            out = np.logaddexp(out, lj)
        return out
    if kind == REVERSE_GUMBEL:
        kinds = np.full(n, kind, dtype=np.int64)
        shifts = np.zeros(n)
        out = -math.inf
        for j in range(n):
            types = np.full(n, CDF, dtype=np.int64)
            types[j] = PDF
            out = np.logaddexp(out, log_integral(1.0, kinds, types, alphas, betas, shifts))
        return out
    # reverse exponential: ∫_0^∞ (1 - Π_i min(t e^{b_i}, 1)^{1/a_i}) dt in closed form
    knots = np.sort(np.exp(-betas))
    total = 0.0
    prev = 0.0
    for k in range(n):
        hi = knots[k]
        # on (prev, hi) the product is K t^p over components not yet saturated
        p = 0.0
        logk = 0.0
        for i in range(n):
            ci = math.exp(-betas[i])
            if ci >= hi:
                p += 1.0 / alphas[i]
                logk -= math.log(ci) / alphas[i]
        if k == 0:
            total = hi - math.exp(logk + (p + 1.0) * math.log(hi)) / (p + 1.0)
        else:
            total += (hi - prev) - (math.exp(logk + (p + 1.0) * math.log(hi))
                                    - math.exp(logk + (p + 1.0) * math.log(prev))) / (p + 1.0)
        prev = hi
    return math.log(total)


@njit(cache=True, error_model="numpy")
def log_inner(kind, alphas, betas, x):
    """log ∫ f_U(x + s) e^s ds for one point x."""
    n = alphas.shape[0]
    if kind == REVERSE_EXPONENTIAL:
        big = 1.0
        m = -math.inf
        out = 0.0
        for i in range(n):
            big += 1.0 / alphas[i]
            out += (x[i] + betas[i]) / alphas[i] - math.log(alphas[i])
            if x[i] + betas[i] > m:
                m = x[i] + betas[i]
        return out - big * m - math.log(big)
    const = 0.0
    logc = np.empty(n)
    total = 0.0
    for i in range(n):
        const += math.log(alphas[i])
        total += alphas[i]
        if kind == GUMBEL:
            logc[i] = -alphas[i] * (x[i] - betas[i])
        else:
            logc[i] = alphas[i] * (x[i] - betas[i])
        const += logc[i]
    slope = 1.0 - total if kind == GUMBEL else -(1.0 + total)
    return const + log_expsum_integral(slope, logc, alphas)


@njit(cache=True, error_model="numpy")
def log_inner_batch(kind, alphas, betas, xs):
    out = np.empty(xs.shape[0])
    for r in range(xs.shape[0]):
        out[r] = log_inner(kind, alphas, betas, xs[r])
    return out
