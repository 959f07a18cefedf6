"""Compiled dilated-convolution loops (channel-first layout).

For input ``x`` of shape (B, C_in, F, T) the output element (f, t) reads
``x[f + cf - kf*df, t + st - kt*dt]`` for every tap, where ``cf`` centres the
frequency support and ``st`` is 0 (causal) or the time span (valid).  Reads
outside the input are zeros and are skipped, never materialised.

Two interchangeable implementations:

* ``direct_*``: plain tap loops, used for sparse time kernels and valid layers.
* ``toeplitz_*``: causal only.  The time taps of one (input channel, frequency
  tap) pair form a banded (T, C_out*T) matrix and each example's rows go
  through one BLAS product.  Entries above the band are exact zeros, so future
  samples contribute nothing.

Both keep examples separate and accumulate in a fixed order, so outputs do
not depend on batch composition and weight gradients sum examples
sequentially.  ``fastmath`` stays off.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _span(shift, n_in, n_out):
    # output positions o with 0 <= o + shift < n_in, clipped to [0, n_out)
    return max(0, -shift), min(n_out, n_in - shift)


@njit(cache=True)
def direct_forward(x, w, b, df, dt, cf, st, n_kt, n_to):
    nb, nci, nf, nt = x.shape
    nco, _, kf_len, _ = w.shape
    out = np.empty((nb, nco, nf, n_to))
    for n in range(nb):
        for o in range(nco):
            out[n, o, :, :] = b[o]
            for c in range(nci):
                for kf in range(kf_len):
                    sf = cf - kf * df
                    f_lo, f_hi = _span(sf, nf, nf)
                    for kt in range(n_kt):
                        s_t = st - kt * dt
                        t_lo, t_hi = _span(s_t, nt, n_to)
                        if t_lo >= t_hi or f_lo >= f_hi:
                            continue
                        wv = w[o, c, kf, kt]
                        for f in range(f_lo, f_hi):
                            for t in range(t_lo, t_hi):
                                out[n, o, f, t] += wv * x[n, c, f + sf, t + s_t]
    return out


@njit(cache=True)
def direct_backward(gp, x, w, df, dt, cf, st, n_kt, need_gx):
    nb, nci, nf, nt = x.shape
    nco, _, kf_len, _ = w.shape
    n_to = gp.shape[3]
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    gb = np.zeros(nco)
    acc = np.empty(n_to)
    for n in range(nb):
        for o in range(nco):
            s = 0.0
            for f in range(nf):
                for t in range(n_to):
                    s += gp[n, o, f, t]
            gb[o] += s
            for c in range(nci):
                for kf in range(kf_len):
                    sf = cf - kf * df
                    f_lo, f_hi = _span(sf, nf, nf)
                    for kt in range(n_kt):
                        s_t = st - kt * dt
                        t_lo, t_hi = _span(s_t, nt, n_to)
                        if t_lo >= t_hi or f_lo >= f_hi:
                            continue
                        wv = w[o, c, kf, kt]
                        acc[t_lo:t_hi] = 0.0
                        for f in range(f_lo, f_hi):
                            for t in range(t_lo, t_hi):
                                acc[t] += gp[n, o, f, t] * x[n, c, f + sf, t + s_t]
                        if need_gx:
                            for f in range(f_lo, f_hi):
                                for t in range(t_lo, t_hi):
                                    gx[n, c, f + sf, t + s_t] += gp[n, o, f, t] * wv
                        s = 0.0
                        for t in range(t_lo, t_hi):
                            s += acc[t]
                        gw[o, c, kf, kt] += s
    return gx, gw, gb


@njit(cache=True)
def _band_matrices(w, dt, n_kt, nt):
    # a[c, kf, t_in, o*nt + t_out] = w[o, c, kf, kt] where t_out - t_in = kt*dt
    nco, nci, kf_len, _ = w.shape
    a = np.zeros((nci, kf_len, nt, nco * nt))
    for c in range(nci):
        for kf in range(kf_len):
            for o in range(nco):
                for kt in range(n_kt):
                    for t in range(kt * dt, nt):
                        a[c, kf, t - kt * dt, o * nt + t] = w[o, c, kf, kt]
    return a


@njit(cache=True)
def toeplitz_forward(x, w, b, df, dt, cf, n_kt):
    nb, nci, nf, nt = x.shape
    nco, _, kf_len, _ = w.shape
    a = _band_matrices(w, dt, n_kt, nt)
    out = np.empty((nb, nco, nf, nt))
    acc = np.empty((nf, nco * nt))
    for n in range(nb):
        for o in range(nco):
            acc[:, o * nt:(o + 1) * nt] = b[o]
        for c in range(nci):
            for kf in range(kf_len):
                sf = cf - kf * df
                lo, hi = _span(sf, nf, nf)
                if lo < hi:
                    acc[lo:hi] += np.dot(x[n, c, lo + sf:hi + sf], a[c, kf])
        for o in range(nco):
            out[n, o] = acc[:, o * nt:(o + 1) * nt]
    return out


@njit(cache=True)
def toeplitz_backward(gp, x, w, df, dt, cf, n_kt, need_gx):
    nb, nci, nf, nt = x.shape
    nco, _, kf_len, _ = w.shape
    a = _band_matrices(w, dt, n_kt, nt)
    gx = np.zeros_like(x)
    gw = np.zeros_like(w)
    gb = np.zeros(nco)
    ga = np.zeros_like(a)
    g = np.empty((nf, nco * nt))
    for n in range(nb):
        for o in range(nco):
            s = 0.0
            for f in range(nf):
                for t in range(nt):
                    v = gp[n, o, f, t]
                    g[f, o * nt + t] = v
                    s += v
            gb[o] += s
        for c in range(nci):
            for kf in range(kf_len):
                sf = cf - kf * df
                lo, hi = _span(sf, nf, nf)
                if lo >= hi:
                    continue
                rows = x[n, c, lo + sf:hi + sf]
                ga[c, kf] += np.dot(rows.T, g[lo:hi])
                if need_gx:
                    gx[n, c, lo + sf:hi + sf] += np.dot(g[lo:hi], a[c, kf].T)
    # collect each weight from its diagonal of the banded gradient
    for o in range(nco):
        for c in range(nci):
            for kf in range(kf_len):
                for kt in range(n_kt):
                    s = 0.0
                    for t in range(kt * dt, nt):
                        s += ga[c, kf, t - kt * dt, o * nt + t]
                    gw[o, c, kf, kt] = s
    return gx, gw, gb
