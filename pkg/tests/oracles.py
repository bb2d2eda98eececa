"""Independent brute-force oracles shared by the unit and acceptance tests.

Everything here is deliberately naive (explicit loops, O(n^2) transforms) so
it stays independent of the vectorized implementations it checks.
"""

import numpy as np

from img2wav import tensor as T


def matmul_oracle(x, w, b):
    """Triple-loop affine layer."""
    n, k = x.shape
    k2, m = w.shape
    out = np.zeros((n, m), dtype=x.dtype)
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += x[i, t] * w[t, j]
            out[i, j] = acc + b[j]
    return out


def conv2d_oracle(x, w, b, stride=1, dilation=1):
    """Six-nested-loop dilated 2D cross-correlation with same-style padding."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ph = dilation * (kh - 1) // 2
    pw = dilation * (kw - 1) // 2
    ho = (h + 2 * ph - (dilation * (kh - 1) + 1)) // stride + 1
    wo = (wd + 2 * pw - (dilation * (kw - 1) + 1)) // stride + 1
    out = np.zeros((n, o, ho, wo), dtype=x.dtype)
    for bi in range(n):
        for oc in range(o):
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0
                    for ic in range(c):
                        for ky in range(kh):
                            for kx in range(kw):
                                iy = oy * stride + ky * dilation - ph
                                ix = ox * stride + kx * dilation - pw
                                if 0 <= iy < h and 0 <= ix < wd:
                                    acc += x[bi, ic, iy, ix] * w[oc, ic, ky, kx]
                    out[bi, oc, oy, ox] = acc + b[oc]
    return out


def conv1d_oracle(x, w, b, dilation=1):
    """Nested-loop dilated 1D cross-correlation, stride 1, same padding."""
    n, c, ln = x.shape
    o, _, k = w.shape
    pad = dilation * (k - 1) // 2
    out = np.zeros((n, o, ln), dtype=x.dtype)
    for bi in range(n):
        for oc in range(o):
            for p in range(ln):
                acc = 0.0
                for ic in range(c):
                    for kt in range(k):
                        ip = p + kt * dilation - pad
                        if 0 <= ip < ln:
                            acc += x[bi, ic, ip] * w[oc, ic, kt]
                out[bi, oc, p] = acc + b[oc]
    return out


def global_avg_pool_oracle(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c), dtype=x.dtype)
    for bi in range(n):
        for ci in range(c):
            acc = 0.0
            for iy in range(h):
                for ix in range(w):
                    acc += x[bi, ci, iy, ix]
            out[bi, ci] = acc / (h * w)
    return out


def dft_magnitude_oracle(frame):
    """Direct O(n^2) one-sided DFT magnitude of one (already windowed) frame."""
    n = len(frame)
    bins = n // 2 + 1
    mag = np.zeros(bins)
    for k in range(bins):
        re = 0.0
        im = 0.0
        for t in range(n):
            ang = -2.0 * np.pi * k * t / n
            re += frame[t] * np.cos(ang)
            im += frame[t] * np.sin(ang)
        mag[k] = np.hypot(re, im)
    return mag


def corr2d_oracle(a, b):
    """Double-loop two-dimensional Pearson correlation."""
    m, n = a.shape
    ma = a.mean()
    mb = b.mean()
    num = 0.0
    da = 0.0
    db = 0.0
    for i in range(m):
        for j in range(n):
            num += (a[i, j] - ma) * (b[i, j] - mb)
            da += (a[i, j] - ma) ** 2
            db += (b[i, j] - mb) ** 2
    return num / np.sqrt(da * db)


def stoi_oracle(x, y, fs=10_000):
    """Loop-by-loop transcription of the published short-time objective
    intelligibility procedure, written independently of the vectorized
    implementation (bands, segments, and frames all handled one at a time).

    Expects 10 kHz input so no resampling is involved.
    """
    assert fs == 10_000, "oracle fixture signals must already be at 10 kHz"
    frame, hop, nfft, n_bands, min_freq, seg_len = 256, 128, 512, 15, 150.0, 30
    w = np.hanning(frame + 2)[1:-1]

    # silent-frame removal driven by the reference signal
    starts = list(range(0, len(x) - frame + 1, hop))
    energies = []
    for s in starts:
        fr = x[s : s + frame] * w
        energies.append(20.0 * np.log10(np.sqrt(np.sum(fr * fr)) + np.finfo(float).eps))
    keep = [s for s, e in zip(starts, energies) if e > max(energies) - 40.0]
    n_out = (len(keep) - 1) * hop + frame
    xs = np.zeros(n_out)
    ys = np.zeros(n_out)
    for i, s in enumerate(keep):
        xs[i * hop : i * hop + frame] += x[s : s + frame] * w
        ys[i * hop : i * hop + frame] += y[s : s + frame] * w

    # one-third-octave band edges mapped to DFT bins
    f = np.linspace(0.0, fs / 2.0, nfft // 2 + 1)
    band_bins = []
    for k in range(n_bands):
        cf = min_freq * 2.0 ** (k / 3.0)
        il = int(np.argmin(np.abs(f - cf * 2.0 ** (-1.0 / 6.0))))
        ih = int(np.argmin(np.abs(f - cf * 2.0 ** (1.0 / 6.0))))
        band_bins.append(range(il, ih))

    def envelopes(sig):
        rows = []
        for s in range(0, len(sig) - frame + 1, hop):
            spec = np.fft.rfft(sig[s : s + frame] * w, n=nfft)
            rows.append([np.sqrt(sum(abs(spec[b]) ** 2 for b in bins)) for bins in band_bins])
        return np.array(rows)

    ex = envelopes(xs)
    ey = envelopes(ys)
    clip_gain = 1.0 + 10.0 ** (15.0 / 20.0)

    values = []
    for m in range(seg_len, ex.shape[0] + 1):
        for j in range(n_bands):
            xr = ex[m - seg_len : m, j]
            yr = ey[m - seg_len : m, j]
            ny = np.sqrt(np.sum(yr * yr))
            alpha = np.sqrt(np.sum(xr * xr)) / ny if ny > 0 else 0.0
            yc = np.minimum(yr * alpha, xr * clip_gain)
            xd = xr - xr.mean()
            yd = yc - yc.mean()
            sx = np.sqrt(np.sum(xd * xd))
            sy = np.sqrt(np.sum(yd * yd))
            if sx > 0 and sy > 0:
                values.append(np.sum(xd * yd) / (sx * sy))
    return float(np.clip(np.mean(values), 0.0, 1.0))


def fd_gradcheck(build_loss, leaves, rng, n_samples=100, step=1e-3, rtol=1e-4):
    """Check analytic gradients of ``leaves`` against central finite differences.

    ``build_loss`` maps the current leaf tensors to a scalar Tensor. Gradients
    are compared on up to ``n_samples`` randomly chosen entries per leaf with
    relative error |a - n| / max(|a|, |n|, 1) < rtol.

    Returns the worst relative error seen.
    """
    loss = build_loss()
    T.backward(loss)
    analytic_grads = []
    for leaf in leaves:
        assert leaf.grad is not None, f"no gradient reached {leaf.op!r}"
        analytic_grads.append(leaf.grad.copy())
    worst = 0.0
    for leaf, grad in zip(leaves, analytic_grads):
        flat = leaf.data.reshape(-1)
        count = min(n_samples, flat.size)
        idx = rng.choice(flat.size, size=count, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            up = build_loss().item()
            flat[i] = orig - step
            dn = build_loss().item()
            flat[i] = orig
            numeric = (up - dn) / (2.0 * step)
            analytic = grad.reshape(-1)[i]
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1.0)
            worst = max(worst, rel)
            assert rel < rtol, (
                f"gradient mismatch at {leaf.op!r}[{i}]: analytic={analytic!r} "
                f"numeric={numeric!r} rel={rel:.3e}"
            )
    return worst
