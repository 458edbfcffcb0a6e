"""Shared independent oracles: finite differences and loop-based convolution.

These deliberately avoid the library's own forward/backward paths so that
gradient and kernel tests check against something that cannot share a bug
with the code under test.
"""

import numpy as np

from charstudio import tensor as T


def finite_diff(f, arrays, h=1e-5):
    """Central-difference gradients of scalar f(list_of_arrays) per array."""
    grads = []
    for ai, a in enumerate(arrays):
        g = np.zeros_like(a, dtype=np.float64)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(arrays)
            flat[i] = orig - h
            fm = f(arrays)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def rel_err(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return np.abs(a - b).max(initial=0.0) / denom


def gradcheck(build_loss, arrays, tol=1e-5, h=1e-5):
    """Compare tape gradients of a scalar against central differences.

    ``build_loss`` receives a list of Tensors (requires_grad set) and returns
    a scalar Tensor; it is re-invoked on perturbed numpy copies for the
    finite-difference side.  Runs in 64-bit mode.
    """
    with T.precision("float64"):
        params = [T.Tensor(a.copy(), requires_grad=True, dtype=np.float64) for a in arrays]
        tape = T.Tape()
        with tape:
            loss = build_loss(params)
        grads = tape.backward(loss, wrt=params)
        analytic = [grads[p].data.copy() for p in params]

        def scalar(arrs):
            ts = [T.Tensor(a, dtype=np.float64) for a in arrs]
            with T.Tape():
                return build_loss(ts).item()

        numeric = finite_diff(scalar, [a.astype(np.float64) for a in arrays], h=h)
    errs = [rel_err(an, nu) for an, nu in zip(analytic, numeric)]
    return max(errs), analytic, numeric


def conv2d_loops(x, w, stride, padding):
    """Direct quadruple-loop correlation oracle (float64)."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b, ci, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - k) // stride + 1
    ow = (wd + 2 * padding - k) // stride + 1
    y = np.zeros((b, o, oh, ow))
    for bi in range(b):
        for oi in range(o):
            for yy in range(oh):
                for xx in range(ow):
                    acc = 0.0
                    for c in range(ci):
                        for kh in range(k):
                            for kw in range(k):
                                acc += xp[bi, c, yy * stride + kh, xx * stride + kw] * w[oi, c, kh, kw]
                    y[bi, oi, yy, xx] = acc
    return y
