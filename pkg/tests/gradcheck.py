"""Central finite differences and per-layer gradient checks shared by the nn tests."""

import numpy as np

from altmap.nn import functional as F

H = 1e-6


def rel_error(a, b):
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def numeric_grad(f, x, h=H):
    """d f / d x by central differences; ``f`` returns a scalar, ``x`` is perturbed in place."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def _away_from_kinks(x, rng, margin=1e-3):
    # keep ReLU / SELU / maxpool inputs off their non-differentiable points
    x = np.where(np.abs(x) < margin, x + np.sign(x + 1e-12) * 2 * margin, x)
    return x


def check_conv(rng):
    n, k = rng.integers(1, 3), rng.choice([1, 3, 5])
    h, w = rng.integers(k, k + 4), rng.integers(k, k + 4)
    cin, cout = rng.integers(1, 4), rng.integers(1, 4)
    x = rng.normal(size=(n, h, w, cin))
    wt = rng.normal(size=(k, k, cin, cout))
    b = rng.normal(size=cout)
    r = rng.normal(size=(n, h - k + 1, w - k + 1, cout))

    def loss():
        return float((F.conv2d_forward(x, wt, b) * r).sum())

    gx, gw, gb = F.conv2d_backward(r, x, wt)
    return max(rel_error(gx, numeric_grad(loss, x)), rel_error(gw, numeric_grad(loss, wt)),
               rel_error(gb, numeric_grad(loss, b)))


def check_dense(rng):
    n, din, dout = rng.integers(1, 6), rng.integers(1, 8), rng.integers(1, 6)
    x, w, b = rng.normal(size=(n, din)), rng.normal(size=(din, dout)), rng.normal(size=dout)
    r = rng.normal(size=(n, dout))

    def loss():
        return float((F.dense_forward(x, w, b) * r).sum())

    gx, gw, gb = F.dense_backward(r, x, w)
    return max(rel_error(gx, numeric_grad(loss, x)), rel_error(gw, numeric_grad(loss, w)),
               rel_error(gb, numeric_grad(loss, b)))


def check_relu(rng):
    x = _away_from_kinks(rng.normal(size=tuple(rng.integers(1, 6, size=2))), rng)
    r = rng.normal(size=x.shape)
    return rel_error(F.relu_grad(x, r), numeric_grad(lambda: float((F.relu(x) * r).sum()), x))


def check_selu(rng):
    x = _away_from_kinks(rng.normal(scale=2.0, size=tuple(rng.integers(1, 6, size=2))), rng)
    r = rng.normal(size=x.shape)
    return rel_error(F.selu_grad(x, r), numeric_grad(lambda: float((F.selu(x) * r).sum()), x))


def check_softmax_ce(rng):
    n, c = rng.integers(1, 6), rng.integers(2, 6)
    z = rng.normal(scale=2.0, size=(n, c))
    t = np.eye(c)[rng.integers(0, c, n)]
    g = F.cross_entropy_softmax_grad(z, t)
    return rel_error(g, numeric_grad(lambda: F.cross_entropy(F.softmax(z), t), z))


def check_dropout_off(rng):
    x = rng.normal(size=tuple(rng.integers(1, 6, size=3)))
    r = rng.normal(size=x.shape)
    rate = rng.uniform(0, 0.9)
    out, mask = F.dropout(x, rate, "infer")
    return rel_error(F.dropout_grad(r, mask), numeric_grad(lambda: float((F.dropout(x, rate, "infer")[0] * r).sum()), x))


def check_maxpool(rng):
    size = int(rng.choice([2, 3]))
    n, c = rng.integers(1, 3), rng.integers(1, 3)
    h, w = rng.integers(size, 3 * size + 2), rng.integers(size, 3 * size + 2)
    # distinct values spaced well above the FD step so the argmax never flips
    x = rng.permutation(n * h * w * c).reshape(n, h, w, c).astype(np.float64) * 0.01
    out, arg = F.maxpool2d_forward(x, size)
    r = rng.normal(size=out.shape)
    g = F.maxpool2d_backward(r, arg, x.shape, size)
    return rel_error(g, numeric_grad(lambda: float((F.maxpool2d_forward(x, size)[0] * r).sum()), x))


LAYER_CHECKS = {
    "conv": check_conv,
    "dense": check_dense,
    "relu": check_relu,
    "selu": check_selu,
    "softmax+ce": check_softmax_ce,
    "dropout-off": check_dropout_off,
    "maxpool": check_maxpool,
}
