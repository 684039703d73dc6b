"""Pure-Python reference computations, deliberately free of numpy vector math.

These loop over every (v, h) configuration with ``itertools.product`` and
``math.exp`` so they share no code path with the package.
"""
import itertools
import math


def energy(v, h, b, c, W):
    e = 0.0
    for i, vi in enumerate(v):
        e -= b[i] * vi
    for j, hj in enumerate(h):
        e -= c[j] * hj
    for i, vi in enumerate(v):
        for j, hj in enumerate(h):
            e -= vi * W[i][j] * hj
    return e


def states(n):
    return list(itertools.product((0, 1), repeat=n))


def partition(b, c, W):
    return sum(math.exp(-energy(v, h, b, c, W)) for v in states(len(b)) for h in states(len(c)))


def joint(v, h, b, c, W):
    return math.exp(-energy(v, h, b, c, W)) / partition(b, c, W)


def hidden_conditional(v, b, c, W):
    """p(h_j = 1 | v) from ratios of joint weights."""
    hs = states(len(c))
    weights = [math.exp(-energy(v, h, b, c, W)) for h in hs]
    total = sum(weights)
    return [sum(w for h, w in zip(hs, weights) if h[j] == 1) / total for j in range(len(c))]


def visible_conditional(h, b, c, W):
    vs = states(len(b))
    weights = [math.exp(-energy(v, h, b, c, W)) for v in vs]
    total = sum(weights)
    return [sum(w for v, w in zip(vs, weights) if v[i] == 1) / total for i in range(len(b))]


def log_likelihood(batch, b, c, W):
    z = partition(b, c, W)
    total = 0.0
    for v in batch:
        total += math.log(sum(math.exp(-energy(v, h, b, c, W)) for h in states(len(c))) / z)
    return total / len(batch)


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def reconstruction_error(batch, b, c, W):
    """Mean-field one-step reconstruction error, written out with loops."""
    total = 0.0
    count = 0
    for v in batch:
        h = [sigmoid(c[j] + sum(W[i][j] * v[i] for i in range(len(b)))) for j in range(len(c))]
        for i in range(len(b)):
            r = sigmoid(b[i] + sum(W[i][j] * h[j] for j in range(len(c))))
            total += (v[i] - r) ** 2
            count += 1
    return total / count
