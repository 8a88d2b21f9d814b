import numpy as np

from lcva.model import PairBatch, elbo_pair


def random_batch(rng, n, d):
    return PairBatch(rng.normal((n, d)), rng.normal((n, d)), rng.bernoulli(np.full(n, 0.5)),
                     rng.bernoulli(np.full(n, 0.5)), rng.normal(n))


def finite_difference_check(params, batch, eps, h=1e-5, rel=1e-4, abs_floor=1e-6):
    """Assert every analytic ELBO gradient entry matches central differences.

    Returns the number of entries checked.
    """
    _, grads = elbo_pair(params, batch, eps=eps)
    checked = 0
    for arr, g in zip(params.parameters(), grads):
        for i in range(arr.size):
            old = arr.flat[i]
            arr.flat[i] = old + h
            fp = elbo_pair(params, batch, eps=eps, with_grad=False)[0].objective
            arr.flat[i] = old - h
            fm = elbo_pair(params, batch, eps=eps, with_grad=False)[0].objective
            arr.flat[i] = old
            fd = (fp - fm) / (2 * h)
            tol = max(abs_floor, rel * max(abs(fd), abs(g.flat[i])))
            assert abs(fd - g.flat[i]) <= tol, (i, fd, g.flat[i])
            checked += 1
    return checked
