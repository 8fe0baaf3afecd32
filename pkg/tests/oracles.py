"""Independent reference computations used only by the tests."""

import heapq
import math

from scipy.optimize import brentq, minimize_scalar


def pk_delay(lam, mean_s, cv):
    """Pollaczek-Khinchine mean sojourn time via the second moment of S."""
    es2 = mean_s ** 2 * (1 + cv ** 2)
    rho = lam * mean_s
    return mean_s + lam * es2 / (2 * (1 - rho))


def llr_limit_root(mu, cv):
    f = lambda ls: 1 / ls - pk_delay(ls, 1 / mu, cv)
    return brentq(f, 1e-9 * mu, mu * (1 - 1e-12), xtol=1e-15, rtol=1e-15)


def max_alloc_root(ls, mu, cv):
    f = lambda lb: pk_delay(ls + lb, 1 / mu, cv) - 1 / ls
    if f(0.0) >= 0:
        return 0.0
    return brentq(f, 0.0, mu - ls - 1e-12 * mu, xtol=1e-15, rtol=1e-15)


def gain_by_delays(ls, lb, mu, cv):
    d0 = pk_delay(ls, 1 / mu, cv)
    d = pk_delay(ls + lb, 1 / mu, cv)
    return lb / ls - (d - d0) / d0


def pfll_numeric(ls, mu, cv):
    top = max_alloc_root(ls, mu, cv)
    res = minimize_scalar(lambda lb: -gain_by_delays(ls, lb, mu, cv), bounds=(0, top),
                          method="bounded", options={"xatol": 1e-12})
    return res.x


def heap_fifo(arrivals, services):
    """Textbook event-calendar FIFO single server; returns departure times.

    ``arrivals`` must already be in service order.
    """
    cal = [(t, 1, i) for i, t in enumerate(arrivals)]  # kind 1 = arrival
    heapq.heapify(cal)
    queue = []
    busy = False
    dep = [math.nan] * len(arrivals)
    qpos = 0
    while cal:
        t, kind, i = heapq.heappop(cal)
        if kind == 1:
            queue.append(i)
            if not busy:
                busy = True
                j = queue[qpos]
                heapq.heappush(cal, (t + services[j], 0, j))
        else:
            dep[i] = t
            qpos += 1
            if qpos < len(queue):
                j = queue[qpos]
                heapq.heappush(cal, (t + services[j], 0, j))
            else:
                busy = False
    return dep
