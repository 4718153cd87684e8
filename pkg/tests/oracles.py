"""Reference implementations kept independent of the package code paths under test."""
import math

D = 32.768


def ackley_term(x1, x2, c1, c2, alpha):
    r = math.sqrt(0.5 * ((x1 - c1) ** 2 + (x2 - c2) ** 2))
    g = 20.0 - 20.0 * alpha * math.exp(-0.2 * r)
    h = math.e - math.exp(0.5 * (math.cos(2 * math.pi * (x1 - c1)) + math.cos(2 * math.pi * (x2 - c2))))
    return g, h


def hf_direct(u1, u2):
    x1, x2 = u1 * D, u2 * D
    g1, h1 = ackley_term(x1, x2, -0.5 * D, -0.5 * D, 1.0)
    g2, h2 = ackley_term(x1, x2, 0.5 * D, 0.5 * D, 1.5)
    return g1 + h1 + g2 + h2


def lf1_direct(u1, u2):
    x1, x2 = u1 * D, u2 * D
    hm = 0.5 * (math.e - math.exp(-1.0))
    g1, _ = ackley_term(x1, x2, -0.3 * D, -0.3 * D, 1.0)
    g2, _ = ackley_term(x1, x2, 0.3 * D, 0.3 * D, 0.0)
    return g1 + hm + g2 + hm


def lf2_direct(u1, u2):
    x1, x2 = u1 * D, u2 * D
    hm = 0.5 * (math.e - math.exp(-1.0))
    g1, _ = ackley_term(x1, x2, -0.3 * D, -0.3 * D, 0.0)
    g2, _ = ackley_term(x1, x2, 0.3 * D, 0.3 * D, 1.5)
    return g1 + hm + g2 + hm


def gae_brute_force(rewards, values, next_value_last, terminal, gamma, lam):
    """A_t = sum_k (gamma*lam)^k delta_{t+k}, computed term by term."""
    n = len(rewards)
    nxt = list(values[1:]) + [0.0 if terminal else next_value_last]
    deltas = [rewards[t] + gamma * nxt[t] - values[t] for t in range(n)]
    return [sum((gamma * lam) ** k * deltas[t + k] for k in range(n - t)) for t in range(n)]


def morans_i_double_sum(x, w):
    n = len(x)
    mean = sum(x) / n
    num = 0.0
    wsum = 0.0
    for i in range(n):
        for j in range(n):
            num += w[i][j] * (x[i] - mean) * (x[j] - mean)
            wsum += w[i][j]
    den = sum((xi - mean) ** 2 for xi in x)
    return n / wsum * num / den


def central_difference(f, params, h=1e-5):
    """Numerical gradient of scalar f() w.r.t. every entry of every array in params (in place)."""
    grads = {}
    for k, arr in params.items():
        g = [0.0] * arr.size
        flat = arr.reshape(-1)
        for i in range(arr.size):
            old = flat[i]
            flat[i] = old + h
            fp = f()
            flat[i] = old - h
            fm = f()
            flat[i] = old
            g[i] = (fp - fm) / (2 * h)
        grads[k] = g
    return grads
