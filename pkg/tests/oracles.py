"""Independent reference implementations used only by the tests.

Written from the definitions with plain Python loops so they share no code
with the package.
"""
import math

MASK = (1 << 64) - 1


def splitmix64(seed, n):
    out, state = [], seed & MASK
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & MASK
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        out.append(z ^ (z >> 31))
    return out


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def gru_step_loops(W, U, b, x, h):
    """One GRU step on python lists.  W/U/b are dicts keyed z, r, h."""
    H = len(h)

    def affine(g, inp, rec):
        return [sum(inp[i] * W[g][i][j] for i in range(len(inp)))
                + sum(rec[k] * U[g][k][j] for k in range(H)) + b[g][j] for j in range(H)]

    z = [sig(a) for a in affine("z", x, h)]
    r = [sig(a) for a in affine("r", x, h)]
    hc = [math.tanh(a) for a in affine("h", x, [r[k] * h[k] for k in range(H)])]
    return [(1 - z[j]) * h[j] + z[j] * hc[j] for j in range(H)]


def brute_metrics(cm):
    """Per-class and support-weighted P/R/F1 from the definitions."""
    k = len(cm)
    total = sum(sum(row) for row in cm)
    P, R, F, S = [], [], [], []
    for c in range(k):
        tp = cm[c][c]
        pred = sum(cm[i][c] for i in range(k))
        true = sum(cm[c][j] for j in range(k))
        p = tp / pred if pred else 0.0
        r = tp / true if true else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        P.append(p)
        R.append(r)
        F.append(f)
        S.append(true)
    w = [s / total for s in S]
    return {
        "precision": P, "recall": R, "f1": F,
        "wp": sum(a * b for a, b in zip(w, P)),
        "wr": sum(a * b for a, b in zip(w, R)),
        "wf": sum(a * b for a, b in zip(w, F)),
    }


def central_difference(f, arr, idx, step):
    old = arr[idx]
    arr[idx] = old + step
    up = f()
    arr[idx] = old - step
    down = f()
    arr[idx] = old
    return (up - down) / (2 * step)
