"""Independent reference implementations used as test oracles.

Deliberately naive: plain Python loops and ``math``, no shared code with the
package beyond data containers.
"""

import math


def naive_forward(W1, b1, W2, b2, d_t, x_t, guidance, t):
    """Per-element denoiser forward pass for a batch given as nested lists."""
    out = []
    for row, (x, g) in enumerate(zip(x_t, guidance)):
        step = t[row] if isinstance(t, (list, tuple)) else t
        peak = max(abs(v) for v in g)
        gs = [v / peak for v in g] if peak > 0 else list(g)
        norm = math.sqrt(sum(v * v for v in gs))
        gn = [v / norm for v in gs] if norm > 0 else gs
        half = d_t // 2
        freqs = [10000.0 ** (-2.0 * i / d_t) for i in range(half)]
        temb = [math.sin(step * f) for f in freqs] + [math.cos(step * f) for f in freqs]
        inp = gn + list(x) + temb
        hidden = []
        for j in range(len(b1)):
            s = b1[j]
            for i, v in enumerate(inp):
                s += v * W1[i][j]
            hidden.append(math.tanh(s))
        eps = []
        for k in range(len(b2)):
            s = b2[k]
            for j, h in enumerate(hidden):
                s += h * W2[j][k]
            eps.append(s)
        out.append(eps)
    return out


def brute_metrics(ranked, truth, k):
    """precision, recall, ndcg, mrr at cutoff k for one user."""
    truth = set(truth)
    top = list(ranked)[:k]
    hits = 0
    dcg = 0.0
    first = None
    for i, item in enumerate(top, start=1):
        if item in truth:
            hits += 1
            dcg += 1.0 / math.log2(i + 1)
            if first is None:
                first = i
    idcg = 0.0
    for i in range(1, min(len(truth), k) + 1):
        idcg += 1.0 / math.log2(i + 1)
    return {
        "precision": hits / k,
        "recall": hits / len(truth),
        "ndcg": dcg / idcg,
        "mrr": 1.0 / first if first is not None else 0.0,
    }


def brute_rank(scores, excluded, k):
    """Descending score, ascending id on ties, excluded ids dropped."""
    cands = [i for i in range(len(scores)) if i not in set(excluded)]
    cands.sort(key=lambda i: (-scores[i], i))
    return cands[:k]


def markov_chain(x0, betas, noises):
    """Apply t single-step forward transitions x_t = sqrt(1-b) x_{t-1} + sqrt(b) e."""
    x = x0
    for b, e in zip(betas, noises):
        x = math.sqrt(1.0 - b) * x + math.sqrt(b) * e
    return x


def central_difference(outputs, arr, idx, upstream, h=1e-5):
    """d/d arr[idx] of sum(outputs(arr) * upstream) by central differences.

    The two outputs are differenced elementwise and reduced with ``fsum``
    so the reduction adds no cancellation error, and the divisor is the
    step actually realised in floating point.
    """
    hi, lo = arr.copy(), arr.copy()
    hi[idx] += h
    lo[idx] -= h
    diff = (outputs(hi) - outputs(lo)) * upstream
    return math.fsum(diff.ravel().tolist()) / (hi[idx] - lo[idx])


def relative_error(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)
