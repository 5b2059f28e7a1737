"""Element-by-element reference implementations of the losses.

Nothing here uses the package's masking or loss code; networks are treated as
black boxes fed tensors that the loops assemble one scalar at a time.
"""

import math

import torch


def _shape(x):
    return tuple(x.shape)


def _lists(*ts):
    # nested Python lists, so every loop below does scalar arithmetic only
    return [t.tolist() if isinstance(t, torch.Tensor) else t for t in ts]


def loop_inside(x, M):
    N, Ch, H, W = _shape(x)
    (v,) = _lists(x)
    out = [[[[(1.0 - float(M[i][j])) * v[n][c][i][j] for j in range(W)] for i in range(H)]
            for c in range(Ch)] for n in range(N)]
    return torch.tensor(out, dtype=x.dtype)


def loop_outside(x, M):
    N, Ch, H, W = _shape(x)
    (v,) = _lists(x)
    out = [[[[float(M[i][j]) * v[n][c][i][j] for j in range(W)] for i in range(H)]
            for c in range(Ch)] for n in range(N)]
    return torch.tensor(out, dtype=x.dtype)


def loop_concat(x, M):
    N, Ch, H, W = _shape(x)
    (v,) = _lists(x)
    out = []
    for n in range(N):
        planes = [[[v[n][c][i][j] for j in range(W)] for i in range(H)] for c in range(Ch)]
        planes.append([[float(M[i][j]) for j in range(W)] for i in range(H)])
        out.append(planes)
    return torch.tensor(out, dtype=x.dtype)


def loop_restore(output, inp, known):
    N, Ch, H, W = _shape(output)
    o, v = _lists(output, inp)
    out = [[[[v[n][c][i][j] if known[i][j] == 1 else o[n][c][i][j] for j in range(W)] for i in range(H)]
            for c in range(Ch)] for n in range(N)]
    return torch.tensor(out, dtype=output.dtype)


def loop_l1(output, target, region):
    N, Ch, H, W = _shape(output)
    o, t = _lists(output, target)
    total, count = 0.0, 0
    for n in range(N):
        for c in range(Ch):
            for i in range(H):
                for j in range(W):
                    if region[i][j] == 1:
                        total += abs(o[n][c][i][j] - t[n][c][i][j])
                        count += 1
    return total / count if count else 0.0


def loop_disc(p_real, p_fake):
    a = sum(math.log(float(p)) for p in p_real) / len(p_real)
    b = sum(math.log(1.0 - float(p)) for p in p_fake) / len(p_fake)
    return -(a + b)


def loop_gen(p_fake):
    return -sum(math.log(float(p)) for p in p_fake) / len(p_fake)


def complement_list(M):
    return [[1 - v for v in row] for row in M]


def loop_cycle(first, second, D, x, M, alpha, beta):
    """(adv, ctx, rec, total) for one cycle; ``first`` fills M, ``second`` fills 1 - M."""
    keep = complement_list(M)
    with torch.no_grad():
        raw = first(loop_concat(loop_inside(x, M), M))
        filled = loop_restore(raw, x, keep)
        adv = loop_gen(D(filled))
        ctx = loop_l1(raw, x, M)
        back = second(loop_concat(loop_outside(filled, M), keep))
        rec = loop_l1(back, x, keep)
    return adv, ctx, rec, adv + alpha * ctx + beta * rec
