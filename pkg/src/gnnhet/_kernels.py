"""Compiled message-passing kernels.

Parameters travel as one flat vector laid out layer by layer as
``A^(l)`` (row-major), ``A_N^(l)`` (row-major), ``b^(l)``, followed by the
output weights ``a`` and the output bias.

A batch is expanded into its receptive field once: ``order[:m[L]]`` holds
the batch, ``order[:m[l-1]]`` extends ``order[:m[l]]`` with the neighbours of
those nodes. Every layer's node set is a prefix of the next lower one, so a
node's local row index is the same at every layer and ``pos`` maps global id
to that row.

Matrix-vector products are written as explicit loops so the summation
order is fixed: self term over input columns, then neighbour-mean term,
then bias. Neighbour means add rows in ascending neighbour id and divide
by the degree at the end.
"""
import numpy as np
from numba import njit
from numba.typed import List

SIGMOID = 0
TANH = 1

LEAST_SQUARES = 0
LOGISTIC = 1


@njit(cache=True)
def _activate(u, kind):
    if kind == SIGMOID:
        if u >= 0.0:
            return 1.0 / (1.0 + np.exp(-u))
        e = np.exp(u)
        return e / (1.0 + e)
    return np.tanh(u)


@njit(cache=True)
def _activate_grad(h, kind):
    # derivative expressed through the activation output
    if kind == SIGMOID:
        return h * (1.0 - h)
    return 1.0 - h * h


@njit(cache=True)
def _softplus(z):
    if z > 0.0:
        return z + np.log1p(np.exp(-z))
    return np.log1p(np.exp(z))


@njit(cache=True)
def _sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return e / (1.0 + e)


@njit(cache=True)
def loss_and_grad(kind, y, z):
    if kind == LEAST_SQUARES:
        r = z - y
        return 0.5 * r * r, r
    # -yz + log(1 + e^z), written as y*softplus(-z) + (1-y)*softplus(z)
    return y * _softplus(-z) + (1.0 - y) * _softplus(z), _sigmoid(z) - y


@njit(cache=True)
def build_context(indptr, indices, batch, n_layers, pos, order):
    """Fill ``order``/``pos`` with the receptive field of ``batch``.

    ``pos`` must be -1 on entry for every node; callers reset the touched
    entries with :func:`release_context`. Returns the prefix sizes ``m``.
    """
    m = np.empty(n_layers + 1, np.int64)
    cnt = 0
    for k in range(batch.size):
        g = batch[k]
        if pos[g] < 0:
            pos[g] = cnt
            order[cnt] = g
            cnt += 1
    m[n_layers] = cnt
    lo = 0
    for l in range(n_layers, 0, -1):
        hi = cnt
        for k in range(lo, hi):
            g = order[k]
            for q in range(indptr[g], indptr[g + 1]):
                j = indices[q]
                if pos[j] < 0:
                    pos[j] = cnt
                    order[cnt] = j
                    cnt += 1
        m[l - 1] = cnt
        lo = hi
    return m


@njit(cache=True)
def release_context(order, m0, pos):
    for k in range(m0):
        pos[order[k]] = -1


@njit(cache=True)
def forward(theta, dims, act, X, indptr, indices, order, m, pos):
    n_layers = dims.size - 1
    m0 = m[0]
    H = List()
    Hbar = List()
    H0 = np.empty((m0, dims[0]))
    for k in range(m0):
        for c in range(dims[0]):
            H0[k, c] = X[order[k], c]
    H.append(H0)
    off = 0
    for l in range(1, n_layers + 1):
        din = dims[l - 1]
        dout = dims[l]
        A = theta[off:off + dout * din].reshape((dout, din))
        off += dout * din
        AN = theta[off:off + dout * din].reshape((dout, din))
        off += dout * din
        b = theta[off:off + dout]
        off += dout
        ml = m[l]
        Hp = H[l - 1]
        hb = np.zeros((ml, din))
        Hl = np.empty((ml, dout))
        for k in range(ml):
            g = order[k]
            s = indptr[g]
            e = indptr[g + 1]
            if e > s:
                for q in range(s, e):
                    j = pos[indices[q]]
                    for c in range(din):
                        hb[k, c] += Hp[j, c]
                deg = e - s
                for c in range(din):
                    hb[k, c] /= deg
            for r in range(dout):
                u = 0.0
                for c in range(din):
                    u += A[r, c] * Hp[k, c]
                for c in range(din):
                    u += AN[r, c] * hb[k, c]
                u += b[r]
                Hl[k, r] = _activate(u, act)
        H.append(Hl)
        Hbar.append(hb)
    dl = dims[n_layers]
    a = theta[off:off + dl]
    b0 = theta[off + dl]
    mL = m[n_layers]
    HL = H[n_layers]
    zraw = np.empty(mL)
    for k in range(mL):
        s = 0.0
        for c in range(dl):
            s += a[c] * HL[k, c]
        zraw[k] = s + b0
    return H, Hbar, zraw


@njit(cache=True)
def backward(theta, dims, act, indptr, indices, order, m, pos, H, Hbar, gz, grad):
    """Accumulate d(sum_k gz[k] * zraw[k]) / d(theta) into ``grad``.

    ``gz`` is indexed by local row (length ``m[L]``) and must already carry
    the clamp mask.
    """
    n_layers = dims.size - 1
    # offsets of every layer block
    offs = np.empty(n_layers + 1, np.int64)
    off = 0
    for l in range(1, n_layers + 1):
        offs[l - 1] = off
        off += 2 * dims[l] * dims[l - 1] + dims[l]
    offs[n_layers] = off
    dl = dims[n_layers]
    mL = m[n_layers]
    HL = H[n_layers]
    a = theta[off:off + dl]
    gH = np.zeros((mL, dl))
    for k in range(mL):
        g = gz[k]
        if g == 0.0:
            continue
        for c in range(dl):
            grad[off + c] += g * HL[k, c]
            gH[k, c] = g * a[c]
        grad[off + dl] += g
    for l in range(n_layers, 0, -1):
        din = dims[l - 1]
        dout = dims[l]
        o = offs[l - 1]
        A = theta[o:o + dout * din].reshape((dout, din))
        AN = theta[o + dout * din:o + 2 * dout * din].reshape((dout, din))
        ob = o + 2 * dout * din
        ml = m[l]
        Hl = H[l]
        Hp = H[l - 1]
        hb = Hbar[l - 1]
        mp = m[l - 1]
        gHp = np.zeros((mp, din))
        gU = np.empty(dout)
        gHb = np.empty(din)
        for k in range(ml):
            nz = False
            for r in range(dout):
                gU[r] = gH[k, r] * _activate_grad(Hl[k, r], act)
                if gU[r] != 0.0:
                    nz = True
            if not nz:
                continue
            for r in range(dout):
                gu = gU[r]
                base = o + r * din
                for c in range(din):
                    grad[base + c] += gu * Hp[k, c]
                base = o + dout * din + r * din
                for c in range(din):
                    grad[base + c] += gu * hb[k, c]
                grad[ob + r] += gu
            if l == 1:
                continue  # no gradient needed for the covariates
            for c in range(din):
                s = 0.0
                for r in range(dout):
                    s += gU[r] * A[r, c]
                gHp[k, c] += s
            g = order[k]
            st = indptr[g]
            en = indptr[g + 1]
            if en > st:
                deg = en - st
                for c in range(din):
                    s = 0.0
                    for r in range(dout):
                        s += gU[r] * AN[r, c]
                    gHb[c] = s / deg
                for q in range(st, en):
                    j = pos[indices[q]]
                    for c in range(din):
                        gHp[j, c] += gHb[c]
        gH = gHp


@njit(cache=True)
def batch_loss_grad(theta, dims, act, zbar, loss_kind, X, indptr, indices, y,
                    batch, scale, pos, order, grad):
    """Loss sum over ``batch`` and its gradient (times ``scale``) added to ``grad``."""
    n_layers = dims.size - 1
    m = build_context(indptr, indices, batch, n_layers, pos, order)
    H, Hbar, zraw = forward(theta, dims, act, X, indptr, indices, order, m, pos)
    mL = m[n_layers]
    gz = np.zeros(mL)
    total = 0.0
    for k in range(batch.size):
        loc = pos[batch[k]]
        zr = zraw[loc]
        z = zr
        inside = True
        if z > zbar:
            z = zbar
            inside = False
        elif z < -zbar:
            z = -zbar
            inside = False
        lv, dz = loss_and_grad(loss_kind, y[batch[k]], z)
        total += lv
        if inside:
            gz[loc] += scale * dz
    backward(theta, dims, act, indptr, indices, order, m, pos, H, Hbar, gz, grad)
    release_context(order, m[0], pos)
    return total


@njit(cache=True)
def adam_update(theta, grad, mom, vel, t, lr, beta1, beta2, eps):
    """One bias-corrected Adam step in place; ``t`` is the new step count."""
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p in range(theta.size):
        g = grad[p]
        mom[p] = beta1 * mom[p] + (1.0 - beta1) * g
        vel[p] = beta2 * vel[p] + (1.0 - beta2) * g * g
        theta[p] -= lr * (mom[p] / c1) / (np.sqrt(vel[p] / c2) + eps)


@njit(cache=True)
def train_epoch(theta, mom, vel, t0, lr, beta1, beta2, eps, dims, act, zbar,
                loss_kind, X, indptr, indices, y, perm, batch_size, scale,
                pos, order):
    """Run one pass of mini-batch Adam over ``perm``; returns the step count."""
    grad = np.zeros(theta.size)
    t = t0
    nb = perm.size
    for start in range(0, nb, batch_size):
        stop = min(start + batch_size, nb)
        grad[:] = 0.0
        batch_loss_grad(theta, dims, act, zbar, loss_kind, X, indptr, indices,
                        y, perm[start:stop], scale, pos, order, grad)
        t += 1
        adam_update(theta, grad, mom, vel, t, lr, beta1, beta2, eps)
    return t
