"""Input-convex scalar network with analytic input and parameter gradients.

Network (softplus activation ``sp``, all matrices element-wise non-negative)::

    z1 = sp(W1 x + b1)
    zl = sp(Wl z(l-1) + Ul x + bl)      l = 2..L   (Ul only with passthrough)
    y  = w . zL + b

Non-negativity is enforced by storing raw parameters ``theta`` and using
``softplus(theta)`` as the effective weight; biases are used raw. The flat
layout of ``theta`` is, per layer: raw W block (row-major, h_l x fan_in),
raw U block (h_l x n_in, layers >= 2 with passthrough), bias block; then the
raw output weights (h_L) and the output bias (1).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def softplus(t):
    # ln(1 + e^-|t|) + max(t, 0): no overflow for large |t|
    return np.log1p(np.exp(-np.abs(t))) + np.maximum(t, 0.0)


def sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def inverse_softplus(y):
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


@dataclass(frozen=True)
class IcnnArch:
    n_in: int = 4
    widths: tuple = (16,)
    passthrough: bool = True

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.n_in < 1:
            raise ValueError("n_in must be >= 1")
        if not self.widths or min(self.widths) < 1:
            raise ValueError("widths must be a non-empty list of positive integers")

    def to_dict(self):
        return {"n_in": self.n_in, "widths": list(self.widths), "passthrough": self.passthrough}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d.get("n_in", 4)), tuple(d["widths"]), bool(d.get("passthrough", True)))

    def label(self):
        s = "x".join(str(w) for w in self.widths)
        return s + ("p" if self.passthrough and len(self.widths) > 1 else "")


DEFAULT_SWEEP = tuple(
    IcnnArch(4, w, passthrough=len(w) >= 2)
    for w in (
        (8,),
        (16,),
        (24,),
        (8, 8),
        (16, 16),
        (32, 32),
        (64, 64),
        (64, 64, 64),
        (76, 76, 76, 76),
        (96, 96, 96),
    )
)


class _Block:
    __slots__ = ("W", "U", "b")

    def __init__(self, W, U, b):
        self.W, self.U, self.b = W, U, b


def _layout(arch: IcnnArch):
    """Slices of the flat vector: list of per-layer _Block plus (w_out, b_out)."""
    blocks = []
    pos = 0
    fan = arch.n_in
    for l, h in enumerate(arch.widths):
        W = slice(pos, pos + h * fan)
        pos = W.stop
        U = None
        if l > 0 and arch.passthrough:
            U = slice(pos, pos + h * arch.n_in)
            pos = U.stop
        b = slice(pos, pos + h)
        pos = b.stop
        blocks.append(_Block(W, U, b))
        fan = h
    w_out = slice(pos, pos + arch.widths[-1])
    b_out = slice(w_out.stop, w_out.stop + 1)
    return blocks, w_out, b_out


def weight_mask(arch: IcnnArch) -> np.ndarray:
    """Boolean mask of entries that are reparameterised through softplus."""
    blocks, w_out, _ = _layout(arch)
    mask = np.zeros(count_parameters(arch), dtype=bool)
    for blk in blocks:
        mask[blk.W] = True
        if blk.U is not None:
            mask[blk.U] = True
    mask[w_out] = True
    return mask


def count_parameters(arch: IcnnArch) -> int:
    total = 0
    fan = arch.n_in
    for l, h in enumerate(arch.widths):
        total += h * fan + h
        if l > 0 and arch.passthrough:
            total += h * arch.n_in
        fan = h
    return total + arch.widths[-1] + 1


def init(arch: IcnnArch, seed: int) -> np.ndarray:
    """Deterministic raw parameters; effective weights ~ |N(0,1)|/sqrt(fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    theta = np.zeros(count_parameters(arch))
    blocks, w_out, _ = _layout(arch)

    def draw(sl, fan_in):
        eff = np.abs(rng.standard_normal(sl.stop - sl.start)) / np.sqrt(fan_in)
        theta[sl] = inverse_softplus(np.maximum(eff, 1e-6))

    fan = arch.n_in
    for l, blk in enumerate(blocks):
        fan_in = fan + (arch.n_in if blk.U is not None else 0)
        draw(blk.W, fan_in)
        if blk.U is not None:
            draw(blk.U, fan_in)
        fan = arch.widths[l]
    draw(w_out, arch.widths[-1])
    return theta


class Weights:
    """Effective weights unpacked from a raw parameter vector.

    Every function below accepts either a raw vector or an instance of this
    class; models holding fixed parameters unpack once and reuse it.
    """

    def __init__(self, arch, theta):
        theta = np.array(theta, dtype=float)
        theta.flags.writeable = False
        if theta.shape != (count_parameters(arch),):
            raise ValueError(
                f"expected {count_parameters(arch)} parameters, got {theta.shape}"
            )
        self.arch = arch
        self.blocks, self.s_wout, self.s_bout = _layout(arch)
        self.W, self.U, self.b = [], [], []
        fan = arch.n_in
        for l, blk in enumerate(self.blocks):
            h = arch.widths[l]
            self.W.append(softplus(theta[blk.W]).reshape(h, fan))
            self.U.append(None if blk.U is None else softplus(theta[blk.U]).reshape(h, arch.n_in))
            self.b.append(theta[blk.b])
            fan = h
        self.w = softplus(theta[self.s_wout])
        self.bout = theta[self.s_bout][0]
        self.theta = theta


def unpack(arch: IcnnArch, params) -> Weights:
    if isinstance(params, Weights):
        if params.arch != arch:
            raise ValueError("weights were unpacked for a different architecture")
        return params
    return Weights(arch, params)


def _as_batch(x, n_in):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[-1] != n_in:
        raise ValueError(f"input width {x.shape[-1]} != n_in {n_in}")
    return x, single


def _forward(wts: Weights, x):
    a_list, z_list = [], []
    z = None
    for l in range(len(wts.W)):
        a = (x if l == 0 else z) @ wts.W[l].T + wts.b[l]
        if wts.U[l] is not None:
            a = a + x @ wts.U[l].T
        z = softplus(a)
        a_list.append(a)
        z_list.append(z)
    return a_list, z_list, z @ wts.w + wts.bout


def forward(arch: IcnnArch, params, x):
    """Network output for a single input (n_in,) or a batch (N, n_in)."""
    wts = unpack(arch, params)
    x, single = _as_batch(x, arch.n_in)
    y = _forward(wts, x)[2]
    return y[0] if single else y


def _grad_input(wts: Weights, x, a_list):
    L = len(a_list)
    delta = wts.w * sigmoid(a_list[-1])
    g = np.zeros_like(x)
    for l in range(L - 1, -1, -1):
        if wts.U[l] is not None:
            g += delta @ wts.U[l]
        back = delta @ wts.W[l]
        if l == 0:
            g += back
        else:
            delta = back * sigmoid(a_list[l - 1])
    return g


def grad_input(arch: IcnnArch, params, x):
    """d output / d x, same leading shape as ``x``; non-negative by construction."""
    wts = unpack(arch, params)
    x, single = _as_batch(x, arch.n_in)
    a_list, _, _ = _forward(wts, x)
    g = _grad_input(wts, x, a_list)
    return g[0] if single else g


def value_and_grad_input(arch: IcnnArch, params, x):
    wts = unpack(arch, params)
    x, single = _as_batch(x, arch.n_in)
    a_list, _, y = _forward(wts, x)
    g = _grad_input(wts, x, a_list)
    return (y[0], g[0]) if single else (y, g)


def backward_params(arch: IcnnArch, params, x, a, c) -> np.ndarray:
    """Gradient w.r.t. raw parameters of  G = sum_n a_n y(x_n) + c_n . dy/dx(x_n).

    ``a`` has shape (N,) (or scalar for a single input) and ``c`` shape
    (N, n_in). The input-gradient term equals the directional derivative of
    y along c, so it is propagated as a forward tangent through the network
    and the combined primal/tangent graph is then reversed analytically.
    """
    wts = unpack(arch, params)
    x, _ = _as_batch(x, arch.n_in)
    N = len(x)
    a = np.broadcast_to(np.asarray(a, dtype=float), (N,))
    c = np.asarray(c, dtype=float).reshape(N, arch.n_in)
    L = len(wts.W)

    # primal + tangent forward
    A, Z, S, Ad, Zd = [], [], [], [], []
    z = zd = None
    for l in range(L):
        if l == 0:
            pre, pred = x @ wts.W[0].T, c @ wts.W[0].T
        else:
            pre, pred = z @ wts.W[l].T, zd @ wts.W[l].T
        if wts.U[l] is not None:
            pre = pre + x @ wts.U[l].T
            pred = pred + c @ wts.U[l].T
        pre = pre + wts.b[l]
        s = sigmoid(pre)
        z = softplus(pre)
        zd = s * pred
        A.append(pre)
        Z.append(z)
        S.append(s)
        Ad.append(pred)
        Zd.append(zd)

    grad = np.zeros_like(wts.theta)
    # output layer: y = zL.w + b, yd = zdL.w
    g_w = a @ Z[-1] + Zd[-1].sum(axis=0)
    grad[wts.s_bout] = a.sum()
    zbar = a[:, None] * wts.w[None, :]
    zdbar = np.broadcast_to(wts.w, Zd[-1].shape)

    eff_grads = []
    for l in range(L - 1, -1, -1):
        s = S[l]
        adbar = zdbar * s
        abar = zbar * s + zdbar * Ad[l] * s * (1.0 - s)
        inp = x if l == 0 else Z[l - 1]
        inpd = c if l == 0 else Zd[l - 1]
        gW = abar.T @ inp + adbar.T @ inpd
        gU = None
        if wts.U[l] is not None:
            gU = abar.T @ x + adbar.T @ c
        eff_grads.append((l, gW, gU))
        grad[wts.blocks[l].b] = abar.sum(axis=0)
        if l > 0:
            zbar = abar @ wts.W[l]
            zdbar = adbar @ wts.W[l]

    theta = wts.theta
    for l, gW, gU in eff_grads:
        blk = wts.blocks[l]
        grad[blk.W] = gW.ravel() * sigmoid(theta[blk.W])
        if gU is not None:
            grad[blk.U] = gU.ravel() * sigmoid(theta[blk.U])
    grad[wts.s_wout] = g_w * sigmoid(theta[wts.s_wout])
    return grad
