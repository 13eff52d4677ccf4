"""Central finite-difference gradient checking for the autodiff ops.

Shared between the op unit tests and the acceptance sweep.  The pattern:
build a scalar loss from the op under test, reduced through ops verified
earlier in the chain (mse_loss first, then linear/pool, then fixed-weight
convolutions as spatially discriminating reducers).  Kinked
ops (relu) keep their inputs bounded away from zero so a +-eps bump never
crosses the kink.

Every loss builder must be a pure function of the parameters' current
.data: reducer weights and targets are drawn once and closed over, so
perturbing an element in place and re-evaluating measures the true
directional derivative of the same composite the backward pass
differentiated.
"""

import numpy as np

from snowfuse import nn

EPS = 1e-6
RTOL = 1e-5


def fd_run(make_loss, params: list[nn.Tensor], eps: float = EPS) -> float:
    """Backprop once, then centrally difference every element of every
    parameter; returns the worst relative error."""
    loss = make_loss()
    if loss.data.size != 1:
        raise AssertionError(f"loss must be scalar, got shape {loss.data.shape}")
    for p in params:
        p.zero_grad()
    loss.backward()
    worst = 0.0
    for p in params:
        if p.grad is None:
            raise AssertionError("parameter received no gradient")
        if not p.data.flags["C_CONTIGUOUS"]:
            raise AssertionError("parameter data must be contiguous for in-place bumps")
        gflat = p.grad.reshape(-1)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            up = float(make_loss().data)
            flat[i] = keep - eps
            dn = float(make_loss().data)
            flat[i] = keep
            fd = (up - dn) / (2.0 * eps)
            err = abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), 1.0)
            worst = max(worst, err)
    return worst


def fd_assert(make_loss, params: list[nn.Tensor], rtol: float = RTOL) -> float:
    worst = fd_run(make_loss, params)
    assert worst < rtol, f"worst relative gradient error {worst:.3e} >= {rtol}"
    return worst


def param(rng: np.random.Generator, *shape, away_from_zero: float = 0.0) -> nn.Tensor:
    """Random parameter tensor; optionally with |x| >= away_from_zero so a
    perturbation never crosses a relu kink."""
    vals = rng.uniform(-1.0, 1.0, size=shape)
    if away_from_zero > 0.0:
        vals = np.sign(vals) * (away_from_zero + np.abs(vals))
    return nn.Tensor(vals, requires_grad=True)


def fixed(rng: np.random.Generator, *shape) -> nn.Tensor:
    """Random constant tensor (no gradient) for reducers and targets."""
    return nn.Tensor(rng.uniform(-1.0, 1.0, size=shape), requires_grad=False)


# ---------------------------------------------------------------------------
# reducer factories; weights are drawn once at construction


def _reducer_geometry(extent: int) -> tuple[int, int]:
    """Kernel size and padding for the fixed reducing convolution.

    Odd extents get a full-extent kernel (a single output position, so
    every input element carries a distinct random coefficient).  Kernels
    must be odd, so even extents use the next size down (or 3 with
    padding for extent 2), leaving 2x2 output positions; after the mean
    pool each element's composite coefficient is a sum over a different
    set of kernel entries, which is still almost surely distinct per
    element, so spatial permutation bugs cannot cancel."""
    if extent % 2 == 1:
        return extent, 0
    if extent == 2:
        return 3, 1
    return extent - 1, 0


def chw_reducer(rng: np.random.Generator, c: int, extent: int):
    """[c,extent,extent] -> scalar with a distinct random coefficient per
    element, so no gradient error can hide behind a spatially symmetric
    reduction."""
    k_red, pad_red = _reducer_geometry(extent)
    wfix = fixed(rng, 3, c, k_red, k_red)
    target = rng.uniform(-1.0, 1.0, size=3)

    def reduce(h: nn.Tensor) -> nn.Tensor:
        r = nn.conv2d(h, wfix, padding=pad_red)
        return nn.mse_loss(nn.global_avg_pool(r), target)

    return reduce


def nd_reducer(rng: np.random.Generator, n: int, d: int):
    """[n,d] -> scalar via a fixed linear head."""
    wfix = fixed(rng, 1, d)
    bfix = fixed(rng, 1)
    target = rng.uniform(-1.0, 1.0, size=n)

    def reduce(v: nn.Tensor) -> nn.Tensor:
        y = nn.squeeze_column(nn.linear_batch(v, wfix, bfix))   # [n]
        return nn.mse_loss(y, target)

    return reduce


def nchw_reducer(rng: np.random.Generator, n: int, c: int, extent: int):
    """[n,c,extent,extent] -> scalar, per-element coefficients as above."""
    k_red, pad_red = _reducer_geometry(extent)
    wfix = fixed(rng, 3, c, k_red, k_red)
    tail = nd_reducer(rng, n, 3)

    def reduce(h: nn.Tensor) -> nn.Tensor:
        r = nn.conv2d_batch(h, wfix, padding=pad_red)
        return tail(nn.global_avg_pool_batch(r))

    return reduce


def conv_extent(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1
