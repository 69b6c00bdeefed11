"""Image-space primitives on N,C,H,W tensors: convolution, bilinear resize,
and the avg/max/std pooling pair used by the calibration blocks."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, _accum, _make, as_tensor


def conv_output_extent(extent: int, kernel: int, stride: int, dilation: int, padding: int) -> int:
    return (extent + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def conv2d(x, weight, bias=None, stride: int = 1, dilation: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    """Direct cross-correlation (no kernel flip) over N,C,H,W.

    weight has shape [Cout, Cin/groups, k, k] with odd k. Summation order is
    fixed (kernel position outermost, channel contraction inside), so repeated
    runs are bitwise identical.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if bias is not None:
        bias = as_tensor(bias)
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, cin, h, w = x.shape
    cout, cin_g, kh, kw = weight.shape
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"conv2d kernel must be square with odd extent, got {kh}x{kw}")
    if cin % groups != 0 or cout % groups != 0:
        raise ValueError(f"channels ({cin} in, {cout} out) not divisible by groups={groups}")
    if cin_g != cin // groups:
        raise ValueError(
            f"weight shape {weight.shape} inconsistent with input {x.shape} at groups={groups}")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"bias shape {bias.shape} does not match {cout} output channels")
    h_out = conv_output_extent(h, kh, stride, dilation, padding)
    w_out = conv_output_extent(w, kw, stride, dilation, padding)
    if h_out < 1 or w_out < 1:
        raise ValueError(
            f"conv2d output extent {h_out}x{w_out} non-positive for input {h}x{w}, "
            f"kernel {kh}, stride {stride}, dilation {dilation}, padding {padding}")

    og = cout // groups
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    xg = xp.reshape(n, groups, cin_g, xp.shape[2], xp.shape[3])
    wg = weight.data.reshape(groups, og, cin_g, kh, kw)

    def patch(src, ky, kx):
        ys = ky * dilation
        xs = kx * dilation
        return src[:, :, :, ys: ys + (h_out - 1) * stride + 1: stride,
                   xs: xs + (w_out - 1) * stride + 1: stride]

    out = np.zeros((n, groups, og, h_out, w_out))
    for ky in range(kh):
        for kx in range(kw):
            out += np.einsum("ngchw,goc->ngohw", patch(xg, ky, kx), wg[:, :, :, ky, kx])
    out = out.reshape(n, cout, h_out, w_out)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gg = g.reshape(n, groups, og, h_out, w_out)
        if bias is not None:
            _accum(bias, g.sum(axis=(0, 2, 3)))
        if weight.requires_grad:
            gw = np.zeros_like(wg)
            for ky in range(kh):
                for kx in range(kw):
                    gw[:, :, :, ky, kx] = np.einsum("ngohw,ngchw->goc", gg, patch(xg, ky, kx))
            _accum(weight, gw.reshape(weight.data.shape))
        if x.requires_grad:
            gxp = np.zeros_like(xg)
            for ky in range(kh):
                for kx in range(kw):
                    ys = ky * dilation
                    xs = kx * dilation
                    gxp[:, :, :, ys: ys + (h_out - 1) * stride + 1: stride,
                        xs: xs + (w_out - 1) * stride + 1: stride] += np.einsum(
                            "ngohw,goc->ngchw", gg, wg[:, :, :, ky, kx])
            gx = gxp.reshape(xp.shape)
            if padding:
                gx = gx[:, :, padding:-padding or None, padding:-padding or None]
            _accum(x, gx)

    return _make(out, inputs, bw)


def _axis_coords(src: int, dst: int):
    # Half-pixel centers clamped to the valid range; exact on constants
    # because the blend below is evaluated in lerp form.
    pos = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0.0, float(src - 1))
    i0 = np.floor(pos).astype(np.int64)
    np.minimum(i0, src - 1, out=i0)
    frac = pos - i0
    i1 = np.minimum(i0 + 1, src - 1)
    return i0, i1, frac


def resize_bilinear(x, scale: float | None = None, out_hw: tuple[int, int] | None = None) -> Tensor:
    """Bilinear resize of an N,C,H,W map; give either a scale or explicit extents.

    With a scale the target extent is round-half-up of extent*scale. Source
    coordinates use half-pixel centers, edge-clamped; blending is done as
    v0 + t*(v1 - v0) per axis so constant inputs reproduce exactly.
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise ValueError(f"resize_bilinear expects N,C,H,W input, got {x.shape}")
    n, c, h, w = x.shape
    if out_hw is not None:
        h_out, w_out = out_hw
    else:
        if scale is None or scale <= 0:
            raise ValueError(f"scale must be positive, got {scale}")
        h_out = int(math_floor_half_up(h * scale))
        w_out = int(math_floor_half_up(w * scale))
    if h_out < 1 or w_out < 1:
        raise ValueError(f"resize target {h_out}x{w_out} has a zero extent")

    y0, y1, ty = _axis_coords(h, h_out)
    x0, x1, tx = _axis_coords(w, w_out)
    tyb = ty[None, None, :, None]
    txb = tx[None, None, None, :]

    rows_a = x.data[:, :, y0, :]
    rows_b = x.data[:, :, y1, :]
    rows = rows_a + tyb * (rows_b - rows_a)          # [N,C,Hout,W]
    cols_a = rows[:, :, :, x0]
    cols_b = rows[:, :, :, x1]
    out = cols_a + txb * (cols_b - cols_a)           # [N,C,Hout,Wout]

    def bw(g):
        g_rows = np.zeros((n, c, h_out, w), dtype=np.float64)
        np.add.at(g_rows, (slice(None), slice(None), slice(None), x0), g * (1.0 - txb))
        np.add.at(g_rows, (slice(None), slice(None), slice(None), x1), g * txb)
        gx = np.zeros((n, c, h, w), dtype=np.float64)
        np.add.at(gx, (slice(None), slice(None), y0), g_rows * (1.0 - tyb))
        np.add.at(gx, (slice(None), slice(None), y1), g_rows * tyb)
        _accum(x, gx)

    return _make(out, (x,), bw)


def math_floor_half_up(v: float) -> int:
    return int(np.floor(v + 0.5))


def _std_backward(centered, std, g_std, count):
    # d std / d x = (x - mean) / (count * std); subgradient 0 at zero spread.
    scale = np.zeros_like(std)
    np.divide(g_std, count * std, out=scale, where=std > 0)
    return centered * np.expand_dims(scale, -1)


def pool_stats_spatial(x) -> Tensor:
    """Per-channel mean, max and population std over H*W, concatenated to [N, 3C].

    The max gradient routes to the first flat position attaining the maximum;
    the std gradient at zero spread is defined as 0.
    """
    x = as_tensor(x)
    n, c, h, w = x.shape
    flat = x.data.reshape(n, c, h * w)
    mean = flat.mean(axis=2)
    amax = flat.max(axis=2)
    std = np.sqrt(flat.var(axis=2))
    out = np.concatenate([mean, amax, std], axis=1)

    def bw(g):
        g_mean, g_max, g_std = g[:, :c], g[:, c:2 * c], g[:, 2 * c:]
        gx = np.broadcast_to((g_mean / (h * w))[:, :, None], flat.shape).copy()
        arg = flat.argmax(axis=2)
        max_part = np.zeros_like(flat)
        np.put_along_axis(max_part, arg[:, :, None], g_max[:, :, None], axis=2)
        gx += max_part
        gx += _std_backward(flat - mean[:, :, None], std, g_std, h * w)
        _accum(x, gx.reshape(n, c, h, w))

    return _make(out, (x,), bw)


def pool_stats_channel(x) -> Tensor:
    """Per-position mean, max and population std across channels: [N, 3, H, W]."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    moved = np.ascontiguousarray(np.moveaxis(x.data, 1, 3))   # [N,H,W,C]
    mean = moved.mean(axis=3)
    amax = moved.max(axis=3)
    std = np.sqrt(moved.var(axis=3))
    out = np.stack([mean, amax, std], axis=1)                 # [N,3,H,W]

    def bw(g):
        g_mean, g_max, g_std = g[:, 0], g[:, 1], g[:, 2]
        gm = np.broadcast_to((g_mean / c)[:, :, :, None], moved.shape).copy()
        arg = moved.argmax(axis=3)
        max_part = np.zeros_like(moved)
        np.put_along_axis(max_part, arg[:, :, :, None], g_max[:, :, :, None], axis=3)
        gm += max_part
        gm += _std_backward(moved - mean[:, :, :, None], std, g_std, c)
        _accum(x, np.moveaxis(gm, 3, 1))

    return _make(out, (x,), bw)
