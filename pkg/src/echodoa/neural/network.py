"""From-scratch convolutional regression network.

Five same-padded 2-D convolution stages (kernels span the full
sensor/IQ row axis), max pooling that collapses the row dimension to 1,
two ReLU dense layers, and a single tanh output unit bounded to
(-1, 1). Forward and reverse passes are exact closed-form numpy; no
autograd framework is involved.

Internally activations live in (rows, batch, time, maps) layout so the
row-sliced GEMMs of the convolutions operate on contiguous memory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import InputError, ShapeMismatchError


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture of the DoA regression network.

    The pooling schedule is derived: every stage halves time; the row
    axis is halved while it still has more than one row (two 2x2 pools
    followed by 1x2 pools for the default four-row input).
    """

    input_rows: int = 4
    input_time: int = 512
    conv_stages: int = 5
    feature_maps: int = 64
    kernel_rows: int = 4
    kernel_time: int = 16
    dense_widths: tuple = (128, 32)

    def __post_init__(self):
        for name in ("input_rows", "input_time", "conv_stages",
                     "feature_maps", "kernel_rows", "kernel_time"):
            if getattr(self, name) < 1:
                raise InputError(f"{name} must be at least 1")
        if len(self.dense_widths) != 2 or any(w < 1 for w in self.dense_widths):
            raise InputError("dense_widths must be two positive integers")
        rows, time = self.input_rows, self.input_time
        for pr, pt in self.pool_schedule():
            if rows % pr or time % pt:
                raise ShapeMismatchError(
                    f"pool {pr}x{pt} does not divide activation {rows}x{time}")
            rows //= pr
            time //= pt
        if rows != 1:
            raise ShapeMismatchError(
                f"row axis must reduce to 1 after pooling, got {rows}")
        object.__setattr__(self, "dense_widths", tuple(self.dense_widths))

    def pool_schedule(self) -> list:
        """(row, time) pool factors per stage."""
        schedule = []
        rows = self.input_rows
        for _ in range(self.conv_stages):
            pr = 2 if rows >= 2 else 1
            schedule.append((pr, 2))
            rows //= pr
        return schedule

    @property
    def flattened_size(self) -> int:
        time = self.input_time
        for _, pt in self.pool_schedule():
            time //= pt
        return self.feature_maps * time

    def param_shapes(self) -> dict:
        """Parameter names and shapes in declaration order."""
        kr, kt, maps = self.kernel_rows, self.kernel_time, self.feature_maps
        shapes = {}
        in_maps = 1
        for s in range(1, self.conv_stages + 1):
            shapes[f"conv{s}_w"] = (kr, kt, in_maps, maps)
            shapes[f"conv{s}_b"] = (maps,)
            in_maps = maps
        widths = (self.flattened_size, *self.dense_widths, 1)
        names = ("dense1", "dense2", "output")
        for name, w_in, w_out in zip(names, widths, widths[1:]):
            shapes[f"{name}_w"] = (w_in, w_out)
            shapes[f"{name}_b"] = (w_out,)
        return shapes


def init_params(spec: NetworkSpec, seed: int,
                dtype=np.float32) -> dict:
    """Fan-in-scaled uniform initialization, deterministic per seed."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in spec.param_shapes().items():
        if name.endswith("_b"):
            params[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = int(np.prod(shape[:-1]))
        limit = np.sqrt(6.0 / fan_in)
        params[name] = rng.uniform(-limit, limit, shape).astype(dtype)
    return params


def _same_pads(k: int) -> tuple:
    return ((k - 1) // 2, k // 2)


def _conv_same(x, w, pad_r, pad_t):
    """Same-size 2-D convolution; returns output and the column buffer.

    ``x`` is (R, B, T, C) and ``w`` is (kr, kt, C, F). Row offsets whose
    taps land entirely in padding are skipped; time padding is explicit.
    The column buffer is reused by the weight-gradient pass.
    """
    kr, kt, c_in, f_out = w.shape
    r_dim, b_dim, t_dim, _ = x.shape
    xpt = np.pad(x, ((0, 0), (0, 0), pad_t, (0, 0)))
    win = sliding_window_view(xpt, kt, axis=2)               # (R,B,T,C,kt)
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 3))
    cols = cols.reshape(r_dim, b_dim, t_dim, kt * c_in)
    wm = w.reshape(kr, kt * c_in, f_out)
    y = np.zeros((r_dim, b_dim, t_dim, f_out), dtype=x.dtype)
    for dr in range(kr):
        r_lo = max(0, pad_r[0] - dr)
        r_hi = min(r_dim, r_dim + pad_r[0] - dr)
        if r_lo >= r_hi:
            continue
        i_lo = r_lo + dr - pad_r[0]
        rows = r_hi - r_lo
        xs = cols[i_lo:i_lo + rows].reshape(rows * b_dim * t_dim, kt * c_in)
        y[r_lo:r_hi] += (xs @ wm[dr]).reshape(rows, b_dim, t_dim, f_out)
    return y, cols


def _conv_same_grads(dy, w, cols, pad_r, pad_t, need_dx):
    """Gradients of _conv_same w.r.t. weights, bias, and (optionally) input."""
    kr, kt, c_in, f_out = w.shape
    r_dim, b_dim, t_dim, _ = dy.shape
    dwm = np.zeros((kr, kt * c_in, f_out), dtype=dy.dtype)
    db = dy.sum(axis=(0, 1, 2))
    for dr in range(kr):
        r_lo = max(0, pad_r[0] - dr)
        r_hi = min(r_dim, r_dim + pad_r[0] - dr)
        if r_lo >= r_hi:
            continue
        i_lo = r_lo + dr - pad_r[0]
        rows = r_hi - r_lo
        xs = cols[i_lo:i_lo + rows].reshape(rows * b_dim * t_dim, kt * c_in)
        gy = dy[r_lo:r_hi].reshape(rows * b_dim * t_dim, f_out)
        dwm[dr] = xs.T @ gy
    dw = dwm.reshape(kr, kt, c_in, f_out)
    dx = None
    if need_dx:
        # input gradient is a convolution with the space-flipped,
        # channel-transposed kernel and mirrored padding
        wflip = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2))
        dx, _ = _conv_same(dy, wflip, (pad_r[1], pad_r[0]),
                           (pad_t[1], pad_t[0]))
    return dw, db, dx


def _maxpool(x, pr, pt):
    r_dim, b_dim, t_dim, c_dim = x.shape
    rp, tp = r_dim // pr, t_dim // pt
    windows = (x.reshape(rp, pr, b_dim, tp, pt, c_dim)
               .transpose(0, 2, 3, 5, 1, 4)
               .reshape(rp, b_dim, tp, c_dim, pr * pt))
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    return out, arg


def _maxpool_grad(dy, arg, in_shape, pr, pt):
    r_dim, b_dim, t_dim, c_dim = in_shape
    rp, tp = r_dim // pr, t_dim // pt
    dwin = np.zeros((rp, b_dim, tp, c_dim, pr * pt), dtype=dy.dtype)
    np.put_along_axis(dwin, arg[..., None], dy[..., None], axis=-1)
    return (dwin.reshape(rp, b_dim, tp, c_dim, pr, pt)
            .transpose(0, 4, 1, 2, 5, 3)
            .reshape(r_dim, b_dim, t_dim, c_dim))


def _check_input(spec, x):
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[1:] != (spec.input_rows, spec.input_time):
        raise ShapeMismatchError(
            f"input must be (batch, {spec.input_rows}, {spec.input_time}), "
            f"got {x.shape}")
    return x


def _check_params(spec, params):
    for name, shape in spec.param_shapes().items():
        if name not in params:
            raise ShapeMismatchError(f"missing parameter {name}")
        if params[name].shape != shape:
            raise ShapeMismatchError(
                f"{name} has shape {params[name].shape}, expected {shape}")


def _forward_impl(spec, params, x, keep):
    dtype = params["conv1_w"].dtype
    act = np.ascontiguousarray(
        x.astype(dtype, copy=False).transpose(1, 0, 2))[..., None]
    pad_r = _same_pads(spec.kernel_rows)
    pad_t = _same_pads(spec.kernel_time)
    stages = []
    for s, (pr, pt) in enumerate(spec.pool_schedule(), start=1):
        conv, cols = _conv_same(act, params[f"conv{s}_w"], pad_r, pad_t)
        conv += params[f"conv{s}_b"]
        relu = np.maximum(conv, 0.0)
        pooled, arg = _maxpool(relu, pr, pt)
        stages.append({"cols": cols, "relu": relu, "arg": arg,
                       "pre_pool_shape": relu.shape} if keep else None)
        act = pooled

    flat = act[0].reshape(act.shape[1], -1)
    z1 = flat @ params["dense1_w"] + params["dense1_b"]
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ params["dense2_w"] + params["dense2_b"]
    a2 = np.maximum(z2, 0.0)
    z3 = a2 @ params["output_w"] + params["output_b"]
    bound = np.nextafter(dtype.type(1.0), dtype.type(0.0))
    pred = np.clip(np.tanh(z3[:, 0]), -bound, bound)
    cache = {"stages": stages, "flat": flat, "a1": a1, "a2": a2,
             "flat_shape": act.shape} if keep else None
    return pred, cache


def forward(spec: NetworkSpec, params: dict, x) -> np.ndarray:
    """Predictions in (-1, 1) for a batch of (rows, time) inputs."""
    x = _check_input(spec, x)
    _check_params(spec, params)
    pred, _ = _forward_impl(spec, params, x, keep=False)
    return pred


def backward(spec: NetworkSpec, params: dict, x, labels):
    """Mean-squared-error loss and exact gradients for every parameter.

    ``labels`` are normalized targets in [-1, 1]. Gradient arrays
    mirror the parameter shapes one to one.
    """
    x = _check_input(spec, x)
    _check_params(spec, params)
    labels = np.asarray(labels)
    if labels.shape != (x.shape[0],):
        raise ShapeMismatchError(
            f"labels must be ({x.shape[0]},), got {labels.shape}")
    if np.any(np.abs(labels) > 1.0):
        raise InputError("labels must lie in [-1, 1]")

    dtype = params["conv1_w"].dtype
    labels = labels.astype(dtype, copy=False)
    pred, cache = _forward_impl(spec, params, x, keep=True)
    batch = x.shape[0]
    residual = pred - labels
    loss = float(np.mean(residual ** 2))

    grads = {}
    dpred = (2.0 / batch) * residual
    dz3 = (dpred * (1.0 - pred ** 2))[:, None].astype(dtype)
    a2, a1, flat = cache["a2"], cache["a1"], cache["flat"]
    grads["output_w"] = a2.T @ dz3
    grads["output_b"] = dz3.sum(axis=0)
    dz2 = (dz3 @ params["output_w"].T) * (a2 > 0)
    grads["dense2_w"] = a1.T @ dz2
    grads["dense2_b"] = dz2.sum(axis=0)
    dz1 = (dz2 @ params["dense2_w"].T) * (a1 > 0)
    grads["dense1_w"] = flat.T @ dz1
    grads["dense1_b"] = dz1.sum(axis=0)

    dact = (dz1 @ params["dense1_w"].T).reshape(cache["flat_shape"])
    pad_r = _same_pads(spec.kernel_rows)
    pad_t = _same_pads(spec.kernel_time)
    schedule = spec.pool_schedule()
    for s in range(spec.conv_stages, 0, -1):
        stage = cache["stages"][s - 1]
        pr, pt = schedule[s - 1]
        drelu = _maxpool_grad(dact, stage["arg"], stage["pre_pool_shape"],
                              pr, pt)
        dconv = drelu * (stage["relu"] > 0)
        dw, db, dact = _conv_same_grads(dconv, params[f"conv{s}_w"],
                                        stage["cols"], pad_r, pad_t,
                                        need_dx=s > 1)
        grads[f"conv{s}_w"] = dw
        grads[f"conv{s}_b"] = db
    return loss, grads
