"""Network assembly and whole-model forward/backward plumbing.

The architecture is a fixed family: a stack of (conv -> batch norm -> ReLU
-> 2x2 max pool) stages, then flatten, dropout, one hidden dense layer with
ReLU, and a full-precision linear output layer. Convolutions and the hidden
dense layer are the "discrete slots": depending on the mode they hold
full-precision weights, Gaussian-propagated ternary/binary distributions,
or Gumbel-relaxed ternary distributions over the same logits.

Biases are omitted everywhere except the output layer; each conv is
followed by batch norm, which absorbs any shift.
"""

import dataclasses

import numpy as np

from .config import NetworkConfig
from .dist import InitConfig, init_from_pretrained, normalize_pretrained
from .errors import ConfigError, TopologyError
from .gumbel import GumbelConv, GumbelDense
from .layers import (
    VAR_FLOOR,
    BatchNorm,
    Dropout,
    Flatten,
    FpConv,
    FpDense,
    LrConv,
    LrDense,
    MaxPool2,
    Relu,
)

STOCHASTIC_TYPES = (LrDense, LrConv, GumbelDense, GumbelConv)


def he_init(rng, shape, fan_in):
    return rng.normal(shape) * np.sqrt(2.0 / fan_in)


def stage_sizes(cfg):
    """Spatial size after each conv/pool stage; raises if it collapses."""
    c, h, w = cfg.input_shape
    sizes = []
    for ch in cfg.conv_channels:
        h = h - cfg.conv_kernel + 1
        w = w - cfg.conv_kernel + 1
        if h <= 0 or w <= 0:
            raise TopologyError(
                f"kernel {cfg.conv_kernel} does not fit the {cfg.input_shape} input"
            )
        h //= 2
        w //= 2
        if h == 0 or w == 0:
            raise TopologyError("pooling shrank a feature map to nothing")
        sizes.append((ch, h, w))
    return sizes


class Network:
    """Ordered layers with names, one loss-free forward/backward pair."""

    def __init__(self, names, layers, mode, net_cfg):
        self.names = list(names)
        self.layers = list(layers)
        self.mode = mode
        self.net_cfg = net_cfg

    def slots(self):
        """(name, layer) for every discrete slot, in forward order."""
        out = []
        for name, layer in zip(self.names, self.layers):
            if self.mode == "fp":
                if isinstance(layer, (FpConv, FpDense)) and name != "out":
                    out.append((name, layer))
            elif isinstance(layer, STOCHASTIC_TYPES):
                out.append((name, layer))
        return out

    def dists(self):
        return [layer.dist for _, layer in self.slots()]

    def forward(self, x, train=False, rngs=None, weight_mode="lr", fixed_weights=None):
        rngs = rngs or {}
        h = x
        slot = 0
        for name, layer in zip(self.names, self.layers):
            if isinstance(layer, STOCHASTIC_TYPES):
                if weight_mode == "lr":
                    stream = "gumbel" if isinstance(layer, (GumbelDense, GumbelConv)) else "noise"
                    h = layer.forward(h, rngs[stream], mode="train" if train else "diagnose")
                elif weight_mode == "mean":
                    h = layer.forward_mean(h)
                elif weight_mode == "fixed":
                    h = layer.forward_fixed(h, fixed_weights[slot])
                else:
                    raise ConfigError(f"unknown weight_mode {weight_mode!r}")
                slot += 1
            elif isinstance(layer, Dropout):
                h = layer.forward(h, rng=rngs.get("dropout"), train=train)
            else:
                h = layer.forward(h, train=train)
        return h

    def backward(self, dlogits):
        d = dlogits
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return d

    def zero_grads(self):
        for layer in self.layers:
            if hasattr(layer, "zero_grads"):
                layer.zero_grads()

    def param_entries(self):
        """(path, param, grad, decay) per trainable tensor, forward order."""
        entries = []
        for name, layer in zip(self.names, self.layers):
            if not hasattr(layer, "params"):
                continue
            grads = layer.grads()
            for pname, param in layer.params().items():
                path = f"{name}.{pname}"
                decay = name == "out" and pname == "weight"
                entries.append((path, param, grads[pname], decay))
        return entries

    def entropies(self):
        """Mean per-weight entropy (bits) of every discrete slot."""
        return [float(layer.dist.entropy_bits().mean()) for _, layer in self.slots()]

    def state_items(self):
        """(path, array) for everything a checkpoint must capture."""
        items = []
        for name, layer in zip(self.names, self.layers):
            if hasattr(layer, "params"):
                for pname, param in layer.params().items():
                    items.append((f"{name}.{pname}", param))
            if isinstance(layer, BatchNorm):
                for sname, arr in layer.running_state().items():
                    items.append((f"{name}.{sname}", arr))
        return items

    def load_state(self, arrays):
        expected = self.state_items()
        paths = {path for path, _ in expected}
        extra = set(arrays) - paths
        if extra:
            raise TopologyError(f"unexpected state entries: {sorted(extra)}")
        for path, target in expected:
            if path not in arrays:
                raise TopologyError(f"missing state entry {path}")
            src = arrays[path]
            if tuple(src.shape) != tuple(target.shape):
                raise TopologyError(
                    f"{path}: shape {src.shape} does not match {target.shape}"
                )
            np.copyto(target, src)


def _make_slot(kind, w0, mode, init_cfg, tau, var_floor, stride=1, pad=0):
    if mode == "fp":
        return FpConv(w0, stride=stride, pad=pad) if kind == "conv" else FpDense(w0)
    dist_mode = "binary" if mode == "binary" else "ternary"
    cfg = InitConfig(p_min=init_cfg.p_min, p_max=init_cfg.p_max, mode=dist_mode)
    dist = init_from_pretrained(normalize_pretrained(w0), cfg)
    if mode == "gumbel":
        if kind == "conv":
            return GumbelConv(dist, tau=tau, stride=stride, pad=pad)
        return GumbelDense(dist, tau=tau)
    if kind == "conv":
        return LrConv(dist, stride=stride, pad=pad, var_floor=var_floor)
    return LrDense(dist, var_floor=var_floor)


def build_network(net_cfg, mode, rng, tau=0.1, var_floor=VAR_FLOOR,
                  p_min=0.05, p_max=0.95):
    """Fresh network; discrete slots start from scaled random weights.

    The rng drives the weight draws, so a fixed seed pins the whole
    initialization; stochastic modes reuse the exact full-precision draw
    a mode="fp" build with the same rng state would produce.
    """
    if mode not in ("fp", "ternary", "binary", "gumbel"):
        raise ConfigError(f"unknown mode {mode!r}")
    init_cfg = InitConfig(p_min=p_min, p_max=p_max)
    sizes = stage_sizes(net_cfg)
    names, layers = [], []
    in_ch = net_cfg.input_shape[0]
    k = net_cfg.conv_kernel
    for i, ch in enumerate(net_cfg.conv_channels):
        w0 = he_init(rng, (ch, in_ch, k, k), fan_in=in_ch * k * k)
        names += [f"conv{i}", f"bn{i}", f"relu{i}", f"pool{i}"]
        layers += [
            _make_slot("conv", w0, mode, init_cfg, tau, var_floor),
            BatchNorm(ch),
            Relu(),
            MaxPool2(),
        ]
        in_ch = ch
    flat = int(np.prod(sizes[-1]))
    names += ["flatten", "dropout"]
    layers += [Flatten(), Dropout(net_cfg.dropout_rate)]
    w0 = he_init(rng, (net_cfg.fc_units, flat), fan_in=flat)
    names += ["fc", "relu_fc"]
    layers += [_make_slot("dense", w0, mode, init_cfg, tau, var_floor), Relu()]
    w_out = he_init(rng, (net_cfg.num_classes, net_cfg.fc_units), fan_in=net_cfg.fc_units)
    names.append("out")
    layers.append(FpDense(w_out, bias=np.zeros(net_cfg.num_classes)))
    return Network(names, layers, mode, net_cfg)


def network_from_pretrained(fp_net, mode, tau=0.1, var_floor=VAR_FLOOR,
                            p_min=0.05, p_max=0.95, dropout_rate=None):
    """Convert a trained full-precision network into a discrete-slot one.

    Slot weights are normalized to unit spread and mean-matched into
    ternary/binary distributions; batch-norm parameters, running
    statistics and the output layer transfer unchanged. Dropout is a
    property of the new training run, not of the transferred weights,
    so dropout_rate (when given) replaces the source network's rate.
    """
    if fp_net.mode != "fp":
        raise ConfigError("pretrained source must be a full-precision network")
    if mode not in ("ternary", "binary", "gumbel"):
        raise ConfigError(f"cannot initialize mode {mode!r} from pretrained weights")
    init_cfg = InitConfig(p_min=p_min, p_max=p_max)
    net_cfg = fp_net.net_cfg
    if dropout_rate is not None and dropout_rate != net_cfg.dropout_rate:
        net_cfg = dataclasses.replace(net_cfg, dropout_rate=dropout_rate)
    names, layers = [], []
    for name, layer in zip(fp_net.names, fp_net.layers):
        names.append(name)
        if isinstance(layer, FpConv):
            layers.append(_make_slot("conv", layer.weight.copy(), mode, init_cfg,
                                     tau, var_floor, stride=layer.stride, pad=layer.pad))
        elif isinstance(layer, FpDense) and name != "out":
            layers.append(_make_slot("dense", layer.weight.copy(), mode, init_cfg,
                                     tau, var_floor))
        elif isinstance(layer, FpDense):
            layers.append(FpDense(layer.weight.copy(), bias=layer.bias.copy()))
        elif isinstance(layer, BatchNorm):
            bn = BatchNorm(layer.gamma.size, momentum=layer.momentum, eps=layer.eps)
            bn.gamma = layer.gamma.copy()
            bn.beta = layer.beta.copy()
            bn.running_mean = layer.running_mean.copy()
            bn.running_var = layer.running_var.copy()
            layers.append(bn)
        elif isinstance(layer, Dropout):
            layers.append(Dropout(net_cfg.dropout_rate))
        else:
            layers.append(type(layer)())
    return Network(names, layers, mode, net_cfg)
