"""Binary checkpoints with exact-resume semantics.

Layout:

    magic "LRNETCK1" (8 bytes)
    header length, uint32 little-endian
    header, UTF-8 JSON (sorted keys): format, mode, network topology,
        epoch, optimizer scalars, rng stream states, optional run config,
        and the ordered array manifest (name, shape)
    payload: the manifest's arrays as little-endian float64, in order
    crc32 of everything between the magic and this field, uint32 LE

Everything that affects a later training step is captured - parameters,
batch-norm running statistics, optimizer moments, and the counters of all
random streams - so resuming reproduces the uninterrupted run bit for bit.
"""

import dataclasses
import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .config import NetworkConfig, config_from_dict, config_to_dict
from .errors import CheckpointError, ChecksumError, TopologyError, VersionError
from .network import build_network
from .tensor import Rng, STREAM_INIT

MAGIC = b"LRNETCK1"
FORMAT = 1


def _array_blocks(net, opt):
    blocks = [("net/" + path, arr) for path, arr in net.state_items()]
    for path, param, _, _ in net.param_entries():
        m = opt.m.get(path)
        v = opt.v.get(path)
        blocks.append(("adam_m/" + path, m if m is not None else np.zeros_like(param)))
        blocks.append(("adam_v/" + path, v if v is not None else np.zeros_like(param)))
    return blocks


def save_checkpoint(path, net, opt, rngs, epoch, run_cfg=None):
    blocks = _array_blocks(net, opt)
    header = {
        "format": FORMAT,
        "mode": net.mode,
        "net": dataclasses.asdict(net.net_cfg),
        "epoch": int(epoch),
        "adam": {"t": opt.t, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps},
        "rng": {name: rng.state() for name, rng in sorted(rngs.items())},
        "config": None if run_cfg is None else config_to_dict(run_cfg),
        "arrays": [[name, list(arr.shape)] for name, arr in blocks],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in blocks
    )
    body = struct.pack("<I", len(header_bytes)) + header_bytes + payload
    crc = zlib.crc32(body) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(body)
        fh.write(struct.pack("<I", crc))


@dataclass
class Checkpoint:
    header: dict
    arrays: dict


def load_checkpoint(path):
    """Read and verify a checkpoint file; no network is built yet."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    if len(raw) < len(MAGIC) + 8:
        raise ChecksumError(f"{path}: truncated checkpoint ({len(raw)} bytes)")
    if raw[: len(MAGIC)] != MAGIC:
        raise VersionError(f"{path}: not a recognized checkpoint (bad magic)")
    body, stored = raw[len(MAGIC) : -4], struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != stored:
        raise ChecksumError(f"{path}: checksum mismatch, file is corrupt or truncated")
    (header_len,) = struct.unpack("<I", body[:4])
    if len(body) < 4 + header_len:
        raise ChecksumError(f"{path}: truncated header")
    try:
        header = json.loads(body[4 : 4 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from exc
    if header.get("format") != FORMAT:
        raise VersionError(f"{path}: unsupported format {header.get('format')!r}")
    payload = body[4 + header_len :]
    arrays = {}
    offset = 0
    for name, shape in header["arrays"]:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(payload):
            raise ChecksumError(f"{path}: payload ends inside array {name}")
        arrays[name] = (
            np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
            .astype(np.float64)
            .reshape(shape)
        )
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - offset} trailing payload bytes")
    return Checkpoint(header=header, arrays=arrays)


def _net_cfg_from_header(header):
    fields = dict(header["net"])
    fields["input_shape"] = tuple(fields["input_shape"])
    fields["conv_channels"] = tuple(fields["conv_channels"])
    return NetworkConfig(**fields)


@dataclass
class Restored:
    net: object
    opt: object
    rngs: dict
    epoch: int
    run_cfg: object


def restore_run(path):
    """Rebuild network, optimizer and rng streams from a checkpoint."""
    from .training import Adam  # local import: training depends on this module

    ckpt = load_checkpoint(path)
    header = ckpt.header
    net_cfg = _net_cfg_from_header(header)
    run_cfg = None
    tau, var_floor = 0.1, 1e-10
    p_min, p_max = 0.05, 0.95
    if header.get("config"):
        run_cfg = config_from_dict(header["config"])
        tau = run_cfg.train.gumbel_tau
        var_floor = run_cfg.train.var_floor
        p_min, p_max = run_cfg.train.init_p_min, run_cfg.train.init_p_max
    net = build_network(net_cfg, header["mode"], Rng(0, stream=STREAM_INIT),
                        tau=tau, var_floor=var_floor, p_min=p_min, p_max=p_max)
    state = {}
    moments = {"adam_m": {}, "adam_v": {}}
    for name, arr in ckpt.arrays.items():
        kind, _, rest = name.partition("/")
        if kind == "net":
            state[rest] = arr
        elif kind in moments:
            moments[kind][rest] = arr.copy()
        else:
            raise TopologyError(f"unknown checkpoint array {name!r}")
    net.load_state(state)
    adam = header["adam"]
    opt = Adam(adam["beta1"], adam["beta2"], adam["eps"])
    opt.t = int(adam["t"])
    known = {path for path, _, _, _ in net.param_entries()}
    for kind in moments:
        unknown = set(moments[kind]) - known
        if unknown:
            raise TopologyError(f"optimizer state for unknown parameters: {sorted(unknown)}")
    opt.m = moments["adam_m"]
    opt.v = moments["adam_v"]
    rngs = {name: Rng.from_state(state) for name, state in header["rng"].items()}
    return Restored(net=net, opt=opt, rngs=rngs, epoch=int(header["epoch"]), run_cfg=run_cfg)
