"""Policy container and checkpoint format.

A checkpoint is a little-endian file: u32 manifest length, a JSON manifest
(format version, layer shapes, configuration echo), then the parameters as
one contiguous f32 block in manifest order. Parameters are quantized to f32
at the end of training so save -> load is bit-exact.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..demos import GravkitError
from ..diffusion import SCALED_LINEAR, SQUARED_COS, NoiseSchedule, make_schedule
from ..gravmap import GravMapParams, Workspace
from .nets import DenoiserParams, EncoderParams, param_items

FORMAT_VERSION = 1


@dataclass
class ToyPolicy:
    encoder: EncoderParams
    denoiser: DenoiserParams
    workspace: Workspace = Workspace()
    gravmap_params: GravMapParams = GravMapParams()
    steps: int = 100
    sched_pos_kind: str = SCALED_LINEAR
    sched_rot_kind: str = SQUARED_COS
    meta: dict = field(default_factory=dict)

    _scheds: tuple | None = None

    @classmethod
    def init(cls, seed, **kw):
        rng = np.random.default_rng(seed)
        return cls(encoder=EncoderParams.init(rng), denoiser=DenoiserParams.init(rng), **kw)

    def schedules(self) -> tuple[NoiseSchedule, NoiseSchedule]:
        if self._scheds is None:
            self._scheds = (make_schedule(self.sched_pos_kind, self.steps),
                            make_schedule(self.sched_rot_kind, self.steps))
        return self._scheds

    def params(self):
        return param_items(self.encoder, self.denoiser)

    def quantize(self):
        """Round every parameter to its f32 value (in-place) so that the
        serialized model evaluates identically to the in-memory one."""
        for _, arr in self.params():
            arr[...] = arr.astype("<f4").astype(float)

    def param_bytes(self) -> bytes:
        return b"".join(arr.astype("<f4").tobytes() for _, arr in self.params())


def save_policy(policy: ToyPolicy, path):
    manifest = {
        "format_version": FORMAT_VERSION,
        "steps": policy.steps,
        "sched_pos": policy.sched_pos_kind,
        "sched_rot": policy.sched_rot_kind,
        "workspace": {"min": list(policy.workspace.min), "max": list(policy.workspace.max)},
        "gravmap": {
            "map_size": policy.gravmap_params.map_size,
            "offset_range": policy.gravmap_params.offset_range,
            "gripper_radius": policy.gravmap_params.gripper_radius,
            "downsample": policy.gravmap_params.downsample,
            "num_points": policy.gravmap_params.num_points,
            "sigma_avoid": policy.gravmap_params.sigma_avoid,
            "avoid_clear_frac": policy.gravmap_params.avoid_clear_frac,
            "closed_value": policy.gravmap_params.closed_value,
        },
        "meta": policy.meta,
        "layers": [{"name": name, "shape": list(arr.shape)} for name, arr in policy.params()],
    }
    blob = json.dumps(manifest, separators=(",", ":"), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(policy.param_bytes())


def load_policy(path) -> ToyPolicy:
    with open(path, "rb") as fh:
        raw = fh.read()
    (mlen,) = struct.unpack_from("<I", raw, 0)
    manifest = json.loads(raw[4:4 + mlen].decode("utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise GravkitError(f"unsupported checkpoint version {manifest.get('format_version')}")
    policy = ToyPolicy.init(
        seed=0,
        workspace=Workspace(tuple(manifest["workspace"]["min"]), tuple(manifest["workspace"]["max"])),
        gravmap_params=GravMapParams(**manifest["gravmap"]),
        steps=int(manifest["steps"]),
        sched_pos_kind=manifest["sched_pos"],
        sched_rot_kind=manifest["sched_rot"],
        meta=manifest.get("meta", {}),
    )
    offset = 4 + mlen
    by_name = dict(policy.params())
    for layer in manifest["layers"]:
        arr = by_name[layer["name"]]
        shape = tuple(layer["shape"])
        if arr.shape != shape:
            raise GravkitError(f"layer {layer['name']}: shape {shape} != expected {arr.shape}")
        count = int(np.prod(shape))
        vals = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        arr[...] = vals.astype(float).reshape(shape)
        offset += 4 * count
    if offset != len(raw):
        raise GravkitError("trailing bytes in checkpoint")
    return policy
