"""The three-branch pair classifier and its checkpoint format.

Two shared-weight 3D-conv branches embed the head crop sequences, a 2D-conv
branch (or optionally a small dense branch on the geometry tuple) embeds the
pair's relative position, and a fusion block turns the concatenated
embeddings into (p_not_laeo, p_laeo).

Convolutions use TensorFlow-style "same" padding (asymmetric, extra pixel on
the high side) except the last head-pose stage, whose 6x6 kernel on an 8x8
grid runs unpadded as near-global spatial pooling.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .core import PoseAngles, TrackPairSample, normalize_crop

PARAM_GROUPS = ("head_pose", "head_map", "geometry", "fusion")

# (filters, kernel (h, w, t), stride (h, w, t)) per 3D conv stage.
HEAD_POSE_LAYERS = (
    (16, (5, 5, 3), (2, 2, 1)),
    (24, (3, 3, 3), (2, 2, 1)),
    (32, (3, 3, 3), (2, 2, 1)),
    (12, (6, 6, 1), (1, 1, 1)),
)
# (filters, kernel (h, w), stride (h, w)) per 2D conv stage.
HEAD_MAP_LAYERS = (
    (8, (5, 5), (2, 2)),
    (16, (3, 3), (2, 2)),
    (24, (3, 3), (2, 2)),
    (16, (3, 3), (4, 4)),
)


class DigestMismatchError(RuntimeError):
    """Checkpoint was produced under a different architecture config."""


@dataclass(frozen=True)
class LaeoNetConfig:
    """Architecture hyperparameters.

    Attributes:
        num_frames: Crop-sequence length per head (K).
        head_pose_layers: 3D conv stages of the head branches.
        head_pose_paddings: "same" or "valid" per head-pose stage.
        head_map_layers: 2D conv stages of the position-map branch.
        fusion_hidden_units: Width of the fully-connected fusion stage.
        dropout_rate: Dropout after each branch's last conv and after the
            fusion hidden stage.
        use_geometry_branch: Replace the map branch with the dense geometry
            branch as the context input.
        geometry_hidden: Unit counts of the two geometry stages.
        shared_head_pose: Apply one head branch to both crop sequences
            (pretrained once); set False to give each side its own weights.
    """

    num_frames: int = 10
    head_pose_layers: tuple = HEAD_POSE_LAYERS
    head_pose_paddings: tuple = ("same", "same", "same", "valid")
    head_map_layers: tuple = HEAD_MAP_LAYERS
    head_map_paddings: tuple = ("same", "same", "same", "same")
    fusion_hidden_units: int = 128
    dropout_rate: float = 0.5
    use_geometry_branch: bool = False
    geometry_hidden: tuple = (64, 16)
    shared_head_pose: bool = True

    def __post_init__(self):
        if self.num_frames < 1:
            raise ValueError("num_frames must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if len(self.head_pose_layers) != len(self.head_pose_paddings):
            raise ValueError("one padding mode per head-pose stage")
        if len(self.head_map_layers) != len(self.head_map_paddings):
            raise ValueError("one padding mode per head-map stage")

    def head_pose_output_shape(self) -> tuple[int, int, int, int]:
        """(channels, frames, height, width) after the last head-pose conv."""
        h = w = 64
        t = self.num_frames
        channels = 3
        for (filters, kernel, stride), padding in zip(self.head_pose_layers, self.head_pose_paddings):
            h = _conv_out(h, kernel[0], stride[0], padding)
            w = _conv_out(w, kernel[1], stride[1], padding)
            t = _conv_out(t, kernel[2], stride[2], padding)
            channels = filters
        return channels, t, h, w

    def head_map_output_shape(self) -> tuple[int, int, int]:
        h = w = 64
        channels = 3
        for (filters, kernel, stride), padding in zip(self.head_map_layers, self.head_map_paddings):
            h = _conv_out(h, kernel[0], stride[0], padding)
            w = _conv_out(w, kernel[1], stride[1], padding)
            channels = filters
        return channels, h, w

    @property
    def head_pose_embedding_dim(self) -> int:
        return int(np.prod(self.head_pose_output_shape()))

    @property
    def head_map_embedding_dim(self) -> int:
        return int(np.prod(self.head_map_output_shape()))

    @property
    def context_dim(self) -> int:
        if self.use_geometry_branch:
            return self.geometry_hidden[-1]
        return self.head_map_embedding_dim

    @property
    def fusion_input_dim(self) -> int:
        return 2 * self.head_pose_embedding_dim + self.context_dim


def config_digest(config: LaeoNetConfig) -> str:
    """Stable hash of the architecture; checkpoints refuse to load under a
    different digest."""
    payload = json.dumps(asdict(config), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def config_from_dict(data: Mapping) -> LaeoNetConfig:
    def tupled(v):
        if isinstance(v, list):
            return tuple(tupled(x) for x in v)
        return v

    return LaeoNetConfig(**{k: tupled(v) for k, v in dict(data).items()})


def _conv_out(size: int, kernel: int, stride: int, padding: str) -> int:
    if padding == "same":
        return math.ceil(size / stride)
    if padding == "valid":
        return (size - kernel) // stride + 1
    raise ValueError(f"unknown padding mode {padding!r}")


def _same_pad_amount(size: int, kernel: int, stride: int) -> tuple[int, int]:
    out = math.ceil(size / stride)
    total = max(0, (out - 1) * stride + kernel - size)
    return total // 2, total - total // 2


def _l2_normalize(x: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    return x / (x.norm(dim=1, keepdim=True) + eps)


class HeadPoseBranch(nn.Module):
    """3D conv stack over one head's crop sequence; emits a unit-norm vector."""

    def __init__(self, config: LaeoNetConfig):
        super().__init__()
        self.convs = nn.ModuleList()
        self._pads = []
        in_channels = 3
        h = w = 64
        t = config.num_frames
        for (filters, kernel, stride), padding in zip(config.head_pose_layers, config.head_pose_paddings):
            kh, kw, kt = kernel
            sh, sw, st = stride
            if padding == "same":
                ph = _same_pad_amount(h, kh, sh)
                pw = _same_pad_amount(w, kw, sw)
                pt = _same_pad_amount(t, kt, st)
                # F.pad order for (N, C, D, H, W): W, H, then D.
                self._pads.append((pw[0], pw[1], ph[0], ph[1], pt[0], pt[1]))
            else:
                self._pads.append(None)
            self.convs.append(nn.Conv3d(in_channels, filters, (kt, kh, kw), stride=(st, sh, sw)))
            h = _conv_out(h, kh, sh, padding)
            w = _conv_out(w, kw, sw, padding)
            t = _conv_out(t, kt, st, padding)
            in_channels = filters
        self.dropout = nn.Dropout(config.dropout_rate)

    def forward(self, crops: torch.Tensor) -> torch.Tensor:
        """crops: (B, 3, K, 64, 64) in [-1, 1] -> (B, D_hp) unit-norm."""
        x = crops
        for pad, conv in zip(self._pads, self.convs):
            if pad is not None:
                x = F.pad(x, pad)
            x = F.relu(conv(x))
        x = self.dropout(x)
        return _l2_normalize(x.flatten(1))


class HeadMapBranch(nn.Module):
    """2D conv stack over the rendered position map; emits a unit-norm vector."""

    def __init__(self, config: LaeoNetConfig):
        super().__init__()
        self.convs = nn.ModuleList()
        self._pads = []
        in_channels = 3
        h = w = 64
        for (filters, kernel, stride), padding in zip(config.head_map_layers, config.head_map_paddings):
            kh, kw = kernel
            sh, sw = stride
            if padding == "same":
                ph = _same_pad_amount(h, kh, sh)
                pw = _same_pad_amount(w, kw, sw)
                self._pads.append((pw[0], pw[1], ph[0], ph[1]))
            else:
                self._pads.append(None)
            self.convs.append(nn.Conv2d(in_channels, filters, (kh, kw), stride=(sh, sw)))
            h = _conv_out(h, kh, sh, padding)
            w = _conv_out(w, kw, sw, padding)
            in_channels = filters
        self.dropout = nn.Dropout(config.dropout_rate)

    def forward(self, head_map: torch.Tensor) -> torch.Tensor:
        """head_map: (B, 3, 64, 64) in [0, 1] -> (B, D_hm) unit-norm."""
        x = head_map
        for pad, conv in zip(self._pads, self.convs):
            if pad is not None:
                x = F.pad(x, pad)
            x = F.relu(conv(x))
        x = self.dropout(x)
        return _l2_normalize(x.flatten(1))


class GeometryBranch(nn.Module):
    """Two dense stages over the (dx, dy, scale_ratio) tuple."""

    def __init__(self, config: LaeoNetConfig):
        super().__init__()
        units = config.geometry_hidden
        self.fc1 = nn.Linear(3, units[0])
        self.fc2 = nn.Linear(units[0], units[1])

    def forward(self, geometry: torch.Tensor) -> torch.Tensor:
        return F.relu(self.fc2(F.relu(self.fc1(geometry))))


class FusionBlock(nn.Module):
    """Concatenated embeddings -> hidden stage -> two-way softmax."""

    def __init__(self, config: LaeoNetConfig):
        super().__init__()
        self.hidden = nn.Linear(config.fusion_input_dim, config.fusion_hidden_units)
        self.dropout = nn.Dropout(config.dropout_rate)
        self.out = nn.Linear(config.fusion_hidden_units, 2)

    def forward(self, embeddings: torch.Tensor) -> torch.Tensor:
        x = self.dropout(F.relu(self.hidden(embeddings)))
        return self.out(x)


class LaeoNet(nn.Module):
    """Full pair classifier. forward() returns (B, 2) probabilities with
    index 0 = not looking at each other, index 1 = looking at each other."""

    def __init__(self, config: LaeoNetConfig = LaeoNetConfig(), dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config
        self.head_pose = HeadPoseBranch(config)
        self.head_pose_right = None if config.shared_head_pose else HeadPoseBranch(config)
        if config.use_geometry_branch:
            self.geometry = GeometryBranch(config)
            self.head_map = None
        else:
            self.head_map = HeadMapBranch(config)
            self.geometry = None
        self.fusion = FusionBlock(config)
        self.to(dtype)

    def embed_head_sequence(self, crops: torch.Tensor, side: str = "left") -> torch.Tensor:
        branch = self.head_pose
        if side == "right" and self.head_pose_right is not None:
            branch = self.head_pose_right
        return branch(crops)

    def embed_head_map(self, head_map: torch.Tensor) -> torch.Tensor:
        if self.head_map is None:
            raise RuntimeError("model was configured with the geometry branch instead of the map branch")
        return self.head_map(head_map)

    def embed_geometry(self, geometry: torch.Tensor) -> torch.Tensor:
        if self.geometry is None:
            raise RuntimeError("model was configured without the geometry branch")
        return self.geometry(geometry)

    def fuse_and_classify(
        self, e_left: torch.Tensor, e_right: torch.Tensor, e_context: torch.Tensor
    ) -> torch.Tensor:
        expected = self.config.fusion_input_dim
        got = e_left.shape[1] + e_right.shape[1] + e_context.shape[1]
        if got != expected:
            raise ValueError(f"fusion input dim {got}, expected {expected}")
        logits = self.fusion(torch.cat([e_left, e_right, e_context], dim=1))
        return torch.softmax(logits, dim=1)

    def forward(
        self, left_crops: torch.Tensor, right_crops: torch.Tensor, context: torch.Tensor
    ) -> torch.Tensor:
        """context is the (B, 3, 64, 64) head map, or the (B, 3) geometry
        tuple when the geometry branch is configured."""
        e_left = self.embed_head_sequence(left_crops, "left")
        e_right = self.embed_head_sequence(right_crops, "right")
        if self.config.use_geometry_branch:
            e_ctx = self.embed_geometry(context)
        else:
            e_ctx = self.embed_head_map(context)
        return self.fuse_and_classify(e_left, e_right, e_ctx)

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


class PoseRegressor(nn.Module):
    """Head-pose branch plus a linear readout of (yaw, pitch, roll) in
    normalized units; used only to pretrain the branch."""

    def __init__(self, config: LaeoNetConfig = LaeoNetConfig(), dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config
        self.head_pose = HeadPoseBranch(config)
        self.pose_out = nn.Linear(config.head_pose_embedding_dim, 3)
        self.to(dtype)

    def forward(self, crops: torch.Tensor) -> torch.Tensor:
        return self.pose_out(self.head_pose(crops))


def crops_to_tensor(crops: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(K, 64, 64, 3) or (B, K, 64, 64, 3) numpy crops -> (B, 3, K, 64, 64)."""
    arr = np.asarray(crops)
    if arr.ndim == 4:
        arr = arr[None]
    if arr.ndim != 5 or arr.shape[-1] != 3:
        raise ValueError(f"expected (B, K, 64, 64, 3) crops, got {arr.shape}")
    return torch.as_tensor(arr.transpose(0, 4, 1, 2, 3)).to(dtype).contiguous()


def map_to_tensor(head_map: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(64, 64, 3) or (B, 64, 64, 3) numpy map -> (B, 3, 64, 64)."""
    arr = np.asarray(head_map)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ValueError(f"expected (B, 64, 64, 3) map, got {arr.shape}")
    return torch.as_tensor(arr.transpose(0, 3, 1, 2)).to(dtype).contiguous()


def sample_to_tensors(
    samples: Iterable[TrackPairSample], config: LaeoNetConfig, dtype: torch.dtype = torch.float32
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Stack samples into (left, right, context) model inputs, where context
    is the head-map batch or the geometry batch per the config."""
    samples = list(samples)
    left = crops_to_tensor(np.stack([s.left_crops for s in samples]), dtype)
    right = crops_to_tensor(np.stack([s.right_crops for s in samples]), dtype)
    if config.use_geometry_branch:
        context = torch.as_tensor(np.stack([s.geometry.as_array() for s in samples])).to(dtype)
    else:
        context = map_to_tensor(np.stack([s.head_map for s in samples]), dtype)
    return left, right, context


def batch_probabilities(model: LaeoNet, samples: Iterable[TrackPairSample]) -> np.ndarray:
    """Inference-mode positive-class probability per sample."""
    dtype = next(model.parameters()).dtype
    left, right, context = sample_to_tensors(samples, model.config, dtype)
    was_training = model.training
    model.eval()
    with torch.no_grad():
        probs = model(left, right, context)
    if was_training:
        model.train()
    return probs[:, 1].cpu().numpy()


def score_track_pair(sample: TrackPairSample, model: LaeoNet) -> float:
    """Positive-class probability for one sample, dropout disabled."""
    return float(batch_probabilities(model, [sample])[0])


def predict_pose(crops: np.ndarray, model: PoseRegressor) -> PoseAngles:
    """Run the pose readout on one crop sequence.

    uint8 crops are normalized to [-1, 1] first. The linear readout is
    unbounded; outputs are clamped to [-1, 1] normalized units before
    conversion to angles.
    """
    crops = np.asarray(crops)
    if crops.dtype == np.uint8:
        crops = normalize_crop(crops)
    dtype = next(model.parameters()).dtype
    was_training = model.training
    model.eval()
    with torch.no_grad():
        out = model(crops_to_tensor(crops, dtype))[0]
    if was_training:
        model.train()
    return PoseAngles.from_normalized(np.clip(out.cpu().numpy(), -1.0, 1.0))


def parameter_group(param_name: str) -> str:
    """Map a state-dict key to its named group."""
    for group in ("head_pose", "head_map", "geometry", "fusion", "pose_out"):
        if param_name.startswith(group):
            return "head_pose" if group == "pose_out" else group
    raise KeyError(f"parameter {param_name!r} belongs to no known group")


def freeze_groups(model: nn.Module, groups: Iterable[str]) -> None:
    """Disable gradients for every parameter in the given groups."""
    groups = set(groups)
    unknown = groups - set(PARAM_GROUPS)
    if unknown:
        raise ValueError(f"unknown parameter groups {sorted(unknown)}")
    for name, param in model.named_parameters():
        if parameter_group(name) in groups:
            param.requires_grad_(False)


def frozen_groups(model: nn.Module) -> set[str]:
    out = set()
    for name, param in model.named_parameters():
        if not param.requires_grad:
            out.add(parameter_group(name))
    return out


def snapshot_parameters(model: nn.Module, groups: Iterable[str] | None = None) -> dict[str, np.ndarray]:
    """Copy (a subset of) the parameters out to numpy, for bit-exact
    before/after comparisons."""
    wanted = set(groups) if groups is not None else None
    out = {}
    for name, param in model.named_parameters():
        if wanted is None or parameter_group(name) in wanted:
            out[name] = param.detach().cpu().numpy().copy()
    return out


CHECKPOINT_VERSION = 1


def save_checkpoint(path, model: nn.Module, extra: Mapping | None = None) -> None:
    """Write a versioned checkpoint: architecture digest plus named arrays."""
    if not isinstance(model, (LaeoNet, PoseRegressor)):
        raise TypeError(f"cannot checkpoint a {type(model).__name__}")
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "kind": "laeo_net" if isinstance(model, LaeoNet) else "pose_regressor",
        "config": asdict(model.config),
        "config_digest": config_digest(model.config),
        "state": {k: v.cpu() for k, v in model.state_dict().items()},
        "frozen_groups": sorted(frozen_groups(model)),
        "extra": dict(extra or {}),
    }
    torch.save(payload, path)


def load_checkpoint(path, expected_config: LaeoNetConfig | None = None) -> dict:
    """Read a checkpoint; reject it when the stored architecture digest
    differs from the expected config's."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise DigestMismatchError(f"unsupported checkpoint version {payload.get('format_version')}")
    stored = config_from_dict(payload["config"])
    if config_digest(stored) != payload["config_digest"]:
        raise DigestMismatchError("checkpoint digest does not match its own stored config")
    if expected_config is not None and config_digest(expected_config) != payload["config_digest"]:
        raise DigestMismatchError(
            "checkpoint was produced under a different architecture config; refusing to load"
        )
    payload["config"] = stored
    return payload


def restore_model(path, expected_config: LaeoNetConfig | None = None, dtype: torch.dtype = torch.float32):
    """Rebuild the checkpointed model (LaeoNet or PoseRegressor)."""
    payload = load_checkpoint(path, expected_config)
    cls = LaeoNet if payload["kind"] == "laeo_net" else PoseRegressor
    model = cls(payload["config"], dtype=dtype)
    model.load_state_dict({k: v.to(dtype) for k, v in payload["state"].items()})
    freeze_groups(model, payload.get("frozen_groups", []))
    return model
