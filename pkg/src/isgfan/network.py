"""Differentiable components: extractors, gradient reversal, heads, decoder."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn


@dataclass(frozen=True)
class ExtractorConfig:
    stage_channels: tuple[int, ...] = (40, 80, 160, 320)
    stage_downsample: tuple[tuple[int, int], ...] = ((4, 4), (2, 2), (2, 2), (2, 2))
    blocks_per_stage: int = 1
    dw_kernel: int = 7
    expansion: int = 4

    def __post_init__(self):
        if len(self.stage_channels) != len(self.stage_downsample):
            raise ValueError("one downsampling pair per stage is required")
        if any(b <= a for a, b in zip(self.stage_channels, self.stage_channels[1:])):
            raise ValueError("stage channels must be strictly increasing")
        if self.total_stride != 32:
            raise ValueError("product of downsampling strides must be 32")
        if self.blocks_per_stage < 1:
            raise ValueError("blocks_per_stage must be >= 1")

    @property
    def total_stride(self) -> int:
        return int(np.prod([s for _, s in self.stage_downsample]))

    @property
    def out_channels(self) -> int:
        return self.stage_channels[-1]

    @classmethod
    def scaled(cls, width: int, **kw) -> "ExtractorConfig":
        """Same stage table with channels ``width, 2w, 4w, 8w``."""
        return cls(stage_channels=(width, 2 * width, 4 * width, 8 * width), **kw)


@dataclass(frozen=True)
class HeadConfig:
    in_dim: int = 320
    hidden_dims: tuple[int, ...] = (160, 80)
    out_dim: int = 10
    activation: str = "gelu"

    def __post_init__(self):
        if self.out_dim < 1:
            raise ValueError("out_dim must be >= 1")


def _activation(name: str) -> nn.Module:
    acts = {"gelu": nn.GELU, "relu": nn.ReLU, "tanh": nn.Tanh}
    if name not in acts:
        raise ValueError(f"unknown activation {name!r}")
    return acts[name]()


# ------------------------------------------------------------ gradient reversal

class _GradReverse(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, coeff):
        ctx.coeff = coeff
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output.neg() * ctx.coeff, None


def grl_apply(x: torch.Tensor, coeff: float = 1.0) -> torch.Tensor:
    if coeff < 0:
        raise ValueError("GRL coefficient must be non-negative")
    return _GradReverse.apply(x, coeff)


class GradientReversal(nn.Module):
    def __init__(self, coeff: float = 1.0):
        super().__init__()
        if coeff < 0:
            raise ValueError("GRL coefficient must be non-negative")
        self.coeff = coeff

    def forward(self, x):
        return grl_apply(x, self.coeff)


# ------------------------------------------------------------ extractor

class ChannelLayerNorm(nn.Module):
    """LayerNorm over the channel axis of a (B, C, L) map."""

    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.norm = nn.LayerNorm(channels, eps=eps)

    def forward(self, x):
        return self.norm(x.transpose(1, 2)).transpose(1, 2)


class GRN(nn.Module):
    """Global response normalization on channels-last (B, L, C) input."""

    def __init__(self, channels: int, eps: float = 1e-6):
        super().__init__()
        self.gamma = nn.Parameter(torch.zeros(1, 1, channels))
        self.beta = nn.Parameter(torch.zeros(1, 1, channels))
        self.eps = eps

    def forward(self, x):
        gx = torch.linalg.vector_norm(x, dim=1, keepdim=True)
        nx = gx / (gx.mean(dim=-1, keepdim=True) + self.eps)
        return self.gamma * (x * nx) + self.beta + x


class Block(nn.Module):
    """dwconv -> LN -> expand -> GELU -> GRN -> compress, plus residual."""

    def __init__(self, channels: int, kernel: int = 7, expansion: int = 4):
        super().__init__()
        self.dwconv = nn.Conv1d(channels, channels, kernel, padding=kernel // 2, groups=channels)
        self.norm = nn.LayerNorm(channels, eps=1e-6)
        self.expand = nn.Linear(channels, expansion * channels)
        self.act = nn.GELU()
        self.grn = GRN(expansion * channels)
        self.compress = nn.Linear(expansion * channels, channels)

    def forward(self, x):
        y = self.dwconv(x).transpose(1, 2)
        y = self.compress(self.grn(self.act(self.expand(self.norm(y)))))
        return x + y.transpose(1, 2)


class FeatureExtractor(nn.Module):
    """Four downsample+blocks stages; used for both the fault-relevant and
    fault-irrelevant branches."""

    def __init__(self, config: ExtractorConfig = ExtractorConfig(), in_channels: int = 1):
        super().__init__()
        self.config = config
        self.stages = nn.ModuleList()
        prev = in_channels
        for i, (ch, (k, s)) in enumerate(zip(config.stage_channels, config.stage_downsample)):
            # stem stays unnormalized: a channel norm over one input channel
            # would erase the local signal energy
            conv = nn.Conv1d(prev, ch, k, stride=s)
            down = nn.Sequential(ChannelLayerNorm(prev), conv) if i else nn.Sequential(conv)
            blocks = [Block(ch, config.dw_kernel, config.expansion) for _ in range(config.blocks_per_stage)]
            self.stages.append(nn.Sequential(down, *blocks))
            prev = ch

    def forward_stages(self, x) -> list[torch.Tensor]:
        if x.dim() != 3:
            raise ValueError("expected input shaped (B, 1, L)")
        if x.shape[-1] % self.config.total_stride:
            raise ValueError("invalid input length")
        maps = []
        for stage in self.stages:
            x = stage(x)
            maps.append(x)
        return maps

    def forward(self, x):
        return self.forward_stages(x)[-1]


def extractor_forward(batch, config: ExtractorConfig, params: "FeatureExtractor | None" = None):
    """Stage maps for ``batch`` (B, 1, L); builds a fresh extractor if none given."""
    model = params if params is not None else FeatureExtractor(config)
    return model.forward_stages(torch.as_tensor(batch, dtype=next(model.parameters()).dtype))


def pool(feature_map: torch.Tensor) -> torch.Tensor:
    """Global average over the length axis: (B, C, L) -> (B, C)."""
    return feature_map.mean(dim=-1)


# ------------------------------------------------------------ heads

class Head(nn.Module):
    """MLP used by the label classifier, label discriminator and global
    domain classifier; returns raw logits."""

    def __init__(self, config: HeadConfig):
        super().__init__()
        self.config = config
        layers, prev = [], config.in_dim
        for h in config.hidden_dims:
            layers += [nn.Linear(prev, h), _activation(config.activation)]
            prev = h
        layers.append(nn.Linear(prev, config.out_dim))
        self.net = nn.Sequential(*layers)

    def forward(self, f):
        if f.dim() != 2 or f.shape[1] != self.config.in_dim:
            raise ValueError(f"expected features shaped (B, {self.config.in_dim}), got {tuple(f.shape)}")
        return self.net(f)


def default_head(in_dim: int, out_dim: int) -> HeadConfig:
    return HeadConfig(in_dim=in_dim, hidden_dims=(in_dim // 2, in_dim // 4), out_dim=out_dim)


class SubdomainClassifiers(nn.Module):
    """One single-layer domain classifier per class."""

    def __init__(self, in_dim: int, num_classes: int):
        super().__init__()
        self.in_dim = in_dim
        self.heads = nn.ModuleList(nn.Linear(in_dim, 1) for _ in range(num_classes))

    def __len__(self):
        return len(self.heads)

    def forward(self, f, c: int):
        return sdc_forward(f, self.heads[c])


def sdc_forward(f: torch.Tensor, layer: nn.Linear) -> torch.Tensor:
    if f.dim() != 2 or f.shape[1] != layer.in_features:
        raise ValueError(f"expected features shaped (B, {layer.in_features}), got {tuple(f.shape)}")
    return layer(f)


# ------------------------------------------------------------ decoder

class DepthwiseSeparable(nn.Module):
    def __init__(self, c_in: int, c_out: int, kernel: int = 7):
        super().__init__()
        self.depthwise = nn.Conv1d(c_in, c_in, kernel, padding=kernel // 2, groups=c_in)
        self.pointwise = nn.Conv1d(c_in, c_out, 1)
        self.norm = ChannelLayerNorm(c_out)

    def forward(self, x):
        return self.norm(self.pointwise(self.depthwise(x)))


def decoder_channels(feature_channels: int) -> list[int]:
    """Transposed-conv channel schedule, halving down to a single output channel."""
    chans = [feature_channels]
    for _ in range(4):
        chans.append(max(chans[-1] // 2, 1))
    return chans + [1]


class Decoder(nn.Module):
    """Two depthwise-separable layers then five stride-2 transposed convs (x32)."""

    def __init__(self, feature_channels: int = 320):
        super().__init__()
        self.in_channels = 2 * feature_channels
        self.compress = nn.Sequential(
            DepthwiseSeparable(self.in_channels, feature_channels), nn.GELU(),
            DepthwiseSeparable(feature_channels, feature_channels), nn.GELU(),
        )
        chans = decoder_channels(feature_channels)
        layers = []
        for i, (a, b) in enumerate(zip(chans, chans[1:])):
            layers.append(nn.ConvTranspose1d(a, b, kernel_size=4, stride=2, padding=1))
            if i < len(chans) - 2:
                layers.append(nn.GELU())
        self.upsample = nn.Sequential(*layers)

    def forward(self, concat):
        if concat.dim() != 3 or concat.shape[1] != self.in_channels:
            raise ValueError(f"decoder expects {self.in_channels} input channels, got {tuple(concat.shape)}")
        return self.upsample(self.compress(concat))


def init_weights(module: nn.Module, std: float = 0.02) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv1d, nn.ConvTranspose1d)):
            nn.init.trunc_normal_(m.weight, std=std, a=-2 * std, b=2 * std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


# ------------------------------------------------------------ whole model

VARIANTS = ("full", "isfa", "is", "fa", "fald", "source_only")

# parameter groups present in each ablation variant
VARIANT_GROUPS = {
    "full": ("FRFE", "FIFE", "LC", "LD", "GDC", "SDC", "decoder"),
    "isfa": ("FRFE", "LC", "GDC"),
    "is": ("FRFE", "LC", "GDC", "SDC"),
    "fa": ("FRFE", "FIFE", "LC", "LD", "GDC", "decoder"),
    "fald": ("FRFE", "FIFE", "LC", "GDC", "decoder"),
    "source_only": ("FRFE", "LC"),
}

# losses produced by each variant, in total-loss order
VARIANT_LOSSES = {
    "full": ("lc", "gd", "fd", "orth", "recon", "ld"),
    "isfa": ("lc", "gd"),
    "is": ("lc", "gd", "fd"),
    "fa": ("lc", "gd", "orth", "recon", "ld"),
    "fald": ("lc", "gd", "orth", "recon"),
    "source_only": ("lc",),
}


class ISGFAN(nn.Module):
    """Container for every trainable group; absent groups are ``None``."""

    def __init__(self, num_classes: int, extractor: ExtractorConfig = ExtractorConfig(),
                 variant: str = "full", grl_coeff: float = 1.0, init_std: float = 0.02):
        super().__init__()
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
        self.variant = variant
        self.num_classes = num_classes
        self.extractor_config = extractor
        groups = VARIANT_GROUPS[variant]
        d = extractor.out_channels
        self.FRFE = FeatureExtractor(extractor)
        self.LC = Head(default_head(d, num_classes))
        self.FIFE = FeatureExtractor(extractor) if "FIFE" in groups else None
        self.LD = Head(default_head(d, num_classes)) if "LD" in groups else None
        self.GDC = Head(default_head(d, 1)) if "GDC" in groups else None
        self.SDC = SubdomainClassifiers(d, num_classes) if "SDC" in groups else None
        self.decoder = Decoder(d) if "decoder" in groups else None
        self.grl = GradientReversal(grl_coeff)
        init_weights(self, init_std)

    @property
    def groups(self) -> dict[str, nn.Module]:
        return {name: getattr(self, name) for name in VARIANT_GROUPS[self.variant]}

    @property
    def losses(self) -> tuple[str, ...]:
        return VARIANT_LOSSES[self.variant]

    def features(self, x):
        """Pooled fault-relevant features (B, C)."""
        return pool(self.FRFE(x))

    def forward(self, x):
        """Inference path: class logits from FRFE + LC."""
        return self.LC(self.features(x))


def build_variant(variant: str, num_classes: int, extractor: ExtractorConfig = ExtractorConfig(),
                  seed: int | None = None, **kw) -> ISGFAN:
    if seed is not None:
        torch.manual_seed(seed)
    return ISGFAN(num_classes, extractor, variant, **kw)


# ------------------------------------------------------------ checkpoints

CHECKPOINT_MAGIC = b"ISGFCKPT"
CHECKPOINT_VERSION = 1
_DTYPES = {torch.float32: "<f4", torch.float64: "<f8"}


def save_checkpoint(model: ISGFAN, path, extra: dict | None = None) -> None:
    """Write parameter groups with a JSON shape header followed by raw
    little-endian payloads. Output is byte-deterministic."""
    entries, blobs, offset = [], [], 0
    for group, module in model.groups.items():
        for name, tensor in module.state_dict().items():
            arr = tensor.detach().cpu().numpy().astype(_DTYPES[tensor.dtype])
            raw = arr.tobytes()
            entries.append({"group": group, "name": name, "shape": list(arr.shape),
                            "dtype": arr.dtype.str, "offset": offset, "nbytes": len(raw)})
            blobs.append(raw)
            offset += len(raw)
    header = {
        "version": CHECKPOINT_VERSION,
        "variant": model.variant,
        "num_classes": model.num_classes,
        "stage_channels": list(model.extractor_config.stage_channels),
        "blocks_per_stage": model.extractor_config.blocks_per_stage,
        "tensors": entries,
        "extra": extra or {},
    }
    hdr = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(hdr)))
        fh.write(hdr)
        for raw in blobs:
            fh.write(raw)


def read_checkpoint(path) -> tuple[dict, dict[str, dict[str, np.ndarray]]]:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack_from("<I", raw, 8)
    header = json.loads(raw[12:12 + n])
    if header["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header['version']}")
    base = 12 + n
    groups: dict[str, dict[str, np.ndarray]] = {}
    for e in header["tensors"]:
        arr = np.frombuffer(raw, e["dtype"], int(np.prod(e["shape"], dtype=np.int64)), base + e["offset"])
        groups.setdefault(e["group"], {})[e["name"]] = arr.reshape(e["shape"]).copy()
    return header, groups


def load_checkpoint(path) -> ISGFAN:
    header, groups = read_checkpoint(path)
    extractor = ExtractorConfig(stage_channels=tuple(header["stage_channels"]),
                                blocks_per_stage=header["blocks_per_stage"])
    model = ISGFAN(header["num_classes"], extractor, header["variant"])
    for name, module in model.groups.items():
        state = {k: torch.from_numpy(v) for k, v in groups[name].items()}
        module.load_state_dict(state)
    return model
