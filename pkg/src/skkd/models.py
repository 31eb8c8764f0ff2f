"""SCCNet, EEGNet and ShallowConvNet for 128 Hz input, with LF1-LF3 feature taps.

Every network is laid out as ``block1 -> block2 -> block3 -> classifier`` and
the three block outputs are the taps:

=============== ============ ================= =================
network         LF1          LF2               LF3
=============== ============ ================= =================
SCCNet          spatial      spatial-temporal  power
EEGNet          temporal     temporal-spatial  temporal-spatial
ShallowConvNet  temporal     temporal-spatial  power
=============== ============ ================= =================

Kernel and pooling lengths are the published defaults rescaled by duration to
128 Hz.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
from torch import nn

ARCHITECTURES = ("SCCNet", "EEGNet", "ShallowConvNet")
TAP_NAMES = ("LF1", "LF2", "LF3")


class BuildError(ValueError):
    pass


class InferenceError(ValueError):
    pass


@dataclass(frozen=True)
class ArchitectureSpec:
    name: str
    n_channels: int
    n_samples: int
    n_classes: int

    def __post_init__(self):
        if self.name not in ARCHITECTURES:
            raise BuildError(f"unknown architecture {self.name!r}; choose from {', '.join(ARCHITECTURES)}")
        if self.n_channels < 1:
            raise BuildError("n_channels must be >= 1")
        if self.n_classes < 2:
            raise BuildError("n_classes must be >= 2")

    @property
    def tag(self) -> str:
        return f"{self.name}-{self.n_channels}"


@dataclass
class TapSet:
    lf1: torch.Tensor
    lf2: torch.Tensor
    lf3: torch.Tensor
    logits: torch.Tensor

    def __getitem__(self, name: str) -> torch.Tensor:
        try:
            return {"LF1": self.lf1, "LF2": self.lf2, "LF3": self.lf3}[name.upper()]
        except KeyError:
            raise KeyError(f"unknown tap {name!r}") from None

    @property
    def batch_size(self) -> int:
        return self.logits.shape[0]


class _Square(nn.Module):
    def forward(self, x):
        return x * x


class _SafeLog(nn.Module):
    def __init__(self, eps: float = 1e-6):
        super().__init__()
        self.eps = eps

    def forward(self, x):
        return torch.log(torch.clamp(x, min=self.eps))


class _TappedNet(nn.Module):
    """Shared plumbing: (N, C, T) input, three tap blocks, linear head."""

    min_samples = 1

    def __init__(self, spec: ArchitectureSpec):
        super().__init__()
        self.spec = spec

    def _head(self, spec: ArchitectureSpec):
        # eval mode so the probe leaves BatchNorm running stats untouched
        self.eval()
        with torch.no_grad():
            dummy = torch.zeros(1, 1, spec.n_channels, spec.n_samples)
            flat = self.block3(self.block2(self.block1(dummy))).numel()
        self.train()
        self.classifier = nn.Linear(flat, spec.n_classes)

    def forward(self, x):
        x = x.unsqueeze(1)
        x = self.block3(self.block2(self.block1(x)))
        return self.classifier(torch.flatten(x, 1))


class SCCNet(_TappedNet):
    """Spatial component-wise convolution network.

    The spatial stage has one filter per input electrode; the spatio-temporal
    stage mixes those components with a 0.1 s kernel.
    """

    min_samples = 64

    def __init__(self, spec: ArchitectureSpec, n_st: int = 20, kernel: int = 13,
                 pool: int = 64, stride: int = 13, dropout: float = 0.5):
        super().__init__(spec)
        nu = spec.n_channels
        self.block1 = nn.Sequential(nn.Conv2d(1, nu, (spec.n_channels, 1)), nn.BatchNorm2d(nu))
        self.block2 = nn.Sequential(
            nn.Conv2d(nu, n_st, (1, kernel), padding=(0, kernel // 2)), nn.BatchNorm2d(n_st)
        )
        self.block3 = nn.Sequential(
            _Square(), nn.Dropout(dropout), nn.AvgPool2d((1, pool), stride=(1, stride)), _SafeLog()
        )
        self._head(spec)


class EEGNet(_TappedNet):
    min_samples = 32

    def __init__(self, spec: ArchitectureSpec, f1: int = 8, depth: int = 2, f2: int = 16,
                 kernel: int = 64, sep_kernel: int = 16, dropout: float = 0.5):
        super().__init__(spec)
        self.block1 = nn.Sequential(
            nn.Conv2d(1, f1, (1, kernel), padding="same", bias=False), nn.BatchNorm2d(f1)
        )
        self.block2 = nn.Sequential(
            nn.Conv2d(f1, f1 * depth, (spec.n_channels, 1), groups=f1, bias=False),
            nn.BatchNorm2d(f1 * depth),
            nn.ELU(),
        )
        self.block3 = nn.Sequential(
            nn.AvgPool2d((1, 4)),
            nn.Dropout(dropout),
            nn.Conv2d(f1 * depth, f1 * depth, (1, sep_kernel), padding="same",
                      groups=f1 * depth, bias=False),
            nn.Conv2d(f1 * depth, f2, 1, bias=False),
            nn.BatchNorm2d(f2),
            nn.ELU(),
            nn.AvgPool2d((1, 8)),
            nn.Dropout(dropout),
        )
        self._head(spec)


class ShallowConvNet(_TappedNet):
    min_samples = 13 + 38 - 1

    def __init__(self, spec: ArchitectureSpec, n_filters: int = 40, kernel: int = 13,
                 pool: int = 38, stride: int = 8, dropout: float = 0.5):
        super().__init__(spec)
        self.block1 = nn.Sequential(nn.Conv2d(1, n_filters, (1, kernel)))
        self.block2 = nn.Sequential(
            nn.Conv2d(n_filters, n_filters, (spec.n_channels, 1), bias=False),
            nn.BatchNorm2d(n_filters),
        )
        self.block3 = nn.Sequential(
            _Square(), nn.AvgPool2d((1, pool), stride=(1, stride)), _SafeLog(), nn.Dropout(dropout)
        )
        self._head(spec)


_CLASSES = {"SCCNet": SCCNet, "EEGNet": EEGNet, "ShallowConvNet": ShallowConvNet}


def min_samples(name: str) -> int:
    return _CLASSES[name].min_samples


def build_model(spec: ArchitectureSpec, init_seed: int, **kwargs) -> _TappedNet:
    """Construct ``spec`` with parameters drawn from a seed-private RNG stream."""
    cls = _CLASSES[spec.name]
    if spec.n_samples < cls.min_samples:
        raise BuildError(f"{spec.name} needs n_samples >= {cls.min_samples}, got {spec.n_samples}")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(init_seed)
        return cls(spec, **kwargs)


def forward_with_taps(model: _TappedNet, x: torch.Tensor) -> TapSet:
    spec = model.spec
    if x.ndim != 3 or x.shape[1] != spec.n_channels or x.shape[2] != spec.n_samples:
        raise InferenceError(
            f"{spec.tag} expects input (batch, {spec.n_channels}, {spec.n_samples}), got {tuple(x.shape)}"
        )
    captured = {}
    handles = [
        getattr(model, f"block{k}").register_forward_hook(
            lambda _m, _i, out, key=k: captured.__setitem__(key, out)
        )
        for k in (1, 2, 3)
    ]
    try:
        logits = model(x)
    finally:
        for h in handles:
            h.remove()
    return TapSet(captured[1], captured[2], captured[3], logits)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def freeze(model: nn.Module) -> nn.Module:
    """Evaluation mode with gradients off, in place."""
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model


def parameter_digest(model: nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


# --------------------------------------------------------------------------
# checkpoints: <stem>.pt holds the state dict, <stem>.manifest is "key = value" text


def save_checkpoint(model: _TappedNet, path: str | Path, init_seed: int, config_digest: str = "",
                    best_epoch: int | None = None, **extra) -> Path:
    stem = Path(path)
    stem = stem.with_suffix("") if stem.suffix in (".pt", ".manifest") else stem
    stem.parent.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), stem.with_suffix(".pt"))
    manifest = {
        "architecture": model.spec.name,
        "n_channels": model.spec.n_channels,
        "n_samples": model.spec.n_samples,
        "n_classes": model.spec.n_classes,
        "init_seed": init_seed,
        "config_digest": config_digest,
        "best_epoch": "" if best_epoch is None else best_epoch,
        "parameter_digest": parameter_digest(model),
        **extra,
    }
    text = "".join(f"{k} = {v}\n" for k, v in manifest.items())
    stem.with_suffix(".manifest").write_text(text, encoding="utf-8")
    return stem.with_suffix(".manifest")


def read_manifest(path: str | Path) -> dict[str, str]:
    stem = Path(path)
    stem = stem.with_suffix("") if stem.suffix in (".pt", ".manifest") else stem
    out = {}
    for line in stem.with_suffix(".manifest").read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def load_checkpoint(path: str | Path) -> tuple[_TappedNet, dict[str, str]]:
    stem = Path(path)
    stem = stem.with_suffix("") if stem.suffix in (".pt", ".manifest") else stem
    manifest = read_manifest(stem)
    spec = ArchitectureSpec(manifest["architecture"], int(manifest["n_channels"]),
                            int(manifest["n_samples"]), int(manifest["n_classes"]))
    model = build_model(spec, int(manifest["init_seed"]))
    model.load_state_dict(torch.load(stem.with_suffix(".pt"), weights_only=True))
    if manifest.get("channel_names"):
        model.channel_names = tuple(manifest["channel_names"].split(","))
    return model, manifest


def spec_digest(spec: ArchitectureSpec) -> str:
    return hashlib.sha256(json.dumps(asdict(spec), sort_keys=True).encode()).hexdigest()[:12]
