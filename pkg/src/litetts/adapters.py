"""Parameter-efficient fine-tuning: bottleneck and convolutional adapter
blocks, a declarative placement planner, injection/stripping, parameter
accounting and freeze management.

An adapter consumes the wrapped layer's output and replaces it in the graph;
with the default zero initialisation of the up-projection (bottleneck) or the
final conv (convolutional), injection is an exact no-op at step 0.
"""

import fnmatch
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .acoustic import SeparableConv1d
from .errors import ConfigError, PlacementError
from .vocoder import ResidualBlock, UpsampleStage


@dataclass(frozen=True)
class AdapterConfig:
    bottleneck_dim: int = 16
    conv_kernel_sizes: tuple = (3, 5, 3)
    se_reduction: int = 4

    def __post_init__(self):
        problems = []
        if self.bottleneck_dim < 1:
            problems.append("adapters.bottleneck_dim must be >= 1")
        if len(self.conv_kernel_sizes) != 3:
            problems.append("adapters.conv_kernel_sizes must list exactly 3 layers")
        if self.se_reduction < 1:
            problems.append("adapters.se_reduction must be >= 1")
        if problems:
            raise ConfigError(problems)


@dataclass(frozen=True)
class BottleneckAdapterSpec:
    input_dim: int
    bottleneck_dim: int = 16

    @property
    def param_count(self):
        # two projections plus biases
        return 2 * self.input_dim * self.bottleneck_dim + self.bottleneck_dim + self.input_dim


@dataclass(frozen=True)
class ConvAdapterSpec:
    channels: int
    kernel_sizes: tuple = (3, 5, 3)
    se_reduction: int = 4

    @property
    def se_hidden(self):
        return max(1, self.channels // self.se_reduction)

    @property
    def param_count(self):
        c, h = self.channels, self.se_hidden
        k1, k2, k3 = self.kernel_sizes
        convs = (k1 * c * c + c) + (k2 * c + c) + (k3 * c * c + c)
        norms = 2 * (2 * c)
        se = (c * h + h) + (h * c + c)
        return convs + norms + se


class BottleneckAdapter(nn.Module):
    """Down-project, rectify, up-project, add the residual input.

    ``feature_axis`` selects which axis carries the input_dim features
    (convolutional hosts emit channels-first tensors).
    """

    def __init__(self, spec, feature_axis=-1):
        super().__init__()
        self.spec = spec
        self.feature_axis = feature_axis
        self.down = nn.Linear(spec.input_dim, spec.bottleneck_dim)
        self.up = nn.Linear(spec.bottleneck_dim, spec.input_dim)
        nn.init.zeros_(self.up.weight)
        nn.init.zeros_(self.up.bias)

    def forward(self, h):
        if h.shape[self.feature_axis] != self.spec.input_dim:
            raise ValueError(
                f"adapter expects {self.spec.input_dim} features on axis "
                f"{self.feature_axis}, got {h.shape[self.feature_axis]}"
            )
        x = h.movedim(self.feature_axis, -1)
        x = self.up(F.relu(self.down(x)))
        return h + x.movedim(-1, self.feature_axis)


class ConvAdapter(nn.Module):
    """Three-conv stack (middle one depth-wise) with layer normalisation and
    a squeeze-and-excitation gate; the gated output is residual-summed."""

    def __init__(self, spec):
        super().__init__()
        self.spec = spec
        c = spec.channels
        k1, k2, k3 = spec.kernel_sizes
        self.conv1 = nn.Conv1d(c, c, k1, padding=(k1 - 1) // 2)
        self.norm1 = nn.LayerNorm(c)
        self.depthwise = nn.Conv1d(c, c, k2, padding=(k2 - 1) // 2, groups=c)
        self.conv3 = nn.Conv1d(c, c, k3, padding=(k3 - 1) // 2)
        self.norm2 = nn.LayerNorm(c)
        self.se_fc1 = nn.Linear(c, spec.se_hidden)
        self.se_fc2 = nn.Linear(spec.se_hidden, c)
        nn.init.zeros_(self.conv3.weight)
        nn.init.zeros_(self.conv3.bias)

    def se_gate(self, y):
        """Per-channel gate from the global temporal average (squeeze)."""
        squeeze = y.mean(dim=2)
        return torch.sigmoid(self.se_fc2(F.relu(self.se_fc1(squeeze))))

    def forward(self, h):
        if h.shape[1] != self.spec.channels:
            raise ValueError(f"adapter expects {self.spec.channels} channels, got {h.shape[1]}")
        y = self.conv1(h)
        y = F.relu(self.norm1(y.transpose(1, 2)).transpose(1, 2))
        y = F.relu(self.depthwise(y))
        y = self.conv3(y)
        y = self.norm2(y.transpose(1, 2)).transpose(1, 2)
        return h + y * self.se_gate(y).unsqueeze(-1)


def build_adapter(spec, feature_axis=-1):
    if isinstance(spec, BottleneckAdapterSpec):
        return BottleneckAdapter(spec, feature_axis=feature_axis)
    if isinstance(spec, ConvAdapterSpec):
        return ConvAdapter(spec)
    raise PlacementError(f"unknown adapter spec type {type(spec).__name__}")


class AdapterWrapper(nn.Module):
    """Routes the host module's output through the adapter."""

    def __init__(self, host, adapter):
        super().__init__()
        self.host = host
        self.adapter = adapter

    def forward(self, *args, **kwargs):
        return self.adapter(self.host(*args, **kwargs))


# ---------------------------------------------------------------------------
# Placement plans
# ---------------------------------------------------------------------------

MODEL_KINDS = ("acoustic", "vocoder", "both")
PLAN_VARIANTS = ("paper_default", "vocoder_reduced", "full_model")


@dataclass(frozen=True)
class AdapterPlacementPlan:
    entries: tuple  # of (attachment_point: str, spec)

    def __post_init__(self):
        points = [p for p, _ in self.entries]
        if len(points) != len(set(points)):
            raise PlacementError("duplicate attachment points in plan")

    def __len__(self):
        return len(self.entries)

    @property
    def points(self):
        return [p for p, _ in self.entries]

    def to_config(self):
        out = []
        for point, spec in self.entries:
            if isinstance(spec, BottleneckAdapterSpec):
                out.append({"point": point, "type": "bottleneck",
                            "input_dim": spec.input_dim, "bottleneck_dim": spec.bottleneck_dim})
            else:
                out.append({"point": point, "type": "conv", "channels": spec.channels,
                            "kernel_sizes": list(spec.kernel_sizes),
                            "se_reduction": spec.se_reduction})
        return out

    @classmethod
    def from_config(cls, items):
        entries = []
        for item in items:
            if item["type"] == "bottleneck":
                spec = BottleneckAdapterSpec(item["input_dim"], item["bottleneck_dim"])
            elif item["type"] == "conv":
                spec = ConvAdapterSpec(item["channels"], tuple(item["kernel_sizes"]),
                                       item["se_reduction"])
            else:
                raise PlacementError(f"unknown adapter type {item['type']!r}")
            entries.append((item["point"], spec))
        return cls(tuple(entries))


def _acoustic_conv_points(model):
    """Every depthwise-separable conv layer: encoder, decoder, predictors."""
    for name, module in model.named_modules():
        if isinstance(module, SeparableConv1d):
            yield name, module.pointwise.out_channels


def _vocoder_points(model, reduced):
    """Transposed convs always; residual blocks unless ``reduced``."""
    for name, module in model.named_modules():
        if isinstance(module, UpsampleStage):
            yield f"{name}.upsample", module.upsample.out_channels
            if not reduced:
                for j, block in enumerate(module.blocks):
                    yield f"{name}.blocks.{j}", block.skip.out_channels


def build_placement_plan(model, model_kind="both", variant="paper_default",
                         adapter_config=AdapterConfig()):
    """Declarative plan for the given model.

    paper_default places bottleneck adapters after every acoustic conv layer
    and convolutional adapters after every vocoder upsampling layer and
    residual block (15 for a 3-stage, 4-block vocoder). vocoder_reduced keeps
    only the post-transposed-conv adapters (3). full_model forces adapters in
    both halves regardless of model_kind.
    """
    if model_kind not in MODEL_KINDS:
        raise PlacementError(f"unknown model_kind {model_kind!r}")
    if variant not in PLAN_VARIANTS:
        raise PlacementError(f"unknown plan variant {variant!r}")
    if variant == "full_model":
        model_kind = "both"
    entries = []
    if model_kind in ("acoustic", "both"):
        for point, dim in _acoustic_conv_points(model):
            entries.append((point, BottleneckAdapterSpec(dim, adapter_config.bottleneck_dim)))
    if model_kind in ("vocoder", "both"):
        for point, channels in _vocoder_points(model, reduced=(variant == "vocoder_reduced")):
            entries.append((point, ConvAdapterSpec(channels, adapter_config.conv_kernel_sizes,
                                                   adapter_config.se_reduction)))
    if not entries:
        raise PlacementError(
            f"no attachment points found for kind={model_kind!r} variant={variant!r}"
        )
    return AdapterPlacementPlan(tuple(entries))


# ---------------------------------------------------------------------------
# Injection
# ---------------------------------------------------------------------------


def _resolve(model, point):
    try:
        return model.get_submodule(point)
    except AttributeError:
        raise PlacementError(f"unknown attachment point {point!r}") from None


def _host_feature_axis(host):
    # all current hosts are convolutional and emit (B, C, T)
    return 1


def inject(model, plan):
    """Wrap every attachment point of the plan with a fresh adapter.

    With the default zero initialisation the adapted model computes exactly
    the same outputs as the original. Mutates and returns ``model``.
    """
    for point, _ in plan.entries:
        host = _resolve(model, point)
        if isinstance(host, AdapterWrapper):
            raise PlacementError(f"attachment point {point!r} already has an adapter")
    for point, spec in plan.entries:
        host = _resolve(model, point)
        adapter = build_adapter(spec, feature_axis=_host_feature_axis(host))
        parent_name, _, child = point.rpartition(".")
        parent = model.get_submodule(parent_name) if parent_name else model
        setattr(parent, child, AdapterWrapper(host, adapter))
    return model


def strip_adapters(model):
    """Remove every injected adapter, restoring the original module graph."""
    wrapped = [name for name, m in model.named_modules() if isinstance(m, AdapterWrapper)]
    # unwrap deepest-first so nested names stay valid
    for name in sorted(wrapped, key=len, reverse=True):
        parent_name, _, child = name.rpartition(".")
        parent = model.get_submodule(parent_name) if parent_name else model
        setattr(parent, child, getattr(parent, child).host)
    return model


def injected_parameter_count(model, half=None):
    """Total adapter parameters; ``half`` filters to 'acoustic' or 'vocoder'."""
    total = 0
    for name, module in model.named_modules():
        if isinstance(module, AdapterWrapper):
            if half is not None and not name.startswith(f"{half}."):
                continue
            total += sum(p.numel() for p in module.adapter.parameters())
    return total


# ---------------------------------------------------------------------------
# Freeze management
# ---------------------------------------------------------------------------

# adapters, the phoneme embedding matrix and the speaker/language tables stay
# trainable during adapter-based fine-tuning; everything else is frozen
ADAPTER_FINETUNE_PATTERNS = ("*.adapter.*", "acoustic.tables.*")


@dataclass(frozen=True)
class FreezeSpec:
    trainable_patterns: tuple = ADAPTER_FINETUNE_PATTERNS


@dataclass(frozen=True)
class ParamCounts:
    frozen: int
    trainable: int
    ratio: float  # trainable / original (pre-injection) parameter count


def partition_parameters(model, freeze_spec):
    """Split parameter names into (frozen, trainable) per the freeze spec."""
    frozen, trainable = [], []
    matched = {p: 0 for p in freeze_spec.trainable_patterns}
    for name, _ in model.named_parameters():
        hits = [p for p in freeze_spec.trainable_patterns if fnmatch.fnmatch(name, p)]
        for p in hits:
            matched[p] += 1
        (trainable if hits else frozen).append(name)
    return frozen, trainable, matched


def count_parameters(model, freeze_spec):
    """Exact (frozen, trainable, ratio) counts under the given freeze spec.

    The ratio divides the trainable count by the original model capacity,
    i.e. the total parameter count minus injected adapter parameters.
    """
    frozen_names, trainable_names, _ = partition_parameters(model, freeze_spec)
    sizes = {name: p.numel() for name, p in model.named_parameters()}
    frozen = sum(sizes[n] for n in frozen_names)
    trainable = sum(sizes[n] for n in trainable_names)
    original = frozen + trainable - injected_parameter_count(model)
    return ParamCounts(frozen=frozen, trainable=trainable, ratio=trainable / original)


def apply_freeze(model, freeze_spec):
    """Set requires_grad so gradient updates can only touch trainable params."""
    _, trainable_names, matched = partition_parameters(model, freeze_spec)
    dead = [p for p, n in matched.items() if n == 0]
    if dead:
        raise PlacementError(f"freeze pattern(s) matched no parameters: {dead} (typo?)")
    if not trainable_names:
        raise PlacementError("freeze spec leaves no trainable parameters")
    trainable = set(trainable_names)
    for name, p in model.named_parameters():
        p.requires_grad_(name in trainable)
    return model
