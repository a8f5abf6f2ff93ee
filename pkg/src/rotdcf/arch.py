"""Architecture descriptions: layer descriptors, validation, canonical text
form, and the conv3 / vgg16 presets."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Lift:
    size: int
    channels: int
    k: int


@dataclass(frozen=True)
class Joint:
    size: int
    channels: int
    k: int
    k_alpha: int


@dataclass(frozen=True)
class ConvPlain:
    size: int
    channels: int


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class AvgPool:
    size: int


@dataclass(frozen=True)
class MaxPool:
    size: int


@dataclass(frozen=True)
class GroupNorm:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Dense:
    units: int


@dataclass(frozen=True)
class SoftmaxLoss:
    pass


CONV_KINDS = (Lift, Joint, ConvPlain)


@dataclass(frozen=True)
class ArchSpec:
    """Ordered layer descriptors plus the global rotation resolution."""

    layers: tuple
    n_theta: int
    in_channels: int = 1
    image_size: int = 28

    def __post_init__(self):
        self.validate()

    def validate(self):
        seen_lift = False
        seen_plain = False
        for layer in self.layers:
            if isinstance(layer, Lift):
                if seen_lift:
                    raise ValueError("only one lift layer is allowed")
                if seen_plain:
                    raise ValueError("cannot mix plain conv before a lift layer")
                seen_lift = True
            elif isinstance(layer, Joint):
                if not seen_lift:
                    raise ValueError("joint layers are only valid after a lift layer")
            elif isinstance(layer, ConvPlain):
                if seen_lift:
                    raise ValueError("cannot mix plain conv into an equivariant stack")
                seen_plain = True
        if self.layers and isinstance(self.layers[-1], SoftmaxLoss):
            pass
        elif any(isinstance(l, SoftmaxLoss) for l in self.layers):
            raise ValueError("softmax loss must be the final layer")

    @property
    def equivariant(self) -> bool:
        return any(isinstance(l, Lift) for l in self.layers)

    def conv_layers(self):
        return [l for l in self.layers if isinstance(l, CONV_KINDS)]

    def to_text(self) -> str:
        lines = [
            "rotdcf-arch v1",
            f"ntheta {self.n_theta}",
            f"input {self.in_channels} {self.image_size} {self.image_size}",
        ]
        for layer in self.layers:
            if isinstance(layer, Lift):
                lines.append(f"lift L={layer.size} M={layer.channels} K={layer.k}")
            elif isinstance(layer, Joint):
                lines.append(
                    f"joint L={layer.size} M={layer.channels} K={layer.k} Ka={layer.k_alpha}"
                )
            elif isinstance(layer, ConvPlain):
                lines.append(f"conv L={layer.size} M={layer.channels}")
            elif isinstance(layer, Relu):
                lines.append("relu")
            elif isinstance(layer, AvgPool):
                lines.append(f"avgpool {layer.size}")
            elif isinstance(layer, MaxPool):
                lines.append(f"maxpool {layer.size}")
            elif isinstance(layer, GroupNorm):
                lines.append("groupnorm")
            elif isinstance(layer, Flatten):
                lines.append("flatten")
            elif isinstance(layer, Dense):
                lines.append(f"dense {layer.units}")
            elif isinstance(layer, SoftmaxLoss):
                lines.append("softmax-loss")
            else:
                raise ValueError(f"unknown layer {layer!r}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "ArchSpec":
        lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
        if not lines or lines[0] != "rotdcf-arch v1":
            raise ValueError("not a rotdcf arch description")
        n_theta = None
        in_channels = image_size = None
        layers = []
        for ln in lines[1:]:
            head, *rest = ln.split()
            if head == "ntheta":
                n_theta = int(rest[0])
            elif head == "input":
                in_channels, image_size = int(rest[0]), int(rest[1])
            elif head in ("lift", "joint", "conv"):
                kv = dict(p.split("=") for p in rest)
                if head == "lift":
                    layers.append(Lift(int(kv["L"]), int(kv["M"]), int(kv["K"])))
                elif head == "joint":
                    layers.append(
                        Joint(int(kv["L"]), int(kv["M"]), int(kv["K"]), int(kv["Ka"]))
                    )
                else:
                    layers.append(ConvPlain(int(kv["L"]), int(kv["M"])))
            elif head == "relu":
                layers.append(Relu())
            elif head == "avgpool":
                layers.append(AvgPool(int(rest[0])))
            elif head == "maxpool":
                layers.append(MaxPool(int(rest[0])))
            elif head == "groupnorm":
                layers.append(GroupNorm())
            elif head == "flatten":
                layers.append(Flatten())
            elif head == "dense":
                layers.append(Dense(int(rest[0])))
            elif head == "softmax-loss":
                layers.append(SoftmaxLoss())
            else:
                raise ValueError(f"unknown arch line: {ln}")
        if n_theta is None or in_channels is None:
            raise ValueError("arch description missing ntheta or input line")
        return ArchSpec(tuple(layers), n_theta, in_channels, image_size)


def conv3_cnn(m: int = 32, image_size: int = 28) -> ArchSpec:
    return ArchSpec(
        layers=(
            ConvPlain(5, m), Relu(), AvgPool(2),
            ConvPlain(5, 2 * m), Relu(), AvgPool(2),
            ConvPlain(5, 4 * m), Relu(), AvgPool(2),
            Flatten(), Dense(64), Relu(), Dense(10), SoftmaxLoss(),
        ),
        n_theta=1,
        in_channels=1,
        image_size=image_size,
    )


def conv3_rotdcf(
    m: int = 8, k: int = 3, k_alpha: int = 5, n_theta: int = 8, image_size: int = 28
) -> ArchSpec:
    return ArchSpec(
        layers=(
            Lift(5, m, k), Relu(), AvgPool(2),
            Joint(5, 2 * m, k, k_alpha), Relu(), AvgPool(2),
            Joint(5, 4 * m, k, k_alpha), Relu(), AvgPool(2),
            Flatten(), Dense(64), Relu(), Dense(10), SoftmaxLoss(),
        ),
        n_theta=n_theta,
        in_channels=1,
        image_size=image_size,
    )


def _vgg16_channel_plan(m: int):
    return [
        (m, False), (m, False), (m, False),
        (m, False), (m, True),
        (2 * m, False), (2 * m, False),
        (2 * m, False), (2 * m, True),
        (4 * m, False), (4 * m, False),
        (4 * m, False), (4 * m, True),
    ]


def vgg16_cnn(m: int = 64, image_size: int = 32) -> ArchSpec:
    layers = []
    for channels, pool in _vgg16_channel_plan(m):
        layers += [ConvPlain(3, channels), Relu()]
        if pool:
            layers.append(MaxPool(2))
    layers += [Flatten(), Dense(128), Relu(), Dense(10), SoftmaxLoss()]
    return ArchSpec(tuple(layers), n_theta=1, in_channels=3, image_size=image_size)


def vgg16_rotdcf(
    m: int = 32, k: int = 3, k_alpha: int = 5, n_theta: int = 8, image_size: int = 32
) -> ArchSpec:
    layers = []
    first = True
    for channels, pool in _vgg16_channel_plan(m):
        if first:
            layers += [Lift(3, channels, k), Relu()]
            first = False
        else:
            layers += [Joint(3, channels, k, k_alpha), Relu()]
        if pool:
            layers.append(MaxPool(2))
    layers += [Flatten(), Dense(128), Relu(), Dense(10), SoftmaxLoss()]
    return ArchSpec(tuple(layers), n_theta=n_theta, in_channels=3, image_size=image_size)


PRESETS = {
    "conv3-cnn": conv3_cnn,
    "conv3-rotdcf": conv3_rotdcf,
    "vgg16-cnn": vgg16_cnn,
    "vgg16-rotdcf": vgg16_rotdcf,
}


def get_preset(name: str, **overrides) -> ArchSpec:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    return PRESETS[name](**overrides)
