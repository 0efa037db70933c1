"""Flat key-value run configuration: parsing, canonical dumping, domain builders.

The document format is UTF-8 lines of ``key = value`` with full-line ``#``
comments. Unknown and duplicate keys are rejected. Every key has a documented
default; :func:`dump` emits the complete resolved document in schema order, so
``parse(dump(cfg))`` equals ``cfg`` and a second dump is byte-identical.

Choosing ``preset = paper`` switches the defaults of the ``train.*`` keys (and
the model topology) to the full-size values; explicitly-set keys always win.
"""

from dataclasses import dataclass, fields

from .arm_sim import ArmConfig, CameraConfig
from .augment import AugmentSpec
from .errors import ConfigError, ValidationError
from .nn import model_spec_for_preset
from .train import TrainConfig

# train.* defaults per preset: (stage1_lr, stage1_epochs, stage2_lr, stage2_epochs)
_PRESET_TRAIN = {
    "desk": (1e-3, 30, 1e-4, 6),
    "paper": (1e-6, 150, 1e-7, 30),
}

_DEFAULT_SPECS = "gaussian:0.01 speckle:0.01 impulse:0.01 gamma:0.2 gamma:2.0 occlusion"


@dataclass(frozen=True)
class RunConfig:
    preset: str = "desk"
    seed: int = 7
    threads: int = 0
    backend: str = "auto"

    arm_backbone_length: float = 0.4
    arm_backbone_radius: float = 0.0009
    arm_tendon_offset: float = 0.01855
    arm_disk_count: int = 10
    arm_motor_gain: float = 0.12

    cam_width: int = 96
    cam_height: int = 96
    cam_fov_deg: float = 78.0
    cam_position: tuple = (0.0, 0.2, 0.55)
    cam_target: tuple = (0.0, 0.2, 0.0)
    cam_background: float = 0.85

    gen_count: int = 200

    train_batch: int = 16
    train_stage1_lr: float = 1e-3
    train_stage1_epochs: int = 30
    train_stage2_lr: float = 1e-4
    train_stage2_epochs: int = 6

    pretrain_count: int = 96
    pretrain_epochs: int = 8
    pretrain_lr: float = 1e-3

    augment_specs: tuple = tuple(_DEFAULT_SPECS.split())
    augment_copies: int = 1
    augment_max_items: int = 100_000

    eval_bin_width: float = 0.025

    paths_data: str = "data"
    paths_out: str = "run"

    def arm_config(self) -> ArmConfig:
        cfg = ArmConfig(self.arm_backbone_length, self.arm_backbone_radius,
                        self.arm_tendon_offset, self.arm_disk_count,
                        self.arm_motor_gain)
        cfg.validate()
        return cfg

    def camera_config(self) -> CameraConfig:
        cfg = CameraConfig(self.cam_width, self.cam_height, self.cam_fov_deg,
                           self.cam_position, self.cam_target, self.cam_background)
        cfg.validate()
        return cfg

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.preset, self.train_stage1_lr, self.train_stage1_epochs,
                           self.train_batch, self.train_stage2_lr,
                           self.train_stage2_epochs, self.seed)

    def model_spec(self):
        return model_spec_for_preset(self.preset)

    def specs(self) -> tuple:
        out = tuple(parse_spec_token(t) for t in self.augment_specs)
        for s in out:
            s.validate()
        return out


def parse_spec_token(token: str) -> AugmentSpec:
    """``kind[:param]`` -> AugmentSpec; the parameter is the kind's strength."""
    kind, _, param = token.partition(":")
    try:
        if kind in ("gaussian", "speckle"):
            return AugmentSpec(kind, gaussian_std=float(param) if param else 0.01)
        if kind == "impulse":
            return AugmentSpec(kind, impulse_prob=float(param) if param else 0.01)
        if kind == "gamma":
            if not param:
                raise ConfigError("gamma spec needs an exponent, e.g. gamma:2.0")
            return AugmentSpec(kind, gamma=float(param))
        if kind == "occlusion":
            return AugmentSpec(kind, occlusion_side=int(param) if param else None)
    except ValueError as exc:
        raise ConfigError(f"bad parameter in augment spec {token!r}") from exc
    raise ConfigError(f"unknown augment spec kind {kind!r} in {token!r}")


# (document key, attribute, value kind)
_SCHEMA = [
    ("preset", "preset", "str"),
    ("seed", "seed", "int"),
    ("threads", "threads", "int"),
    ("backend", "backend", "str"),
    ("arm.backbone_length", "arm_backbone_length", "float"),
    ("arm.backbone_radius", "arm_backbone_radius", "float"),
    ("arm.tendon_offset", "arm_tendon_offset", "float"),
    ("arm.disk_count", "arm_disk_count", "int"),
    ("arm.motor_gain", "arm_motor_gain", "float"),
    ("cam.width", "cam_width", "int"),
    ("cam.height", "cam_height", "int"),
    ("cam.fov_deg", "cam_fov_deg", "float"),
    ("cam.position", "cam_position", "vec3"),
    ("cam.target", "cam_target", "vec3"),
    ("cam.background", "cam_background", "float"),
    ("gen.count", "gen_count", "int"),
    ("train.batch", "train_batch", "int"),
    ("train.stage1_lr", "train_stage1_lr", "float"),
    ("train.stage1_epochs", "train_stage1_epochs", "int"),
    ("train.stage2_lr", "train_stage2_lr", "float"),
    ("train.stage2_epochs", "train_stage2_epochs", "int"),
    ("pretrain.count", "pretrain_count", "int"),
    ("pretrain.epochs", "pretrain_epochs", "int"),
    ("pretrain.lr", "pretrain_lr", "float"),
    ("augment.specs", "augment_specs", "tokens"),
    ("augment.copies", "augment_copies", "int"),
    ("augment.max_items", "augment_max_items", "int"),
    ("eval.bin_width", "eval_bin_width", "float"),
    ("paths.data", "paths_data", "str"),
    ("paths.out", "paths_out", "str"),
]

_BY_KEY = {key: (attr, kind) for key, attr, kind in _SCHEMA}


def _convert(key, kind, text):
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "vec3":
            parts = tuple(float(p) for p in text.split())
            if len(parts) != 3:
                raise ValueError("expected 3 numbers")
            return parts
        if kind == "tokens":
            return tuple(text.split())
        return text
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: cannot parse value {text!r} as {kind}") from exc


def _format(kind, value):
    if kind == "float":
        return repr(float(value))
    if kind == "vec3":
        return " ".join(repr(float(v)) for v in value)
    if kind == "tokens":
        return " ".join(value)
    return str(value)


def parse(text: str, preset_override: str | None = None) -> RunConfig:
    """Parse a config document; raises ConfigError on malformed input.

    preset_override (the CLI flag) takes precedence over the document's preset
    line for both the field and the train.* defaults it selects.
    """
    entries = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _BY_KEY:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in entries:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        entries[key] = value

    if preset_override:
        entries.pop("preset", None)
    preset = preset_override or entries.get("preset", "desk")
    if preset not in _PRESET_TRAIN:
        raise ValidationError(f"preset must be one of {tuple(_PRESET_TRAIN)}, "
                              f"got {preset!r}")
    lr1, ep1, lr2, ep2 = _PRESET_TRAIN[preset]
    # preset picks the train.* defaults; explicitly-set keys override below
    values = {"preset": preset, "train_stage1_lr": lr1, "train_stage1_epochs": ep1,
              "train_stage2_lr": lr2, "train_stage2_epochs": ep2}
    for key, text in entries.items():
        attr, kind = _BY_KEY[key]
        values[attr] = _convert(key, kind, text)
    return RunConfig(**values)


def default_config() -> RunConfig:
    return RunConfig()


def dump(cfg: RunConfig) -> str:
    """Canonical document: every key in schema order with its resolved value."""
    lines = []
    for key, attr, kind in _SCHEMA:
        lines.append(f"{key} = {_format(kind, getattr(cfg, attr))}")
    return "\n".join(lines) + "\n"


def with_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """New config with the given attribute overrides (None values ignored)."""
    values = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    for name, value in overrides.items():
        if value is not None:
            if name not in values:
                raise ValidationError(f"unknown config attribute {name!r}")
            values[name] = value
    return RunConfig(**values)
