"""Architecture configuration and the flat key=value config-file format."""

from __future__ import annotations

from dataclasses import dataclass, fields

from .cfam import split_channels


@dataclass
class ModelConfig:
    input_hw: tuple[int, int] = (64, 64)
    in_channels: int = 1
    num_classes: int = 2
    stage_channels: tuple[int, int, int, int] = (16, 32, 64, 128)
    enable_fea: bool = True
    enable_diffatt: bool = True
    enable_wnlb: bool = True
    enable_ccu: bool = True
    dilations: tuple[int, int, int] = (3, 5, 8)
    heads: int = 2
    seed: int = 0
    dseb_sequential: bool = False

    def validate(self) -> "ModelConfig":
        h, w = self.input_hw
        if h % 32 != 0 or w % 32 != 0:
            raise ValueError(f"input extents must be divisible by 32, got {h}x{w}")
        if self.in_channels < 1:
            raise ValueError(f"in_channels must be >= 1, got {self.in_channels}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if len(self.stage_channels) != 4:
            raise ValueError(f"need 4 stage channel counts, got {self.stage_channels}")
        if len(self.dilations) != 3:
            raise ValueError(f"need 3 dilations, got {self.dilations}")
        if self.heads < 1:
            raise ValueError(f"heads must be >= 1, got {self.heads}")
        for c in self.stage_channels:
            split_channels(c)  # raises with guidance if the stage cannot be split
        for c in self.stage_channels[:3]:
            if c % (2 * self.heads) != 0:
                raise ValueError(
                    f"stage channels {c} must be divisible by 2*heads={2 * self.heads} "
                    f"for differential attention")
        return self

    def replace(self, **updates) -> "ModelConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(updates)
        return ModelConfig(**values)


_INT_TUPLE_KEYS = {"input_hw": 2, "stage_channels": 4, "dilations": 3}
_INT_KEYS = {"in_channels", "num_classes", "heads", "seed"}
_BOOL_KEYS = {"enable_fea", "enable_diffatt", "enable_wnlb", "enable_ccu", "dseb_sequential"}


def parse_config_text(text: str) -> ModelConfig:
    """Parse the flat config format: one key=value per line, '#' comments.

    Tuples are comma-separated integers, e.g. stage_channels=16,32,64,128.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key in _INT_TUPLE_KEYS:
            parts = tuple(int(p.strip()) for p in val.split(","))
            if len(parts) != _INT_TUPLE_KEYS[key]:
                raise ValueError(
                    f"config line {lineno}: {key} needs {_INT_TUPLE_KEYS[key]} values, got {val!r}")
            values[key] = parts
        elif key in _INT_KEYS:
            values[key] = int(val)
        elif key in _BOOL_KEYS:
            low = val.lower()
            if low not in ("true", "false"):
                raise ValueError(f"config line {lineno}: {key} must be true or false, got {val!r}")
            values[key] = low == "true"
        else:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
    return ModelConfig(**values).validate()


def load_config(path: str) -> ModelConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def format_config(cfg: ModelConfig) -> str:
    def fmt(value):
        if isinstance(value, bool):
            return "true" if value else "false"
        if isinstance(value, tuple):
            return ",".join(str(v) for v in value)
        return str(value)

    return "".join(f"{f.name}={fmt(getattr(cfg, f.name))}\n" for f in fields(cfg))


def save_config(path: str, cfg: ModelConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_config(cfg))
