"""Run configuration: flat key=value sections, strict keys, env override.

The file format is INI-style (one [section] per module); every key must
exist in the schema below, so typos fail fast with the offending key named.
``UBM_SEED`` in the environment overrides ``run.seed``.  The full snapshot
is embedded in every checkpoint and metrics report.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from typing import Any

from .augment import MaskPolicy
from .contrastive import PretrainConfig
from .encoders import UbmConfig
from .sessions import TokenLimits
from .synth import SynthConfig
from .tasks import FinetuneConfig


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


def _int(v: str) -> int:
    return int(v)


def _float(v: str) -> float:
    return float(v)


def _str(v: str) -> str:
    return v


def _float_list(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.split(",") if x.strip()) if v.strip() else ()


def _int_list(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.split(",") if x.strip())


def _opt_int(v: str):
    return int(v) if v.strip() else None


# (parser, default) per section.key
SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {"seed": (_int, 42)},
    "limits": {
        "max_title_tokens": (_int, 32),
        "max_item_tokens": (_int, 64),
        "max_session_len": (_int, 32),
    },
    "vocab": {"min_freq": (_int, 2)},
    "synth": {
        "num_intents": (_int, 10),
        "vocab_size": (_int, 500),
        "items_per_intent": (_int, 20),
        "session_min": (_int, 2),
        "session_max": (_int, 32),
        "session_geom_p": (_float, 0.18),
        "purchase_probs": (_float_list, ()),
        "num_sessions": (_int, 2000),
        "num_valid_sessions": (_int, 400),
        "num_test_sessions": (_int, 400),
    },
    "model": {
        "hidden_size": (_int, 256),
        "num_layers": (_int, 4),
        "num_heads": (_int, 4),
        "ff_size": (_int, 1024),
        "dropout_rate": (_float, 0.10),
    },
    "mask": {
        "select_prob": (_float, 0.20),
        "mask_frac": (_float, 0.50),
        "random_frac": (_float, 0.25),
        "keep_frac": (_float, 0.25),
    },
    "pretrain": {
        "stage1_batch": (_int, 512),
        "stage2_batch": (_int, 128),
        "stage1_epochs": (_int, 1),
        "stage2_epochs": (_int, 1),
        "peak_lr": (_float, 3e-5),
        "warmup_fraction": (_float, 0.10),
        "temperature": (_float, 0.05),
        "loss_mode": (_str, "standard"),
        "reorder_max_distance": (_opt_int, None),
    },
    "finetune": {
        "batch_size": (_int, 32),
        "lr": (_float, 3e-5),
        "epochs": (_int, 30),
        "threshold": (_float, 0.5),
        "pool_refresh_interval": (_int, 1),
        "nip_min_count": (_int, 5),
    },
    "analyze": {
        "group_edges": (_int_list, (0, 5, 20)),
        "align_uniform_augmentation": (_str, "action_item_mask"),
        "align_uniform_samples": (_int, 256),
    },
}


@dataclass
class RunConfig:
    values: dict[str, dict[str, Any]] = field(default_factory=dict)

    def get(self, section: str, key: str):
        return self.values[section][key]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    @classmethod
    def default(cls) -> "RunConfig":
        return cls({s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})

    @classmethod
    def load(cls, path=None, overrides: list[str] | None = None) -> "RunConfig":
        cfg = cls.default()
        if path is not None:
            parser = configparser.ConfigParser(interpolation=None)
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
            for section in parser.sections():
                if section not in SCHEMA:
                    raise ConfigError(section, "unknown section")
                for key, raw in parser.items(section):
                    cfg._set(section, key, raw)
        for item in overrides or []:
            if "=" not in item or "." not in item.split("=", 1)[0]:
                raise ConfigError(item, "overrides take the form section.key=value")
            dotted, raw = item.split("=", 1)
            section, key = dotted.split(".", 1)
            cfg._set(section.strip(), key.strip(), raw.strip())
        env_seed = os.environ.get("UBM_SEED")
        if env_seed is not None:
            cfg._set("run", "seed", env_seed)
        return cfg

    def _set(self, section: str, key: str, raw: str) -> None:
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"{section}.{key}", "unknown key")
        parse, _ = SCHEMA[section][key]
        try:
            self.values[section][key] = parse(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{section}.{key}", f"cannot parse value {raw!r}") from None

    def to_dict(self) -> dict:
        return {s: dict(kv) for s, kv in self.values.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        cfg = cls.default()
        for section, kv in d.items():
            for key, value in kv.items():
                if section not in SCHEMA or key not in SCHEMA[section]:
                    raise ConfigError(f"{section}.{key}", "unknown key")
                if isinstance(value, list):
                    value = tuple(value)
                cfg.values[section][key] = value
        return cfg

    # ------------------------------------------------------------------
    # typed views consumed by the modules

    def limits(self) -> TokenLimits:
        v = self.values["limits"]
        return TokenLimits(**v)

    def synth_config(self, num_sessions: int | None = None) -> SynthConfig:
        v = self.values["synth"]
        return SynthConfig(
            num_intents=v["num_intents"],
            vocab_size=v["vocab_size"],
            items_per_intent=v["items_per_intent"],
            session_min=v["session_min"],
            session_max=v["session_max"],
            session_geom_p=v["session_geom_p"],
            purchase_probs=tuple(v["purchase_probs"]),
            seed=self.seed,
            num_sessions=v["num_sessions"] if num_sessions is None else num_sessions,
        )

    def model_config(self, vocab_size: int) -> UbmConfig:
        v = self.values["model"]
        return UbmConfig.build(
            vocab_size,
            self.limits(),
            hidden_size=v["hidden_size"],
            num_layers=v["num_layers"],
            num_heads=v["num_heads"],
            ff_size=v["ff_size"],
            dropout_rate=v["dropout_rate"],
        )

    def mask_policy(self) -> MaskPolicy:
        return MaskPolicy(**self.values["mask"])

    def pretrain_config(self) -> PretrainConfig:
        v = self.values["pretrain"]
        return PretrainConfig(
            stage1_batch=v["stage1_batch"],
            stage2_batch=v["stage2_batch"],
            stage1_epochs=v["stage1_epochs"],
            stage2_epochs=v["stage2_epochs"],
            peak_lr=v["peak_lr"],
            warmup_fraction=v["warmup_fraction"],
            temperature=v["temperature"],
            loss_mode=v["loss_mode"],
            mask_policy=self.mask_policy(),
            reorder_max_distance=v["reorder_max_distance"],
            seed=self.seed,
        )

    def finetune_config(self, task: str) -> FinetuneConfig:
        v = self.values["finetune"]
        return FinetuneConfig(
            task=task,
            batch_size=v["batch_size"],
            lr=v["lr"],
            epochs=v["epochs"],
            seed=self.seed,
            threshold=v["threshold"],
            pool_refresh_interval=v["pool_refresh_interval"],
        )
