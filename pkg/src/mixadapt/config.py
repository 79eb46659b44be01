"""Run configuration: INI parsing, `--set section.key=value` overrides,
dataset construction and the self-contained resolved-config artifact.

A config has three sections. ``[dataset]`` names exactly one data source
(the synthetic generator or an ``.npz`` archive) plus the few-shot labeling
rule; ``[hyperparams]`` holds every training knob; ``[run]`` holds variant,
seeds and output options. ``config.resolved`` written into a run directory
pins every effective value (including the single seed actually used) so the
run can be reproduced from that file alone.
"""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass
from pathlib import Path

from .data import (
    SyntheticShiftConfig,
    apply_split,
    load_npz_dataset,
    load_split_file,
    make_synthetic_shift,
    sample_few_shot,
)
from .trainer import VARIANTS, HyperParams

OUTPUT_ROOT_ENV = "MIXADAPT_RUNS"

_SYNTH_FLOAT_KEYS = ("radius", "sigma", "rotation", "noise_scale")
_SYNTH_INT_KEYS = ("num_classes", "samples_per_class", "feature_dim")


@dataclass
class RunConfig:
    dataset_kind: str = "synthetic"
    synthetic: SyntheticShiftConfig | None = None
    dataset_path: str | None = None
    split_file: str | None = None
    shots: int | None = 1
    fraction: float | None = None
    balanced: bool = True
    data_seed: int | None = None
    hp: HyperParams = None
    variant: str = "full"
    out_root: str = "runs"
    seeds: tuple[int, ...] = (0,)
    checkpoint_interval: int = 0
    debug_dumps: bool = False

    def validate(self):
        if self.hp is None:
            raise ValueError("hyperparameters missing")
        if self.dataset_kind not in ("synthetic", "npz"):
            raise ValueError(f"unknown dataset kind {self.dataset_kind!r}")
        if self.dataset_kind == "synthetic" and self.synthetic is None:
            raise ValueError("synthetic dataset section missing")
        if self.dataset_kind == "npz" and not self.dataset_path:
            raise ValueError("npz dataset needs path=")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        label_rules = [self.shots is not None, self.fraction is not None, self.split_file is not None]
        if sum(label_rules) != 1:
            raise ValueError("specify exactly one of shots / fraction / split_file")
        if not self.seeds:
            raise ValueError("at least one seed required")
        self.hp.validate()
        return self

    # -- dataset construction ---------------------------------------------

    def make_datasets(self, seed: int):
        """Build ``(d_ls, d_us, d_ut_labeled)`` for one run seed."""
        data_seed = self.data_seed if self.data_seed is not None else int(seed)
        if self.dataset_kind == "synthetic":
            source, target = make_synthetic_shift(self.synthetic, seed=data_seed)
        else:
            source, target = load_npz_dataset(self.dataset_path)
        if self.split_file is not None:
            split = load_split_file(self.split_file, source)
            d_ls, d_us = apply_split(source, split)
        else:
            d_ls, d_us = sample_few_shot(
                source,
                shots=self.shots,
                fraction=self.fraction,
                seed=data_seed,
                balanced=self.balanced,
            )
        return d_ls, d_us, target

    # -- serialization -------------------------------------------------------

    def resolved_text(self, seed: int) -> str:
        """Fully-resolved INI text for one concrete run."""
        cp = configparser.ConfigParser(interpolation=None)
        cp["dataset"] = {}
        ds = cp["dataset"]
        ds["kind"] = self.dataset_kind
        if self.synthetic is not None:
            s = self.synthetic
            for k in _SYNTH_INT_KEYS + _SYNTH_FLOAT_KEYS:
                ds[k] = repr(getattr(s, k))
            ds["translation"] = ",".join(repr(t) for t in s.translation)
            ds["mode"] = s.mode
        if self.dataset_path is not None:
            ds["path"] = self.dataset_path
        if self.split_file is not None:
            ds["split_file"] = self.split_file
        elif self.shots is not None:
            ds["shots"] = str(self.shots)
        else:
            ds["fraction"] = repr(self.fraction)
        ds["balanced"] = str(self.balanced).lower()
        ds["data_seed"] = str(self.data_seed if self.data_seed is not None else int(seed))

        cp["hyperparams"] = {}
        hp_section = cp["hyperparams"]
        for k, v in self.hp.to_dict().items():
            if k == "seed":
                continue
            hp_section[k] = repr(v) if isinstance(v, float) else str(v)
        hp_section["seed"] = str(int(seed))

        cp["run"] = {
            "variant": self.variant,
            "output": self.out_root,
            "seeds": str(int(seed)),
            "checkpoint_interval": str(self.checkpoint_interval),
            "debug_dumps": str(self.debug_dumps).lower(),
        }
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def apply_overrides(cp: configparser.ConfigParser, overrides):
    """Apply `section.key=value` strings onto the parsed config."""
    for item in overrides or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ValueError(f"override must look like section.key=value, got {item!r}")
        target, value = item.split("=", 1)
        section, key = target.split(".", 1)
        if section not in cp:
            cp[section] = {}
        cp[section][key.strip()] = value.strip()


def parse_config_text(text: str, overrides=()) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.read_string(text)
    apply_overrides(cp, overrides)

    ds = cp["dataset"] if "dataset" in cp else {}
    kind = ds.get("kind", "synthetic")
    synthetic = None
    dataset_path = ds.get("path") or None
    if kind == "synthetic":
        kwargs = {}
        for k in _SYNTH_INT_KEYS:
            if k in ds:
                kwargs[k] = int(ds[k])
        for k in _SYNTH_FLOAT_KEYS:
            if k in ds:
                kwargs[k] = float(ds[k])
        if ds.get("translation", "").strip():
            kwargs["translation"] = tuple(float(t) for t in ds["translation"].split(","))
        if "mode" in ds:
            kwargs["mode"] = ds["mode"]
        synthetic = SyntheticShiftConfig(**kwargs)

    shots = int(ds["shots"]) if "shots" in ds else None
    fraction = float(ds["fraction"]) if "fraction" in ds else None
    split_file = ds.get("split_file") or None
    if shots is None and fraction is None and split_file is None:
        shots = 1

    hp_raw = dict(cp["hyperparams"]) if "hyperparams" in cp else {}
    hp = HyperParams.from_dict(hp_raw)

    run = cp["run"] if "run" in cp else {}
    seeds_text = run.get("seeds", "0")
    seeds = tuple(int(s) for s in seeds_text.replace(",", " ").split())
    out_root = run.get("output") or os.environ.get(OUTPUT_ROOT_ENV, "runs")

    cfg = RunConfig(
        dataset_kind=kind,
        synthetic=synthetic,
        dataset_path=dataset_path,
        split_file=split_file,
        shots=shots,
        fraction=fraction,
        balanced=_parse_bool(ds.get("balanced", "true")),
        data_seed=int(ds["data_seed"]) if "data_seed" in ds else None,
        hp=hp,
        variant=run.get("variant", "full"),
        out_root=out_root,
        seeds=seeds,
        checkpoint_interval=int(run.get("checkpoint_interval", "0")),
        debug_dumps=_parse_bool(run.get("debug_dumps", "false")),
    )
    return cfg.validate()


def parse_config(path, overrides=()) -> RunConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), overrides)
