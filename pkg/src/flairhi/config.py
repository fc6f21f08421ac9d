"""Pipeline configuration: one serialisable object holding every stage parameter."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .preprocess import NlmParams
from .wmmask import WmEstimationConfig

# Keys that locate inputs/outputs or tune execution but never change a result.
_NON_PARAMETERS = {"flair", "t1", "brain_mask", "wm_atlas", "gm_atlas", "lesion_gt",
                   "labels", "out", "threads"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    flair: str | None = None
    t1: str | None = None
    brain_mask: str | None = None
    wm_atlas: str | None = None
    gm_atlas: str | None = None
    lesion_gt: tuple[str, ...] = ()
    labels: str | None = None
    out: str = "out"
    threads: int | None = None  # None: all available cores

    nlm: NlmParams = field(default_factory=NlmParams)
    bins: int = 1024
    gradient_bins: int = 1024
    net_radius: int = 10
    theta_step: int = 60
    neighborhood_radius: int = 1
    wm: WmEstimationConfig = field(default_factory=WmEstimationConfig)
    k: int = 3
    seed: int = 0
    overlays: bool = True
    overlay_slice: int | None = None  # None: slice with the most lesion voxels, else middle

    def __post_init__(self):
        object.__setattr__(self, "lesion_gt", tuple(str(p) for p in self.lesion_gt))

    def validate(self) -> PipelineConfig:
        problems = []
        if self.bins < 2 or self.gradient_bins < 2:
            problems.append("bins and gradient_bins must be >= 2")
        if self.net_radius < 1:
            problems.append("net_radius must be >= 1")
        if self.theta_step <= 0 or 360 % self.theta_step:
            problems.append("theta_step must be a positive divisor of 360")
        if self.neighborhood_radius < 0:
            problems.append("neighborhood_radius must be >= 0")
        if self.k < 2:
            problems.append("k must be >= 2")
        if self.threads is not None and self.threads < 1:
            problems.append("threads must be >= 1")
        if self.overlay_slice is not None and self.overlay_slice < 0:
            problems.append("overlay_slice must be >= 0")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lesion_gt"] = list(self.lesion_gt)
        if math.isinf(d["wm"]["k_sigma"]):
            d["wm"]["k_sigma"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> PipelineConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        try:
            if isinstance(d.get("nlm"), dict):
                d["nlm"] = NlmParams(**d["nlm"])
            if isinstance(d.get("wm"), dict):
                wm = dict(d["wm"])
                if "k_sigma" in wm:
                    wm["k_sigma"] = float(wm["k_sigma"])
                d["wm"] = WmEstimationConfig(**wm)
            if isinstance(d.get("lesion_gt"), str):
                d["lesion_gt"] = (d["lesion_gt"],)
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> PipelineConfig:
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc

    def override(self, **changes) -> PipelineConfig:
        """Copy with the non-None entries of ``changes`` applied (flags win over file)."""
        changes = {k: v for k, v in changes.items() if v is not None}
        if "k_sigma" in changes:
            changes["wm"] = replace(self.wm, k_sigma=float(changes.pop("k_sigma")))
        return replace(self, **changes)

    def provenance(self) -> dict:
        """Inputs and parameters; leaves out where results go and how many threads ran."""
        return {k: v for k, v in self.to_dict().items() if k not in ("out", "threads")}

    def parameters(self) -> dict:
        """Every setting that can change an output."""
        return {k: v for k, v in self.to_dict().items() if k not in _NON_PARAMETERS}

    @property
    def config_hash(self) -> str:
        return digest(self.parameters())


def digest(obj) -> str:
    """sha256 of the canonical JSON encoding of ``obj``."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
