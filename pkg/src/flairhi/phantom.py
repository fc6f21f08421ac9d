"""Seeded synthetic FLAIR brain phantoms with exact tissue and lesion truth.

Geometry is a brain ellipsoid split by normalised ellipsoidal radius into a
WM core, a GM shell and a CSF rim, with spherical lesions carved into it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage


class PhantomSpecError(ValueError):
    pass


@dataclass(frozen=True)
class Lesion:
    center: tuple[float, float, float]
    radius: float
    intensity: float


# FLAIR-like tiers: lesions 25% over WM and ~19% over GM
DEFAULT_TIERS = {"csf": 150.0, "gm": 420.0, "wm": 400.0}
DEFAULT_LESION_INTENSITY = 500.0
# T1-like tiers: WM brightest, lesions hypointense
DEFAULT_T1_TIERS = {"csf": 200.0, "gm": 550.0, "wm": 800.0, "lesion": 500.0}

# (fractional centre, radius as a fraction of the smallest brain semi-axis)
_DEFAULT_LESIONS = [
    ((0.40, 0.42, 0.50), 0.16),
    ((0.60, 0.45, 0.55), 0.13),
    ((0.50, 0.60, 0.42), 0.14),
    ((0.45, 0.55, 0.62), 0.10),
    ((0.58, 0.58, 0.48), 0.10),
]


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int] = (64, 64, 48)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    brain_semi_axes: tuple[float, float, float] | None = None  # default 0.44 * dims
    wm_radius: float = 0.65   # normalised radius where WM core ends
    csf_radius: float = 0.88  # normalised radius where the CSF rim starts
    csf_mean: float = DEFAULT_TIERS["csf"]
    gm_mean: float = DEFAULT_TIERS["gm"]
    wm_mean: float = DEFAULT_TIERS["wm"]
    lesions: tuple[Lesion, ...] = field(default_factory=tuple)
    t1_csf_mean: float = DEFAULT_T1_TIERS["csf"]
    t1_gm_mean: float = DEFAULT_T1_TIERS["gm"]
    t1_wm_mean: float = DEFAULT_T1_TIERS["wm"]
    t1_lesion_mean: float = DEFAULT_T1_TIERS["lesion"]
    noise_sigma: float = 15.0
    atlas_scale: float = 1.5  # voxels; logistic width of the atlas edges
    seed: int = 0

    @property
    def semi_axes(self) -> tuple[float, float, float]:
        if self.brain_semi_axes is not None:
            return tuple(self.brain_semi_axes)
        return tuple(0.44 * d for d in self.dims)

    @property
    def center(self) -> tuple[float, float, float]:
        return tuple((d - 1) / 2.0 for d in self.dims)

    @classmethod
    def default(cls, **overrides) -> PhantomSpec:
        return cls._preset(overrides.pop("dims", (64, 64, 48)), **overrides)

    @classmethod
    def paper_scale(cls, **overrides) -> PhantomSpec:
        return cls._preset(overrides.pop("dims", (181, 217, 181)), **overrides)

    @classmethod
    def _preset(cls, dims, **overrides) -> PhantomSpec:
        axes = tuple(0.44 * d for d in dims)
        lesions = tuple(
            Lesion(
                center=tuple(round(f * d, 2) for f, d in zip(frac, dims)),
                radius=round(rfrac * min(axes), 2),
                intensity=DEFAULT_LESION_INTENSITY,
            )
            for frac, rfrac in _DEFAULT_LESIONS
        )
        kw = {"dims": tuple(dims), "lesions": lesions}
        kw.update(overrides)
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lesions"] = [asdict(les) for les in self.lesions]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> PhantomSpec:
        d = dict(d)
        preset = d.pop("preset", None)
        if "lesions" in d:
            d["lesions"] = tuple(
                Lesion(tuple(les["center"]), float(les["radius"]), float(les["intensity"]))
                for les in d["lesions"]
            )
        for key in ("dims", "spacing", "brain_semi_axes"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        if preset == "paper":
            return cls.paper_scale(**d)
        if preset == "default":
            return cls.default(**d)
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> PhantomSpec:
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class Phantom:
    flair: np.ndarray
    flair_clean: np.ndarray
    t1: np.ndarray
    brain_mask: np.ndarray
    wm_truth: np.ndarray
    gm_truth: np.ndarray
    csf_truth: np.ndarray
    lesion_truth: np.ndarray
    wm_atlas: np.ndarray
    gm_atlas: np.ndarray
    spec: PhantomSpec

    def masks(self) -> dict[str, np.ndarray]:
        return {
            "brain_mask": self.brain_mask,
            "wm_truth": self.wm_truth,
            "gm_truth": self.gm_truth,
            "csf_truth": self.csf_truth,
            "lesion_truth": self.lesion_truth,
        }


def _soft_indicator(region: np.ndarray, scale: float) -> np.ndarray:
    """Logistic of the signed distance to the region boundary; in (0, 1)."""
    inside = ndimage.distance_transform_edt(region)
    outside = ndimage.distance_transform_edt(~region)
    signed = np.where(region, inside - 0.5, -(outside - 0.5))
    return 1.0 / (1.0 + np.exp(-signed / scale))


def _validate(spec: PhantomSpec) -> None:
    if len(spec.dims) != 3 or min(spec.dims) < 3:
        raise PhantomSpecError(f"dims must be three integers >= 3, got {spec.dims}")
    if not 0 < spec.wm_radius < spec.csf_radius < 1:
        raise PhantomSpecError("need 0 < wm_radius < csf_radius < 1")
    if spec.noise_sigma < 0:
        raise PhantomSpecError("noise_sigma must be >= 0")
    for les in spec.lesions:
        if les.radius <= 0:
            raise PhantomSpecError(f"lesion radius must be > 0: {les}")
        if not (les.intensity > spec.wm_mean and les.intensity > spec.gm_mean):
            raise PhantomSpecError(f"lesion must be brighter than WM and GM: {les}")


def generate_phantom(spec: PhantomSpec | None = None) -> Phantom:
    """Build the phantom; identical specs give bit-identical outputs.

    Noise is added only inside the brain, background stays exactly 0.
    """
    spec = spec or PhantomSpec.default()
    _validate(spec)
    shape = tuple(int(d) for d in spec.dims)
    grid = np.indices(shape, dtype=np.float64)
    rho = np.sqrt(sum(((g - c) / a) ** 2 for g, c, a in zip(grid, spec.center, spec.semi_axes)))

    brain = rho <= 1.0
    wm_region = rho <= spec.wm_radius
    csf = brain & (rho > spec.csf_radius)
    gm = brain & ~wm_region & ~csf

    lesion = np.zeros(shape, bool)
    clean = np.zeros(shape)
    clean[csf] = spec.csf_mean
    clean[gm] = spec.gm_mean
    clean[wm_region] = spec.wm_mean
    t1_clean = np.zeros(shape)
    t1_clean[csf] = spec.t1_csf_mean
    t1_clean[gm] = spec.t1_gm_mean
    t1_clean[wm_region] = spec.t1_wm_mean
    for les in spec.lesions:
        dist2 = sum((g - c) ** 2 for g, c in zip(grid, les.center))
        ball = dist2 <= les.radius ** 2
        if not ball.any():
            raise PhantomSpecError(f"lesion covers no voxel: {les}")
        if (ball & ~brain).any():
            raise PhantomSpecError(f"lesion extends outside the brain: {les}")
        lesion |= ball
        clean[ball] = les.intensity
        t1_clean[ball] = spec.t1_lesion_mean

    wm = wm_region & ~lesion
    gm &= ~lesion
    csf &= ~lesion

    rng = np.random.default_rng(spec.seed)
    if spec.noise_sigma > 0:
        noise = rng.normal(0.0, spec.noise_sigma, (2,) + shape)
    else:
        noise = np.zeros((2,) + shape)
    flair = np.where(brain, clean + noise[0], 0.0)
    t1 = np.where(brain, t1_clean + noise[1], 0.0)

    return Phantom(
        flair=flair,
        flair_clean=clean,
        t1=t1,
        brain_mask=brain,
        wm_truth=wm,
        gm_truth=gm,
        csf_truth=csf,
        lesion_truth=lesion,
        wm_atlas=_soft_indicator(wm_region, spec.atlas_scale),
        gm_atlas=_soft_indicator(brain & ~wm_region & ~(rho > spec.csf_radius), spec.atlas_scale),
        spec=spec,
    )


def save_phantom(ph: Phantom, out_dir) -> dict[str, Path]:
    """Write every phantom volume as NIfTI plus the phantom parameters as ``phantom.json``."""
    from .nifti import write_mask, write_volume
    from .volume import Volume3D

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name in ("flair", "flair_clean", "t1", "wm_atlas", "gm_atlas"):
        paths[name] = out / f"{name}.nii"
        write_volume(Volume3D(getattr(ph, name), ph.spec.spacing), paths[name], "float32")
    for name, m in ph.masks().items():
        paths[name] = out / f"{name}.nii"
        write_mask(m, paths[name], like=Volume3D(ph.flair, ph.spec.spacing))
    paths["spec"] = out / "phantom.json"
    paths["spec"].write_text(json.dumps(ph.spec.to_dict(), indent=2) + "\n")
    return paths
