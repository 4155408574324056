"""Raw-sequence container format and the synthetic scene oracle.

Raw container (one file per frame, little-endian)::

    offset  size  field
         0     4  magic b"NRS1"
         4     2  format version (u16, = 1)
         6     4  mosaic width (u32, even)
        10     4  mosaic height (u32, even)
        14     1  CFA code (u8: 0 RGGB, 1 BGGR, 2 GRBG, 3 GBRG)
        15     1  reserved (u8)
        16     2  black level (u16)
        18     2  white level (u16, > black level)
        20   2HW  mosaic, u16 row-major

Each frame ``name.nrs`` has a text sidecar ``name.txt`` of ``key = value``
lines (``iso``, ``exposure_time_s``, ``f_number``, ``nlf_read``,
``nlf_shot``, ``camera_id``, ``scene_id``; other keys are kept as-is). A
sequence directory holds the frames plus ``manifest.txt`` listing members in
capture order.

The synthetic generator stands in for real captures: it renders a latent
radiance map under any setting with exact exposure physics, disc defocus
and NLF noise. Its NLF magnitudes are invented, not measured.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.signal import fftconvolve

from .errors import FormatError, ParameterError, SettingsRangeWarning
from .exposure import ExposureScale, compute_alpha
from .noise import synthesize_noise
from .raw import CFA_ORDERS, ExposureSettings, NoiseLevelFunction, RawImage, pack_bayer, unpack_bayer

MAGIC = b"NRS1"
VERSION = 1
HEADER = struct.Struct("<4sHIIBBHH")
SIDECAR_KEYS = ("iso", "exposure_time_s", "f_number", "nlf_read", "nlf_shot", "camera_id", "scene_id")

ISO_RANGE = (100.0, 16000.0)
TIME_RANGE = (1.0 / 8000.0, 4.0)
FNUMBER_RANGE = (4.0, 22.0)

DEFAULT_WHITE_LEVEL = 16383
DEFAULT_BLACK_LEVEL = 512
DEFAULT_SIZE = 128
# radius (half-resolution pixels) = k * |1/d - 1/d_f| / n; k scales with frame size
BLUR_CONSTANT_PER_128 = 36.0


def synthetic_nlf(iso) -> NoiseLevelFunction:
    """Invented per-ISO calibration: shot term linear in gain, read term quadratic."""
    gain = float(iso) / 100.0
    return NoiseLevelFunction(read=4e-7 * gain * gain, shot=8e-5 * gain)


def make_settings(t, iso, n, nlf: NoiseLevelFunction | None = None) -> ExposureSettings:
    return ExposureSettings(t, iso, n, synthetic_nlf(iso) if nlf is None else nlf)


REFERENCE_SETTINGS = make_settings(Fraction(1, 100), 100, 8.0)


def check_settings_range(s: ExposureSettings, where: str = "") -> None:
    """Warn (never raise) when settings leave the dataset's sampled ranges."""
    for label, value, (lo, hi) in (("ISO", float(s.g), ISO_RANGE),
                                   ("exposure time", float(s.t), TIME_RANGE),
                                   ("f-number", float(s.n), FNUMBER_RANGE)):
        if not lo <= value <= hi:
            warnings.warn(f"{where}{label} {value:g} outside [{lo:g}, {hi:g}]",
                          SettingsRangeWarning, stacklevel=3)


# --------------------------------------------------------------------------- container


def encode_container(mosaic, black_level: int, white_level: int, cfa_order: str = "RGGB") -> bytes:
    mosaic = np.asarray(mosaic)
    h, w = mosaic.shape
    if h % 2 or w % 2:
        raise ParameterError(f"mosaic dimensions must be even, got {h}x{w}")
    if not 0 <= black_level < white_level <= 0xFFFF:
        raise ParameterError("levels must satisfy 0 <= black < white <= 65535")
    if mosaic.size and (mosaic.min() < 0 or mosaic.max() > 0xFFFF):
        raise ParameterError("mosaic values must fit in u16")
    header = HEADER.pack(MAGIC, VERSION, w, h, CFA_ORDERS.index(cfa_order), 0,
                         black_level, white_level)
    return header + np.ascontiguousarray(mosaic, dtype="<u2").tobytes()


@dataclass(frozen=True)
class ContainerHeader:
    width: int
    height: int
    cfa_order: str
    black_level: int
    white_level: int
    version: int = VERSION


def decode_container(blob: bytes) -> tuple[np.ndarray, ContainerHeader]:
    """Parse a raw container; raises :class:`FormatError` carrying the byte offset."""
    if len(blob) < 4:
        raise FormatError("truncated header", offset=len(blob))
    if blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}", offset=0)
    if len(blob) < HEADER.size:
        raise FormatError("truncated header", offset=len(blob))
    _, version, w, h, cfa, _, black, white = HEADER.unpack_from(blob)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if w == 0 or w % 2:
        raise FormatError(f"invalid width {w}", offset=6)
    if h == 0 or h % 2:
        raise FormatError(f"invalid height {h}", offset=10)
    if cfa >= len(CFA_ORDERS):
        raise FormatError(f"invalid CFA code {cfa}", offset=14)
    if white <= black:
        raise FormatError(f"white level {white} <= black level {black}", offset=16)
    need = HEADER.size + 2 * w * h
    if len(blob) < need:
        raise FormatError(f"truncated payload: expected {need} bytes, got {len(blob)}",
                          offset=len(blob))
    if len(blob) > need:
        raise FormatError("trailing bytes after payload", offset=need)
    mosaic = np.frombuffer(blob, dtype="<u2", count=w * h, offset=HEADER.size).reshape(h, w)
    return mosaic.astype(np.uint16), ContainerHeader(w, h, CFA_ORDERS[cfa], black, white, version)


def write_raw(path, raw: RawImage) -> None:
    """Write a frame's container and, when it has settings, its sidecar."""
    path = Path(path)
    path.write_bytes(encode_container(pack_bayer(raw), raw.black_level, raw.white_level,
                                      raw.cfa_order))
    if raw.settings is not None:
        write_sidecar(path.with_suffix(".txt"), raw.settings, raw.meta)


def read_raw(path) -> RawImage:
    path = Path(path)
    mosaic, head = decode_container(path.read_bytes())
    settings, meta = None, {}
    sidecar = path.with_suffix(".txt")
    if sidecar.exists():
        settings, meta = read_sidecar(sidecar)
    raw = unpack_bayer(mosaic, head.black_level, head.white_level, head.cfa_order, settings)
    return RawImage(**{**_raw_fields(raw), "meta": meta})


def _raw_fields(raw: RawImage) -> dict:
    return dict(data=raw.data, cfa_order=raw.cfa_order, black_level=raw.black_level,
                white_level=raw.white_level, settings=raw.settings, meta=raw.meta)


# --------------------------------------------------------------------------- sidecar


def _fmt(value) -> str:
    return repr(float(value)) if not isinstance(value, str) else value


def write_sidecar(path, settings: ExposureSettings, meta: dict | None = None) -> None:
    meta = dict(meta or {})
    values = {
        "iso": _fmt(settings.g),
        "exposure_time_s": _fmt(settings.t),
        "f_number": _fmt(settings.n),
        "nlf_read": _fmt(settings.nlf.read),
        "nlf_shot": _fmt(settings.nlf.shot),
        "camera_id": str(meta.pop("camera_id", "")),
        "scene_id": str(meta.pop("scene_id", "")),
    }
    values.update({k: str(v) for k, v in meta.items()})
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in values.items()))


def parse_key_values(text: str) -> list[tuple[str, str]]:
    items, offset = [], 0
    for line in text.splitlines(keepends=True):
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            if "=" not in stripped:
                raise FormatError(f"expected 'key = value', got {stripped!r}", offset=offset)
            key, value = stripped.split("=", 1)
            items.append((key.strip(), value.strip()))
        offset += len(line.encode("utf-8"))
    return items


def read_sidecar(path) -> tuple[ExposureSettings, dict]:
    """Returns the frame's settings and every other key (including ids) as metadata."""
    items = dict(parse_key_values(Path(path).read_text()))
    try:
        nlf = NoiseLevelFunction(float(items.pop("nlf_read", 0.0)), float(items.pop("nlf_shot", 0.0)))
        settings = ExposureSettings(float(items.pop("exposure_time_s")), float(items.pop("iso")),
                                    float(items.pop("f_number")), nlf)
    except KeyError as exc:
        raise FormatError(f"{path}: missing sidecar key {exc.args[0]!r}") from None
    except (ValueError, ParameterError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    check_settings_range(settings, where=f"{Path(path).name}: ")
    return settings, items


# --------------------------------------------------------------------------- sequences


@dataclass
class SceneSequence:
    """Registered frames of one static scene, in capture order."""

    scene_id: str
    frames: list
    camera_id: str = "synthetic"
    illuminance_lux: Optional[float] = None

    def __post_init__(self):
        if not self.frames:
            raise ParameterError("a scene sequence needs at least one frame")
        shape, cfa = self.frames[0].shape, self.frames[0].cfa_order
        for f in self.frames:
            if f.shape != shape or f.cfa_order != cfa:
                raise ParameterError("all frames in a sequence must share size and CFA order")


def write_sequence(seq: SceneSequence, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lines = [f"scene_id = {seq.scene_id}", f"camera_id = {seq.camera_id}"]
    if seq.illuminance_lux is not None:
        lines.append(f"illuminance_lux = {seq.illuminance_lux!r}")
    for i, frame in enumerate(seq.frames):
        name = f"frame_{i:03d}"
        meta = {**frame.meta, "camera_id": seq.camera_id, "scene_id": seq.scene_id}
        write_raw(path / f"{name}.nrs", RawImage(**{**_raw_fields(frame), "meta": meta}))
        lines.append(f"member = {name}")
    (path / "manifest.txt").write_text("\n".join(lines) + "\n")


def read_sequence(path) -> SceneSequence:
    path = Path(path)
    manifest = path / "manifest.txt"
    if not manifest.exists():
        raise FormatError(f"{path}: no manifest.txt")
    items = parse_key_values(manifest.read_text())
    head = {k: v for k, v in items if k != "member"}
    members = [v for k, v in items if k == "member"]
    frames = []
    for name in members:
        raw = read_raw(path / f"{name}.nrs")
        meta = {k: v for k, v in raw.meta.items() if k not in ("camera_id", "scene_id")}
        frames.append(RawImage(**{**_raw_fields(raw), "meta": meta}))
    lux = head.get("illuminance_lux")
    return SceneSequence(head.get("scene_id", path.name), frames, head.get("camera_id", ""),
                         None if lux is None else float(lux))


def read_dataset(root) -> list[SceneSequence]:
    """Every sequence directory (one holding a manifest) under ``root``, sorted by name."""
    root = Path(root)
    if (root / "manifest.txt").exists():
        return [read_sequence(root)]
    dirs = sorted(p.parent for p in root.glob("*/manifest.txt"))
    if not dirs:
        raise FormatError(f"{root}: no sequences found")
    return [read_sequence(d) for d in dirs]


# --------------------------------------------------------------------------- synthetic scenes


@dataclass(eq=False)
class SyntheticScene:
    """Latent radiance (h, w, 4), depth in meters (h, w) and focus distance."""

    radiance: np.ndarray
    depth: np.ndarray
    focus_distance: float
    blur_constant: float = BLUR_CONSTANT_PER_128

    def __post_init__(self):
        if np.any(self.radiance < 0) or np.any(self.depth <= 0) or self.focus_distance <= 0:
            raise ParameterError("radiance must be >= 0 and depths positive")


def _rgb_to_planes(rgb):
    return np.stack([rgb[..., 0], rgb[..., 1], rgb[..., 1], rgb[..., 2]], axis=-1)


def _texture(rng, h, w):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    kind = rng.integers(3)
    if kind == 0:
        theta, period = rng.uniform(0, np.pi), rng.uniform(3.0, 8.0)
        return 0.5 + 0.5 * np.sin(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / period)
    if kind == 1:
        cell = int(rng.integers(2, 6))
        return ((yy // cell + xx // cell) % 2).astype(np.float64)
    noise = gaussian_filter(rng.standard_normal((h, w)), rng.uniform(0.7, 1.5))
    return np.clip(0.5 + noise / (4 * noise.std() + 1e-12), 0, 1)


def generate_synthetic_scene(seed=0, size: int = DEFAULT_SIZE, complexity: float = 1.0) -> SyntheticScene:
    """Piecewise-smooth textured radiance with a layered depth map.

    ``size`` is the mosaic edge length (even); the planes are ``size/2``.
    At ``complexity`` 0 the scene is a constant in-focus plane. Otherwise
    radiance spans more than two decades: a smooth log-domain background,
    a deep-shadow region, a bright window and textured primitives at
    several depths.
    """
    if size % 2 or size < 2:
        raise ParameterError(f"size must be even, got {size}")
    rng = np.random.default_rng(seed)
    h = w = size // 2
    k = BLUR_CONSTANT_PER_128 * size / DEFAULT_SIZE
    if complexity <= 0:
        return SyntheticScene(np.full((h, w, 4), 0.25), np.full((h, w), 1.5), 1.5, k)

    yy, xx = np.mgrid[0:h, 0:w] / max(h - 1, 1)
    # background: smooth log-radiance field, textured, far away
    log_bg = (-0.9 + rng.uniform(-0.3, 0.3) + rng.uniform(-0.6, 0.6) * (xx - 0.5)
              + rng.uniform(-0.6, 0.6) * (yy - 0.5))
    log_bg = log_bg + complexity * 0.3 * gaussian_filter(rng.standard_normal((h, w)), h / 8) * (h / 8)
    texture = _texture(rng, h, w)
    tint = rng.uniform(0.6, 1.0, 3)
    rgb = (10.0 ** log_bg)[..., None] * tint * (0.35 + 0.65 * texture[..., None])
    focus = rng.uniform(1.0, 2.0)
    depth = np.full((h, w), rng.uniform(6.0, 12.0))

    def rect():
        ch, cw = rng.integers(h // 6, h // 2, 2)
        i, j = rng.integers(0, h - ch), rng.integers(0, w - cw)
        m = np.zeros((h, w), bool)
        m[i:i + ch, j:j + cw] = True
        return m

    def disc():
        r = rng.uniform(h / 10, h / 4)
        ci, cj = rng.uniform(0, h), rng.uniform(0, w)
        return (np.mgrid[0:h, 0:w][0] - ci) ** 2 + (np.mgrid[0:h, 0:w][1] - cj) ** 2 < r * r

    n_objects = int(round(complexity * rng.integers(3, 6)))
    for idx in range(n_objects):
        mask = disc() if rng.random() < 0.5 else rect()
        level = 10.0 ** rng.uniform(-1.0, -0.15)
        obj = level * rng.uniform(0.3, 1.0, 3) * (0.3 + 0.7 * _texture(rng, h, w))[..., None]
        rgb[mask] = obj[mask]
        # first object always sits in the focal plane
        depth[mask] = focus if idx == 0 else rng.choice([focus, rng.uniform(0.6, 0.9) * focus,
                                                         rng.uniform(2.0, 5.0)])
    # deep shadow and bright window, applied last so objects cannot hide them,
    # keep the dynamic range above two decades
    shadow, window = rect(), rect()
    rgb[shadow & ~window] *= 10.0 ** rng.uniform(-2.0, -1.6)
    rgb[window] = 10.0 ** rng.uniform(0.2, 0.5) * rng.uniform(0.85, 1.0, 3)
    return SyntheticScene(_rgb_to_planes(rgb), depth, focus, k)


def generate_hdr_scene(seed=0, size: int = DEFAULT_SIZE, decades: float = 5.0) -> SyntheticScene:
    """In-focus ramp whose log radiance climbs ``decades`` across the frame, with texture.

    No single exposure can keep all of it inside the well-exposed band.
    """
    if size % 2 or size < 2:
        raise ParameterError(f"size must be even, got {size}")
    rng = np.random.default_rng(seed)
    h = w = size // 2
    xx = np.mgrid[0:h, 0:w][1] / max(w - 1, 1)
    log_r = -decades + 1.0 + decades * xx
    texture = 0.6 + 0.4 * _texture(rng, h, w)
    rgb = (10.0 ** log_r * texture)[..., None] * rng.uniform(0.8, 1.0, 3)
    return SyntheticScene(_rgb_to_planes(rgb), np.full((h, w), 1.5), 1.5,
                          BLUR_CONSTANT_PER_128 * size / DEFAULT_SIZE)


def defocus_radius(scene: SyntheticScene, n) -> np.ndarray:
    """Per-pixel blur-disc radius in half-resolution pixels."""
    return scene.blur_constant * np.abs(1.0 / scene.depth - 1.0 / scene.focus_distance) / float(n)


def disc_kernel(radius: float) -> np.ndarray:
    """Anti-aliased pillbox normalized to unit sum; radius 0 is the identity."""
    half = int(math.ceil(radius + 0.5))
    yy, xx = np.mgrid[-half:half + 1, -half:half + 1]
    k = np.clip(radius + 0.5 - np.hypot(yy, xx), 0.0, 1.0)
    return k / k.sum()


def apply_defocus(image: np.ndarray, radius: np.ndarray, step: float = 0.25) -> np.ndarray:
    """Spatially varying disc blur, linearly interpolated between radius levels."""
    rmax = float(radius.max()) if radius.size else 0.0
    if rmax <= 0:
        return image.copy()
    levels = np.arange(0.0, rmax + step, step)
    pad = int(math.ceil(rmax + 1))
    padded = np.pad(image, ((pad, pad), (pad, pad), (0, 0)), mode="reflect")
    h, w = image.shape[:2]
    pos = np.clip(radius / step, 0, len(levels) - 1)
    lo = np.floor(pos).astype(int)
    frac = pos - lo
    out = np.zeros_like(image)
    for li in np.unique(np.concatenate([lo, np.minimum(lo + 1, len(levels) - 1)])):
        wgt = np.where(lo == li, 1.0 - frac, 0.0) + np.where((lo + 1 == li), frac, 0.0)
        if not wgt.any():
            continue
        kern = disc_kernel(levels[li])[..., None]
        blurred = fftconvolve(padded, kern, mode="same", axes=(0, 1))[pad:pad + h, pad:pad + w]
        out += wgt[..., None] * blurred
    return out


def render_with_settings(scene: SyntheticScene, s: ExposureSettings,
                         reference: ExposureSettings = REFERENCE_SETTINGS, seed=0,
                         black_level: int = DEFAULT_BLACK_LEVEL,
                         white_level: int = DEFAULT_WHITE_LEVEL, cfa_order: str = "RGGB") -> RawImage:
    """Defocus at ``s.n``, scale by the exposure multiplier from ``reference``, add NLF noise."""
    blurred = apply_defocus(scene.radiance, defocus_radius(scene, s.n))
    signal = np.clip(blurred * float(compute_alpha(reference, s)), 0.0, 1.0)
    noisy = synthesize_noise(signal, s.nlf, seed)
    return RawImage(noisy, cfa_order, black_level, white_level, s)


def noise_settings(n: float = 8.0, reference: ExposureSettings = REFERENCE_SETTINGS):
    """Constant total exposure across ISO 100..3200."""
    isos = (100, 200, 400, 800, 1600, 3200)
    t_ref = Fraction(reference.t) * Fraction(reference.g)
    return [make_settings(t_ref / iso, iso, n) for iso in isos]


def aperture_settings(fnumbers=(8.0, 5.6, 4.0), reference: ExposureSettings = REFERENCE_SETTINGS,
                      clean: bool = False):
    """ISO 100 frames whose exposure time compensates the aperture change."""
    out = []
    for n in fnumbers:
        probe = ExposureSettings(reference.t, 100, n)
        t = ExposureScale.of(reference.t) / compute_alpha(reference, probe)
        out.append(make_settings(t, 100, n, NoiseLevelFunction() if clean else None))
    return out


def mixed_settings(reference: ExposureSettings = REFERENCE_SETTINGS):
    out = noise_settings(8.0, reference) + aperture_settings((5.6, 4.0), reference)
    for factor in (Fraction(1, 4), Fraction(1, 2), Fraction(2)):
        out.append(make_settings(Fraction(reference.t) * factor, 100, 8.0))
    return out


SETTINGS_KINDS = {"noise": noise_settings, "aperture": aperture_settings, "mixed": mixed_settings}


def render_sequence(scene: SyntheticScene, settings_list, scene_id: str, seed=0,
                    camera_id: str = "synthetic") -> SceneSequence:
    rng = np.random.default_rng(seed)
    frames = [render_with_settings(scene, s, seed=rng) for s in settings_list]
    return SceneSequence(scene_id, frames, camera_id)


def synthetic_dataset(n_scenes: int, size: int = DEFAULT_SIZE, seed=0, kind: str = "mixed",
                      clean: bool = False) -> list[SceneSequence]:
    """``n_scenes`` rendered sequences; ``kind`` picks the settings list per scene."""
    if kind not in SETTINGS_KINDS:
        raise ParameterError(f"unknown dataset kind {kind!r}")
    settings = aperture_settings(clean=clean) if kind == "aperture" else SETTINGS_KINDS[kind]()
    seqs = []
    for i in range(n_scenes):
        scene = generate_synthetic_scene(seed=(seed, i), size=size)
        seqs.append(render_sequence(scene, settings, f"scene_{i:04d}", seed=(seed, i, 1)))
    return seqs
