"""End-to-end simulator: exposure -> noise -> aperture -> output re-noising.

Also holds pair selection, staged training with joint finetuning,
per-stage evaluation and the on-disk model bundle.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .aperture import ApertureNet, aperture_forward, aperture_input, fnumber_condition, train_aperture
from .errors import DegenerateDataError, FormatError, ParameterError
from .exposure import ExposureCorrection, apply_exposure, compute_alpha, fit_exposure_correction
from .nn import adam_step, l1_loss, load_checkpoint, save_checkpoint, zero_grads
from .noise import (LOW_ISO_TARGETS, DenoiserNet, denoise, denoiser_input, noise_level_map,
                    propagate_nlf, synthesize_noise, train_denoiser)
from .raw import ExposureSettings, RawImage, compute_psnr, compute_ssim
from .training import TrainSchedule, random_crop

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
STAGES = ("exposure", "noise", "aperture")


@dataclass
class SimulatorModel:
    exposure: ExposureCorrection = field(default_factory=ExposureCorrection)
    denoiser: DenoiserNet = field(default_factory=DenoiserNet)
    aperture: ApertureNet = field(default_factory=ApertureNet)
    config: dict = field(default_factory=lambda: {"nlf_mode": "physical", "seed": 0})
    history: dict = field(default_factory=dict, repr=False)

    @classmethod
    def create(cls, base_width=16, depth=3, seed=0) -> "SimulatorModel":
        return cls(ExposureCorrection(), DenoiserNet(base_width, depth, seed),
                   ApertureNet(base_width, depth, seed + 1), {"nlf_mode": "physical", "seed": seed})


@dataclass(frozen=True)
class SimulateOptions:
    exposure: bool = True
    noise: bool = True
    aperture: bool = True
    renoise: bool = True
    seed: int = 0
    nlf_mode: str | None = None


@dataclass
class StageOutputs:
    exposure: RawImage
    noise: RawImage
    aperture: RawImage
    output: RawImage
    alpha_hat: float


def simulate_stages(model: SimulatorModel, raw_in: RawImage, target: ExposureSettings,
                    options: SimulateOptions | None = None) -> StageOutputs:
    options = options or SimulateOptions()
    src = raw_in.settings
    if src is None:
        raise ParameterError("input raw has no exposure settings")
    if options.exposure:
        alpha_hat = model.exposure.w * float(compute_alpha(src, target))
        i_exp = apply_exposure(raw_in, compute_alpha(src, target), model.exposure, target)
    else:
        alpha_hat = 1.0
        i_exp = raw_in.with_data(raw_in.data, target)
    if options.noise:
        mode = options.nlf_mode or model.config.get("nlf_mode", "physical")
        nlm = noise_level_map(i_exp, propagate_nlf(src.nlf, alpha_hat, mode))
        i_ns = denoise(i_exp, nlm, model.denoiser)
    else:
        i_ns = i_exp
    # defocus removal is out of scope: only widening apertures reach the network
    if options.aperture and float(target.n) <= float(src.n):
        i_ap = aperture_forward(i_ns, src.n, target.n, model.aperture)
    else:
        i_ap = i_ns
    out = synthesize_noise(i_ap, target.nlf, options.seed) if options.renoise else i_ap
    return StageOutputs(i_exp, i_ns, i_ap, out, alpha_hat)


def simulate(model: SimulatorModel, raw_in: RawImage, target: ExposureSettings,
             options: SimulateOptions | None = None) -> RawImage:
    """Raw frame the sensor would record for ``raw_in``'s scene under ``target``."""
    return simulate_stages(model, raw_in, target, options).output


# --------------------------------------------------------------------------- pair selection


@dataclass(frozen=True)
class FramePair:
    scene_id: str
    source_index: int
    target_index: int
    source: RawImage
    target: RawImage


def _pair_allowed(src: ExposureSettings, dst: ExposureSettings, stage: str) -> bool:
    if stage == "exposure":
        return True
    if stage == "noise":
        return float(dst.g) in LOW_ISO_TARGETS
    if stage == "aperture":
        return float(dst.n) < float(src.n)
    if stage == "joint":
        return float(dst.g) in LOW_ISO_TARGETS and float(dst.n) <= float(src.n)
    raise ParameterError(f"unknown stage {stage!r}")


def select_pairs(sequences, stage: str) -> list[FramePair]:
    """Ordered same-scene pairs allowed for ``stage``, in a deterministic order.

    exposure: every ordered pair; noise: target ISO in {100, 200, 400};
    aperture: target f-number strictly smaller; joint: noise rule with a
    non-narrowing aperture.
    """
    pairs = []
    for seq in sorted(sequences, key=lambda s: s.scene_id):
        frames = seq.frames
        for i, a in enumerate(frames):
            for j, b in enumerate(frames):
                if i != j and _pair_allowed(a.settings, b.settings, stage):
                    pairs.append(FramePair(seq.scene_id, i, j, a, b))
    pairs.sort(key=lambda p: (p.scene_id, p.source.settings.key(), p.target.settings.key(),
                              p.source_index, p.target_index))
    return pairs


# --------------------------------------------------------------------------- training


def _exposure_stage(model, pair, mode):
    src, dst = pair.source, pair.target
    alpha = compute_alpha(src.settings, dst.settings)
    i_exp = apply_exposure(src, alpha, model.exposure, dst.settings)
    nlf = propagate_nlf(src.settings.nlf, model.exposure.w * float(alpha), mode)
    return i_exp, noise_level_map(i_exp, nlf)


def _require(pairs, stage):
    if not pairs:
        raise DegenerateDataError(f"no training pairs for the {stage} stage")


def train(model: SimulatorModel, dataset, schedule: TrainSchedule | None = None) -> SimulatorModel:
    """Train exposure, noise and aperture stages in order, then finetune jointly.

    Loss curves are stored in ``model.history``. The exposure refinement is
    held fixed during joint finetuning.
    """
    schedule = schedule or TrainSchedule()
    rng = np.random.default_rng(schedule.seed)
    mode = model.config.get("nlf_mode", "physical")
    dataset = list(dataset)

    if schedule.exposure_epochs > 0:
        pairs = select_pairs(dataset, "exposure")
        _require(pairs, "exposure")
        model.exposure = fit_exposure_correction(
            (p.source, p.target, compute_alpha(p.source.settings, p.target.settings)) for p in pairs)
        model.history["exposure"] = list(model.exposure.history)
        log.info("exposure stage: w=%.6f b=%.6f", model.exposure.w, model.exposure.b)

    if schedule.noise_epochs > 0:
        pairs = select_pairs(dataset, "noise")
        _require(pairs, "noise")
        triples = [(*_exposure_stage(model, p, mode), p.target) for p in pairs]
        _, model.history["noise"] = train_denoiser(triples, model.denoiser, schedule,
                                                   schedule.noise_epochs, rng)

    if schedule.aperture_epochs > 0:
        pairs = select_pairs(dataset, "aperture")
        _require(pairs, "aperture")
        quads = []
        for p in pairs:
            i_exp, nlm = _exposure_stage(model, p, mode)
            quads.append((denoise(i_exp, nlm, model.denoiser), p.source.settings.n,
                          p.target.settings.n, p.target))
        _, model.history["aperture"] = train_aperture(quads, model.aperture, schedule,
                                                      schedule.aperture_epochs, rng)

    if schedule.joint_epochs > 0:
        pairs = select_pairs(dataset, "joint")
        _require(pairs, "joint")
        model.history["joint"] = _finetune_jointly(model, pairs, schedule, rng, mode)
    return model


def _finetune_jointly(model, pairs, schedule, rng, mode):
    examples = []
    for p in pairs:
        i_exp, nlm = _exposure_stage(model, p, mode)
        cond = fnumber_condition(p.source.settings.n, p.target.settings.n)
        examples.append((denoiser_input(i_exp, nlm), i_exp.data, p.target.data, cond))
    den, ap = model.denoiser, model.aperture
    params = den.parameters() + ap.parameters()
    curve = []
    for epoch in range(schedule.joint_epochs):
        lr = schedule.lr_at(epoch)
        order = rng.permutation(len(examples))
        if schedule.pairs_per_epoch is not None:
            order = order[:schedule.pairs_per_epoch]
        losses = []
        for k in order:
            inp, base, target = random_crop(list(examples[k][:3]), schedule.patch_size, rng)
            cond = examples[k][3][None]
            zero_grads(params)
            ns_raw = base[None] + den.forward(inp[None])
            ns = np.clip(ns_raw, 0.0, 1.0)
            ap_in = np.concatenate([ns, np.broadcast_to(cond[:, None, None, :], ns.shape[:3] + (2,))],
                                   axis=-1)
            out_raw = ns + ap.forward(ap_in, cond)
            out = np.clip(out_raw, 0.0, 1.0)
            loss, grad = l1_loss(out, target[None])
            grad = grad * ((out_raw > 0) & (out_raw < 1))
            d_ns = grad + ap.backward(grad)[..., :4]
            d_ns = d_ns * ((ns_raw > 0) & (ns_raw < 1))
            den.backward(d_ns)
            adam_step(params, lr)
            losses.append(loss)
        curve.append(float(np.mean(losses)))
        log.info("joint epoch %d/%d lr=%.1e loss=%.5f", epoch + 1, schedule.joint_epochs, lr, curve[-1])
    return curve


# --------------------------------------------------------------------------- evaluation


@dataclass
class EvalReport:
    """Mean PSNR/SSIM after the exposure stage, the noise stage and the full model."""

    rows: list = field(default_factory=list)
    pairs: int = 0

    COLUMNS = ("EXP", "NS", "Full")

    def as_dict(self):
        return {name: {"psnr": p, "ssim": s} for name, p, s in self.rows}

    def to_delimited(self, sep: str = ",") -> str:
        lines = [sep.join(("metric",) + self.COLUMNS)]
        d = self.as_dict()
        for metric in ("psnr", "ssim"):
            lines.append(sep.join([metric] + [f"{d[c][metric]:.6f}" for c in self.COLUMNS]))
        return "\n".join(lines) + "\n"


def evaluate(model: SimulatorModel, test_sequences, stage: str = "exposure",
             options: SimulateOptions | None = None) -> EvalReport:
    """Average metrics over the ``stage``-selected pairs of ``test_sequences``."""
    options = options or SimulateOptions()
    pairs = select_pairs(test_sequences, stage)
    scores = {c: ([], []) for c in EvalReport.COLUMNS}
    for k, p in enumerate(pairs):
        opts = SimulateOptions(options.exposure, options.noise, options.aperture,
                               options.renoise, options.seed + k, options.nlf_mode)
        out = simulate_stages(model, p.source, p.target.settings, opts)
        for name, img in zip(EvalReport.COLUMNS, (out.exposure, out.noise, out.output)):
            scores[name][0].append(compute_psnr(img, p.target))
            scores[name][1].append(compute_ssim(img, p.target))
    report = EvalReport(pairs=len(pairs))
    for name in EvalReport.COLUMNS:
        psnrs, ssims = scores[name]
        report.rows.append((name, float(np.mean(psnrs)) if psnrs else float("nan"),
                            float(np.mean(ssims)) if ssims else float("nan")))
    return report


# --------------------------------------------------------------------------- model bundle


def save_model(model: SimulatorModel, path) -> None:
    """Write ``manifest.json``, ``exposure.txt`` and two ``.nnck`` checkpoints into ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / "exposure.txt").write_text(f"w = {model.exposure.w!r}\nb = {model.exposure.b!r}\n")
    save_checkpoint(model.denoiser.parameters(), path / "denoiser.nnck")
    save_checkpoint(model.aperture.parameters(), path / "aperture.nnck")
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "stages": list(STAGES),
        "denoiser": {**model.denoiser.config, "file": "denoiser.nnck"},
        "aperture": {**model.aperture.config, "file": "aperture.nnck"},
        "exposure": "exposure.txt",
        "config": model.config,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_model(path) -> SimulatorModel:
    from .dataset import parse_key_values

    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError:
        raise FormatError(f"{path}: not a model bundle (no manifest.json)") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}/manifest.json: {exc.msg}", offset=exc.pos) from None
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise FormatError(f"unsupported model schema {manifest.get('schema_version')!r}")
    kv = dict(parse_key_values((path / manifest["exposure"]).read_text()))
    exposure = ExposureCorrection(float(kv["w"]), float(kv["b"]))
    den_cfg, ap_cfg = manifest["denoiser"], manifest["aperture"]
    den = DenoiserNet(den_cfg["base_width"], den_cfg["depth"])
    ap = ApertureNet(ap_cfg["base_width"], ap_cfg["depth"])
    load_checkpoint(den.parameters(), path / den_cfg["file"])
    load_checkpoint(ap.parameters(), path / ap_cfg["file"])
    return SimulatorModel(exposure, den, ap, dict(manifest.get("config", {})))
