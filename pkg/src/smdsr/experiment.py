"""Matched A/B comparison of modulated training against a plain-DDPM baseline.

For each seed both arms share every setting (architecture, initial weights,
crops, timesteps, noise draws); the only difference is that the baseline
sees an all-zero encoded mask. Both are scored on held-out scenes with
PSNR on luma, next to bilinear upsampling of the same LR inputs.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass

import numpy as np

from smdsr import data, diffusion, metrics, train

log = logging.getLogger(__name__)


@dataclass
class SeedResult:
    seed: int
    modulated: float
    baseline: float
    seconds: float

    @property
    def win(self) -> bool:
        return self.modulated > self.baseline


@dataclass
class ABReport:
    bilinear: float
    seeds: list[SeedResult]
    margin: float = 0.1

    @property
    def modulated(self) -> float:
        return float(np.mean([s.modulated for s in self.seeds]))

    @property
    def baseline(self) -> float:
        return float(np.mean([s.baseline for s in self.seeds]))

    @property
    def wins(self) -> int:
        return sum(s.win for s in self.seeds)

    @property
    def non_inferior(self) -> bool:
        return self.modulated >= self.baseline - self.margin

    @property
    def majority(self) -> bool:
        return 2 * self.wins > len(self.seeds)

    @property
    def beat_bilinear(self) -> bool:
        return self.modulated > self.bilinear and self.baseline > self.bilinear

    @property
    def passed(self) -> bool:
        return self.non_inferior and self.majority and self.beat_bilinear

    def format(self) -> str:
        rows = [f"seed={s.seed} modulated={s.modulated:.3f} baseline={s.baseline:.3f} "
                f"win={'yes' if s.win else 'no'} ({s.seconds:.0f}s)" for s in self.seeds]
        rows.append(f"mean modulated={self.modulated:.3f} baseline={self.baseline:.3f} "
                    f"bilinear={self.bilinear:.3f} wins={self.wins}/{len(self.seeds)}")
        rows.append(f"non_inferior={self.non_inferior} majority={self.majority} "
                    f"beat_bilinear={self.beat_bilinear}")
        return "\n".join(rows) + "\n"


def held_out_scenes(cfg: train.TrainConfig, count: int, offset: int = 10_000):
    """Scenes drawn from the training distribution with seeds it never uses."""
    spec = dataclasses.replace(cfg.scene, seed=cfg.scene.seed + offset)
    return data.make_scenes(spec, count)


def bilinear_psnr(scenes) -> float:
    return float(np.mean([metrics.psnr_y(data.to_byte(data.upsample_bilinear(data.to_unit(lr))), hr)
                          for hr, lr, _ in scenes]))


def score(ckpt, scenes, opts: diffusion.SamplerOptions) -> float:
    """Mean PSNR-Y of restored held-out scenes; scene ``i`` is sampled with seed ``i``."""
    return float(np.mean([metrics.psnr_y(data.to_byte(train.restore(ckpt, lr, i, opts)), hr)
                          for i, (hr, lr, _) in enumerate(scenes)]))


def run_ab(cfg: train.TrainConfig, seeds, held_out: int = 6,
           opts: diffusion.SamplerOptions | None = None, margin: float = 0.1) -> ABReport:
    opts = opts or diffusion.SamplerOptions()
    scenes = held_out_scenes(cfg, held_out)
    train_scenes = train.load_training_scenes(cfg)
    report = ABReport(bilinear_psnr(scenes), [], margin)
    for seed in seeds:
        start = time.perf_counter()
        psnr = {}
        for baseline in (False, True):
            arm = dataclasses.replace(cfg, seed=seed, baseline=baseline)
            psnr[baseline] = score(train.train(arm, scenes=train_scenes), scenes, opts)
        report.seeds.append(SeedResult(seed, psnr[False], psnr[True], time.perf_counter() - start))
        log.info("%s", report.seeds[-1])
    return report
