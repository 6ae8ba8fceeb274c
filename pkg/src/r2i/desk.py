"""Desk-scale training runs: small widths, two stages, a synthetic corpus.

These runs exercise the training protocol end to end on one CPU core in
well under an hour.  Absolute numbers are not comparable to full-scale
training; the runs are meant for comparing model variants under equal
budgets.
"""

import time
from dataclasses import dataclass, field, replace

from .data import extract_patches, synthetic_corpus
from .imageio import to_unit
from .training import TrainConfig, final_loss, initial_loss, train


@dataclass
class DeskSettings:
    images: int = 32              # 128x128 synthetic images -> 16 patches each
    stages: int = 2
    iterations: int = 2000
    width: float = 0.125          # channel multiplier for the compression stages
    batch_size: int = 8
    seeds: tuple = (0, 1, 2)
    inpaint_k: int = 4            # filters per dilation at desk scale
    inpaint_batch: int = 4
    inpaint_iterations: int = 2000  # inpainting vs vanilla comparison
    corpus_seed: int = 0


@dataclass
class DeskRun:
    name: str
    config: TrainConfig
    result: object
    seconds: float

    @property
    def log(self):
        return self.result.log

    def series(self, column):
        return self.result.series(column)

    def initial(self, column="total_loss"):
        return initial_loss(self.series(column))

    def final(self, column="total_loss"):
        return final_loss(self.series(column))


@dataclass
class DeskResults:
    settings: DeskSettings
    images: list
    patches: object
    runs: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.runs[name]

    @property
    def seconds(self):
        return sum(r.seconds for r in self.runs.values())


def desk_corpus(settings):
    images = synthetic_corpus(settings.images, seed=settings.corpus_seed)
    return images, extract_patches([to_unit(im) for im in images])


def plan(settings):
    """(name, TrainConfig) for every run, in execution order."""
    s = settings
    base = TrainConfig(kind="decoding", stages=s.stages, iterations=s.iterations,
                       batch_size=s.batch_size, width=s.width, inpaint_k=s.inpaint_k)
    runs = []
    for kind in ("decoding", "full"):
        for seed in s.seeds:
            runs.append((f"{kind}_seed{seed}", replace(base, kind=kind, seed=seed, lr_drops=None)))
    joint = replace(base, kind="ir2i", seed=s.seeds[0], batch_size=s.inpaint_batch, lr_drops=None)
    runs.append(("ir2i", joint))
    # the same model, batch and schedule, without the inpainting network
    runs.append(("decoding_no_inpaint", replace(joint, kind="decoding", lr_drops=joint.lr_drops)))
    for kind in ("inpaint", "vanilla"):
        runs.append((kind, replace(base, kind=kind, seed=s.seeds[0], batch_size=s.inpaint_batch,
                                   iterations=s.inpaint_iterations, lr_drops=None)))
    return runs


def run_desk(settings=None, only=None, log=None):
    """Run every planned configuration (or those named in ``only``)."""
    settings = settings or DeskSettings()
    images, patches = desk_corpus(settings)
    out = DeskResults(settings, images, patches)
    for name, cfg in plan(settings):
        if only is not None and name not in only:
            continue
        t0 = time.perf_counter()
        res = train(cfg, patchset=patches)
        run = DeskRun(name, cfg, res, time.perf_counter() - t0)
        out.runs[name] = run
        if log is not None:
            log(f"{name:<22s} {run.seconds:7.1f}s  loss {run.initial():.5f} -> {run.final():.5f}")
    return out
