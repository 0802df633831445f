"""FRD and DFR restoration pipelines.

FRD fuses the sequence into a reference, registers every frame onto it,
re-fuses (``K`` rounds) and deconvolves only the final reference. DFR
deconvolves each frame first, then runs the same fuse/register loop on the
deconvolved frames; its result is the last reference.

Frames are always re-registered from their unwarped input onto each new
reference, so interpolation blur does not compound across rounds.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .deconv import DeconvConfig, DeconvResult, DegenerateProjectionError, SolverDivergedError, blind_deconvolve
from .registration import CauchyNavierParams, RegistrationConfig, RegistrationError, register
from .temporal import as_sequence, temporal_filter

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    pass


PIPELINE_REGISTRATION_ITERATIONS = 50  # per frame; keeps a 20-frame 128x128 run to a few minutes


def pipeline_deconv_config(**overrides) -> DeconvConfig:
    kw = dict(alpha1=2e-2, alpha2=1.0)
    kw.update(overrides)
    return DeconvConfig(**kw)


@dataclass(frozen=True)
class PipelineConfig:
    iterations: int = 1
    reference_filter: str = "median"
    deconv: DeconvConfig = field(default_factory=pipeline_deconv_config)
    registration: RegistrationConfig = field(
        default_factory=lambda: RegistrationConfig(
            params=CauchyNavierParams(alpha=0.01, gamma=0.7), max_iterations=PIPELINE_REGISTRATION_ITERATIONS
        )
    )
    workers: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations (K) must be >= 1")
        if self.reference_filter not in ("mean", "median"):
            raise ValueError("reference_filter must be 'mean' or 'median'")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class PipelineReport:
    restored: np.ndarray
    references: list[np.ndarray]
    per_frame_registration_energies: np.ndarray  # (K, N); NaN where a frame was dropped
    deconv_results: list[DeconvResult]
    dropped_frames: list[int] = field(default_factory=list)

    @property
    def deconvolution_count(self) -> int:
        return len(self.deconv_results)


def _register_task(args):
    index, frame, reference, cfg = args
    try:
        return index, register(frame, reference, cfg), None
    except (RegistrationError, FloatingPointError) as exc:
        return index, None, f"frame {index}: {exc}"


def _deconv_task(args):
    index, frame, cfg = args
    try:
        return index, blind_deconvolve(frame, cfg), None
    except (SolverDivergedError, DegenerateProjectionError) as exc:
        return index, None, f"frame {index}: {exc}"


def _map(fn, tasks, workers: int):
    # results are collected in task order, so the schedule cannot change them
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def _refine(frames: np.ndarray, reference: np.ndarray, cfg: PipelineConfig):
    tasks = [(i, f, reference, cfg.registration) for i, f in enumerate(frames)]
    warped, energies, dropped = [], np.full(len(frames), np.nan), []
    for index, result, err in _map(_register_task, tasks, cfg.workers):
        if result is None:
            warnings.warn(f"dropping {err}", RuntimeWarning, stacklevel=3)
            dropped.append(index)
            continue
        log.info("registered frame %d: energy %.6g -> %.6g (%d iterations)",
                 index, result.energy_trace[0], result.energy_trace[-1], result.iterations)
        warped.append(result.warped)
        energies[index] = result.energy_trace[-1]
    if not warped:
        raise PipelineError("registration failed on every frame")
    return np.asarray(warped), temporal_filter(warped, cfg.reference_filter), energies, dropped


def refine_reference(seq, reference, cfg: PipelineConfig | None = None):
    """Register every frame onto ``reference``; return the warped frames and their fused reference."""
    cfg = cfg or PipelineConfig()
    frames = as_sequence(seq)
    reference = np.asarray(reference, dtype=np.float64)
    if reference.shape != frames.shape[1:]:
        raise ValueError(f"reference {reference.shape} vs frames {frames.shape[1:]}")
    warped, new_ref, _, _ = _refine(frames, reference, cfg)
    return warped, new_ref


def _iterate(frames: np.ndarray, cfg: PipelineConfig):
    refs = [temporal_filter(frames, cfg.reference_filter)]
    energies = np.full((cfg.iterations, len(frames)), np.nan)
    dropped: set[int] = set()
    for k in range(cfg.iterations):
        _, ref, energies[k], lost = _refine(frames, refs[-1], cfg)
        dropped.update(lost)
        refs.append(ref)
        log.info("reference %d/%d computed", k + 1, cfg.iterations)
    return refs, energies, sorted(dropped)


def frd_restore(seq, cfg: PipelineConfig | None = None) -> PipelineReport:
    cfg = cfg or PipelineConfig()
    frames = as_sequence(seq)
    refs, energies, dropped = _iterate(frames, cfg)
    log.info("deconvolving final reference")
    result = blind_deconvolve(refs[-1], cfg.deconv)
    return PipelineReport(
        restored=result.image,
        references=refs,
        per_frame_registration_energies=energies,
        deconv_results=[result],
        dropped_frames=dropped,
    )


def dfr_restore(seq, cfg: PipelineConfig | None = None) -> PipelineReport:
    cfg = cfg or PipelineConfig()
    frames = as_sequence(seq)
    results, kept, dropped = [], [], []
    for index, result, err in _map(_deconv_task, [(i, f, cfg.deconv) for i, f in enumerate(frames)], cfg.workers):
        log.info("deconvolved frame %d", index)
        if result is None:
            warnings.warn(f"dropping {err}", RuntimeWarning, stacklevel=2)
            dropped.append(index)
            continue
        results.append(result)
        kept.append(result.image)
    if not kept:
        raise PipelineError("deconvolution failed on every frame")
    refs, energies, lost = _iterate(np.asarray(kept), cfg)
    return PipelineReport(
        restored=refs[-1],
        references=refs,
        per_frame_registration_energies=energies,
        deconv_results=results,
        dropped_frames=sorted(set(dropped) | set(lost)),
    )
