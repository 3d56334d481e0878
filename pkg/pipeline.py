"""
End-to-end segmentation: coarse-grain the image, estimate the
hyperparameters on the coarse lattice, carry alpha back to full resolution
through the inverse RG chain, run LBP on the full posterior and take the
maximum-posterior-marginal label at every site.

With R = 0 the coarse lattice is the image itself, which is the direct
(conventional) estimation used as the speedup baseline.
"""
import sys
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from colormodel import GaussianLabelModel, log_density_field
from errors import UsageError
from estimate import EstimationResult, estimate_hyperparameters
from grid import ColorImage, LabelField, coarse_sites, extract_coarse_image
from lbp import BeliefSet, run_lbp
from rgflow import CouplingFlow, inverse_chain
from settings import Settings

STAGES = ('coarsen', 'estimate', 'inverse_rg', 'final_lbp', 'decide')
REPORT_VERSION = 1

__all__ = ['LabelField', 'RunReport', 'segment', 'mpm_decide', 'colorize', 'label_accuracy']


@dataclass(eq=False)
class RunReport:
    q: int
    R: int
    seed: int
    width: int
    height: int
    coarse_width: int
    coarse_height: int
    flow: CouplingFlow
    estimation: EstimationResult
    final_lbp_iterations: int
    final_lbp_converged: bool
    final_lbp_residual: float
    timings_ms: Dict[str, float] = field(default_factory=dict)
    accuracy: Optional[float] = None

    @property
    def alpha_R(self) -> float:
        return self.flow.alpha_R

    @property
    def alpha_0(self) -> float:
        return self.flow.alpha_0

    @property
    def model(self) -> GaussianLabelModel:
        return self.estimation.model

    def to_dict(self) -> dict:
        """Schema-stable JSON document; key names are listed in report_schema.json"""
        out = {
            'version': REPORT_VERSION,
            'q': self.q,
            'R': self.R,
            'seed': self.seed,
            'image': {'width': self.width, 'height': self.height},
            'coarse': {'width': self.coarse_width, 'height': self.coarse_height},
            'alpha_R': self.alpha_R,
            'alpha_0': self.alpha_0,
            # alpha^(R) first, alpha^(0) last
            'inverse_trajectory': [{'r': r, 'alpha': a} for r, a in self.flow.rows(descending=True)],
            'model': self.model.to_dict(),
            'estimate': self.estimation.to_dict(),
            'final_lbp': {
                'iterations': self.final_lbp_iterations,
                'converged': self.final_lbp_converged,
                'residual': self.final_lbp_residual,
            },
            'timings_ms': {stage: self.timings_ms[stage] for stage in STAGES},
        }
        if self.accuracy is not None:
            out['accuracy'] = self.accuracy
        return out


@contextmanager
def _stage(timings: Dict[str, float], name: str):
    start = time.perf_counter()
    yield
    timings[name] = (time.perf_counter() - start) * 1000.0


def mpm_decide(b: BeliefSet) -> LabelField:
    """argmax of each site belief; ties go to the smallest label"""
    if b.torus is None:
        raise UsageError("belief set is not attached to a torus")
    return LabelField(b.torus, np.argmax(b.site, axis=-1), b.q)


def colorize(labels: LabelField, model: GaussianLabelModel, clamp: bool = True) -> ColorImage:
    """Paint every site with the mean color of its label"""
    if labels.q > model.q:
        raise UsageError(f"label field has q={labels.q}, model only {model.q} labels")
    pixels = model.means[labels.labels]
    if clamp:
        pixels = np.clip(pixels, 0.0, 1.0)
    return ColorImage(labels.torus, pixels)


def label_accuracy(pred: LabelField, truth: LabelField) -> float:
    """Fraction of sites that agree under the best one-to-one relabelling of pred"""
    if pred.torus != truth.torus:
        raise UsageError("label fields live on different lattices")
    q = max(pred.q, truth.q)
    confusion = np.zeros((q, q), dtype=np.int64)
    np.add.at(confusion, (pred.labels.ravel(), truth.labels.ravel()), 1)
    rows, cols = linear_sum_assignment(confusion, maximize=True)
    return float(confusion[rows, cols].sum()) / pred.torus.num_sites


def segment(img: ColorImage, q: int, R: int, seed: int = 0,
            settings: Optional[Settings] = None, verbose: bool = False) -> Tuple[LabelField, RunReport]:
    settings = settings or Settings()
    timings: Dict[str, float] = {}

    with _stage(timings, 'coarsen'):
        site_map = coarse_sites(img.torus, R)
        coarse = extract_coarse_image(img, site_map)
    if verbose:
        print(f"[coarsen] {img.torus.width}x{img.torus.height} -> "
              f"{coarse.torus.width}x{coarse.torus.height} (R={R})", file=sys.stderr)

    with _stage(timings, 'estimate'):
        estimation = estimate_hyperparameters(
            coarse, q, seed, opts=settings.estimate, lbp_opts=settings.lbp,
            color_opts=settings.colormodel, verbose=verbose,
        )

    with _stage(timings, 'inverse_rg'):
        flow = inverse_chain(estimation.alpha_R, q, R)
    if verbose:
        print(f"[inverse_rg] alpha^({R})={flow.alpha_R:.4f} -> alpha^(0)={flow.alpha_0:.4f}",
              file=sys.stderr)

    with _stage(timings, 'final_lbp'):
        beliefs = run_lbp(img.torus, log_density_field(estimation.model, img), flow.alpha_0,
                          settings.lbp, edge_beliefs=False)
    if verbose:
        state = 'converged' if beliefs.converged else 'not converged'
        print(f"[final_lbp] {beliefs.iterations} iterations, {state}", file=sys.stderr)

    with _stage(timings, 'decide'):
        labels = mpm_decide(beliefs)

    report = RunReport(
        q=q, R=R, seed=seed,
        width=img.torus.width, height=img.torus.height,
        coarse_width=coarse.torus.width, coarse_height=coarse.torus.height,
        flow=flow, estimation=estimation,
        final_lbp_iterations=beliefs.iterations,
        final_lbp_converged=beliefs.converged,
        final_lbp_residual=beliefs.residual,
        timings_ms=timings,
    )
    return labels, report


def bench(img: ColorImage, q: int, rg_steps: List[int], seed: int = 0,
          settings: Optional[Settings] = None, verbose: bool = False) -> dict:
    """Run segment once per R and collect the per-stage timings"""
    if not rg_steps:
        raise UsageError("bench needs at least one R")
    runs = []
    for R in rg_steps:
        _, report = segment(img, q, R, seed, settings, verbose)
        runs.append({
            'R': R,
            'coarse': {'width': report.coarse_width, 'height': report.coarse_height},
            'alpha_R': report.alpha_R,
            'alpha_0': report.alpha_0,
            'estimate_iterations': report.estimation.iterations,
            'timings_ms': report.to_dict()['timings_ms'],
        })
        if verbose:
            print(f"[bench] R={R}: estimate {report.timings_ms['estimate']:.1f} ms", file=sys.stderr)

    base = runs[0]['timings_ms']['estimate']
    return {
        'q': q,
        'seed': seed,
        'image': {'width': img.torus.width, 'height': img.torus.height},
        'runs': runs,
        'estimate_speedup': {
            str(run['R']): base / run['timings_ms']['estimate'] for run in runs
        },
    }
