"""
Hyperparameter estimation on the coarse lattice.

EM-style alternation:
  E-step  LBP on the posterior (log-unaries from the color model, coupling alpha)
  M-step  refit the Gaussians with the site beliefs as responsibilities
  alpha   match the mean neighbour agreement of the posterior beliefs to the
          prior agreement at the symmetric Bethe fixed point,
          A(alpha) = e^(alpha/2) / (e^(alpha/2) + q - 1)
"""
import math
import sys
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from colormodel import GaussianLabelModel, fit_weighted, init_model, log_density_field
from errors import UsageError
from grid import ColorImage
from lbp import mean_agreement, run_lbp
from settings import ColorModelOptions, EstimateOptions, LbpOptions

ALPHA_MAX = 10.0
AGREEMENT_MARGIN = 1e-6


def prior_agreement(alpha: float, q: int) -> float:
    """Edge agreement of the pure Potts prior at the uniform-message Bethe fixed point"""
    return 1.0 / (1.0 + (q - 1) * math.exp(-0.5 * alpha))


def alpha_update(A: float, q: int, alpha_max: float = ALPHA_MAX) -> float:
    """Invert prior_agreement: alpha = 2 ln((q - 1) A / (1 - A)), clamped to [0, alpha_max]"""
    if int(q) != q or q < 2:
        raise UsageError(f"number of labels q must be an integer >= 2, got {q}")
    if not 0.0 < A < 1.0:
        raise UsageError(f"agreement must lie in (0, 1), got {A}")
    A = min(max(A, 1.0 / q + AGREEMENT_MARGIN), 1.0 - AGREEMENT_MARGIN)
    alpha = 2.0 * math.log((q - 1) * A / (1.0 - A))
    return min(max(alpha, 0.0), alpha_max)


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    alpha: float
    mean_shift: float
    agreement: float
    lbp_iterations: int
    lbp_converged: bool

    def to_dict(self) -> dict:
        return {
            'iteration': self.iteration,
            'alpha': self.alpha,
            'mean_shift': self.mean_shift,
            'agreement': self.agreement,
            'lbp_iterations': self.lbp_iterations,
            'lbp_converged': self.lbp_converged,
        }


@dataclass(frozen=True, eq=False)
class EstimationResult:
    alpha_R: float
    model: GaussianLabelModel
    iterations: int
    converged: bool
    lbp_iterations: int
    trace: List[TraceRecord] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            'alpha_R': self.alpha_R,
            'iterations': self.iterations,
            'converged': self.converged,
            'lbp_iterations': self.lbp_iterations,
            'trace': [r.to_dict() for r in self.trace],
        }


def estimate_hyperparameters(img: ColorImage, q: int, seed: int = 0,
                             opts: Optional[EstimateOptions] = None,
                             lbp_opts: Optional[LbpOptions] = None,
                             color_opts: Optional[ColorModelOptions] = None,
                             verbose: bool = False) -> EstimationResult:
    """
    Estimate alpha^(R) and the color model on a (coarse) image.

    Converged when both |delta alpha| and the largest mean shift fall below
    their tolerances. Otherwise the iterate whose combined change was the
    smallest is returned with converged=False.
    """
    opts = opts or EstimateOptions()
    lbp_opts = lbp_opts or LbpOptions()
    color_opts = color_opts or ColorModelOptions()

    model = init_model(img, q, seed, eps=color_opts.cov_eps, iters=color_opts.kmeans_iters,
                       max_samples=color_opts.kmeans_max_samples)
    alpha = opts.alpha_init
    trace: List[TraceRecord] = []
    lbp_total = 0
    best = None  # (change, alpha, model, iteration)

    for it in range(1, opts.max_iters + 1):
        beliefs = run_lbp(img.torus, log_density_field(model, img), alpha, lbp_opts)
        lbp_total += beliefs.iterations
        new_model = fit_weighted(img, beliefs.site, previous=model, eps=color_opts.cov_eps)
        # the trace of a saturated edge table can round to exactly 1
        agreement = min(mean_agreement(beliefs), 1.0 - AGREEMENT_MARGIN)
        new_alpha = alpha_update(agreement, q, opts.alpha_max)

        shift = float(np.max(np.abs(new_model.means - model.means)))
        d_alpha = abs(new_alpha - alpha)
        trace.append(TraceRecord(it, new_alpha, shift, agreement, beliefs.iterations, beliefs.converged))
        if verbose:
            print(f"[estimate] iter {it}: alpha={new_alpha:.5f} shift={shift:.2e} "
                  f"agreement={agreement:.5f} lbp={beliefs.iterations}", file=sys.stderr)

        model, alpha = new_model, new_alpha
        if best is None or d_alpha + shift < best[0]:
            best = (d_alpha + shift, alpha, model, it)
        if d_alpha < opts.alpha_tol and shift < opts.mean_tol:
            return EstimationResult(alpha, model, it, True, lbp_total, trace)

    _, alpha, model, _ = best
    if verbose:
        print(f"[estimate] no convergence after {opts.max_iters} iterations; "
              f"returning iterate {best[3]}", file=sys.stderr)
    return EstimationResult(alpha, model, opts.max_iters, False, lbp_total, trace)
