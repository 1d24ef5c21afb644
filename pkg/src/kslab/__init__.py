"""kslab: kinetic and semiclassical stability laboratory.

Vlasov and Hartree solvers on a periodic phase-space grid, quantization
tools, optimal-transport distances and a harness that checks stability
envelopes and convergence rates.
"""
import os as _os

# KSLAB_THREADS caps BLAS/OpenMP threads; it has to be set before numpy loads.
_cap = _os.environ.get("KSLAB_THREADS")
if _cap and _cap.isdigit() and int(_cap) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _cap)

__version__ = "0.1.0"

from . import errors  # noqa: E402
from ._kernels import BACKEND  # noqa: E402
from .families import FAMILIES, gaussian_bump, maxwellian, perturbed, two_stream  # noqa: E402
from .hartree import (HartreeState, b_term, hartree_step, solve_hartree,  # noqa: E402
                      solve_linear_hartree, stationary_state, total_energy)
from .norms import NormSpec, lambda_l1, lambda_l2, norm  # noqa: E402
from .phase_space import InteractionKernel, KineticDensity, PhaseGrid, spatial_density  # noqa: E402
from .quantum import (DensityOperator, PlanckScale, husimi_transform,  # noqa: E402
                      quantum_gradient, schatten_norm, weyl_quantize, wick_quantize,
                      wigner_transform)
from .transport import (DiscreteCoupling, OperatorCoupling, grid_w2_bracket,  # noqa: E402
                        semiclassical_cost, sinkhorn, wasserstein, wh_bracket)
from .vlasov import VlasovState, characteristics, solve_vlasov, vlasov_step  # noqa: E402

__all__ = [
    "BACKEND", "errors", "FAMILIES", "gaussian_bump", "maxwellian", "perturbed", "two_stream",
    "HartreeState", "b_term", "hartree_step", "solve_hartree", "solve_linear_hartree",
    "stationary_state", "total_energy", "NormSpec", "lambda_l1", "lambda_l2", "norm",
    "InteractionKernel", "KineticDensity", "PhaseGrid", "spatial_density", "DensityOperator",
    "PlanckScale", "husimi_transform", "quantum_gradient", "schatten_norm", "weyl_quantize",
    "wick_quantize", "wigner_transform", "DiscreteCoupling", "OperatorCoupling",
    "grid_w2_bracket", "semiclassical_cost", "sinkhorn", "wasserstein", "wh_bracket",
    "VlasovState", "characteristics", "solve_vlasov", "vlasov_step", "__version__",
]
