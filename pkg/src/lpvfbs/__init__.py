"""Feedforward vibration compensation for linear delta 3D printers with an
LPV filtered-B-splines controller."""

from .bsplines import BSplineBasis, WindowBasis, basis_matrix, eval_curve
from .controller import ControllerParams, MachineModel, VARIANTS, pad_trajectory, run_controller
from .kinematics import Configuration, DeltaGeometry, forward_kinematics, inverse_kinematics, jacobian
from .lifted import build_lifted, discretize, impulse_response, worst_case_settle
from .lpv_model import ModelBlocks, default_blocks, parameterize_gj
from .sim import contour_error, gen_trajectory, run_comparison, simulate_plant

__version__ = "0.1.0"
