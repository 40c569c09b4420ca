"""Boundary/volume integral-equation toolkit for time-harmonic
electromagnetic scattering from a perfectly conducting obstacle embedded in
an inhomogeneous dielectric shell, with low-frequency asymptotics
verification and multi-frequency inverse experiments."""

from .errors import (AccuracyError, ConfigError, ContractError, DomainError,
                     EmshellError, GeometryError, IllConditionedError,
                     InvalidArgumentError, LinearSolveError, OracleError,
                     PreconditionError, SingularityError)
from .geometry import (QuadratureRule, SurfaceMesh, VolumeMesh,
                       generate_shell_volume_mesh, generate_surface_mesh,
                       read_off, read_tet, surface_divergence, write_off,
                       write_tet)
from .kernels import (KernelValue, Wavenumber, gamma, gamma_derivatives,
                      gamma_lowfreq_expansion, maxwell_fundamental_matrix)
from .densities import (RwgSpace, ScalarSurfaceDensity, TangentialDensity,
                        VolumeField)
from .surface_ops import BoundaryOperators, QuadConfig
from .volume_ops import VolumeOperators
from .operators import (apply_D2_potential, magnetic_dipole_M,
                        neumann_poincare, single_layer,
                        solve_boundary_operator, vector_single_layer,
                        volume_potential)
from .forward import (DirectionGrid, FarFieldPattern, ForwardModel,
                      MaterialMap, PlaneWave, ScatteringSolution,
                      assemble_and_solve, evaluate_fields, far_field,
                      read_far_field_csv, write_far_field_csv)
from .lowfreq import AsymptoticReport, StaticOperatorContext, remainder_report
from .oracles import (MieSeries, OrderFit, brute_force_potential,
                      mie_pec_far_field, optical_theorem_residual, order_fit,
                      rayleigh_pec_far_field)
from .inverse import (DiscrepancyReport, FarFieldDataset, RecoveryResult,
                      dataset_discrepancy, dataset_distance, generate_dataset,
                      neumann_residual, recover_constant_permittivity,
                      tilde_u_field)

__version__ = "0.1.0"
