"""Random scattering-zipper operators: transfer matrices, Green kernels and Monte Carlo moment estimators."""

from .disorder import (
    DisorderWindow,
    PhasePair,
    ScatteringBlock,
    SiteDisorder,
    ZipperParams,
    defect_roots,
    phase_pair,
    sample_haar_unitary,
    sample_site_disorder,
    sample_window,
    scattering_block,
)
from .green import GreenBlock, SchurBundle, contraction_bounds, green_direct, green_via_transfer, recurrence_residual, schur_analysis
from .moments import (
    DecayFit,
    MomentEstimate,
    decay_fit,
    dynamical_localization_probe,
    fractional_moment_scan,
    inverse_phase_moment,
    second_order_moment,
    spectral_power_quadrature,
)
from .rng import Stream
from .transfer import (
    LyapunovSpectrum,
    TransferMatrix,
    TransferProduct,
    exterior_power,
    inverse_product_decay_probe,
    lyapunov_spectrum,
    phi_map,
    structure_maps,
    transfer_matrix,
    transfer_product,
)
from .zipper import BlockBandedUnitary, StateVector, apply, build_finite_zipper, evolve, factorize, split_with_defect

__version__ = "0.1.0"
