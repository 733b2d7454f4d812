"""Precision limits and protocol optimization for restriction-length
estimation from modulated-gradient spin-echo diffusion NMR signals."""

from .units import (PROTON_GAMMA, Geometry, LengthScales, PhysicalConstants,
                    TissueModel, convert_units, length_scales)
from .spectra import (GeometryExpansion, SpectralDensity, TruncationWarning,
                      expansion_for, geometry_spectrum, lorentzian_spectrum,
                      restriction_length_of)
from .waveforms import (GradientWaveform, PgseTiming, filter_bandpass_center,
                        filter_value, hahn_waveform, pgse_filter_analytic,
                        pgse_waveform)
from .attenuation import (AttenuationResult, QuadratureError,
                          UnsupportedModelError, apply_T2, attenuation_freq,
                          attenuation_time_exact, hahn_closed_form)
from .fisher import (HAHN, PrecisionResult, PulseFamily, UltimateBound,
                     epsilon_0, error_lower_envelope, lambert_w0, qfi,
                     t2_bound, ultimate_bound, ultimate_bound_bruteforce)
from .protocol import (NoOptimumError, OptimizationOutcome, PrecisionMap,
                       closed_form_optimal_time, efficiency_parameter,
                       gradient_window, measurements_needed, optimal_time,
                       precision_map_dG, precision_map_tG)
from .montecarlo import (McConfig, McResult, PhaseHistogram, phase_histogram,
                         simulate, simulate_with_samples)

__version__ = "0.1.0"
