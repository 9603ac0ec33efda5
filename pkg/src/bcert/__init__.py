"""Barrier-certificate toolchain for networks of switched stochastic
subsystems: per-mode certificates, dwell-time lifting, small-gain
composition, finite-horizon exit-probability bounds, grid checking,
CEGIS synthesis, and closed-loop Monte Carlo validation.
"""

from .augment import (AugmentedState, augmented_step, check_dwell_time,
                      dump_trajectory, equivalence_check,
                      network_augmented_step, network_wired_inputs)
from .bound import SafetyBound, safety_bound
from .cegis import (CegisState, SynthesisFailure, Template, monomial_basis,
                    synthesize_cbc)
from .certify import (MARGIN_TOL, UNCHECKED, AbcCertificate, ApbcCertificate,
                      CbcCertificate, CertConstants, CertStatus, CheckReport,
                      GridConfig, PowerLawFn, ZERO_GAIN, abc_c4_margin,
                      all_verified, apbc_c4_margin, boxset_grid,
                      cbc_condition_margin, check_abc, check_apbc, check_cbc,
                      expected_next_barrier, pattern_search_min,
                      summary_status)
from .compose import (GainDigraph, GainEdge, ScalingSet, SmallGainResult,
                      build_gain_digraph, compose_abc, edge_margins,
                      find_sigma, small_gain_check)
from .dwell import (MuEstimate, common_barrier_apbc, dwell_tradeoff,
                    estimate_mu, lift_derivation, lift_to_apbc,
                    min_dwell_time)
from .errors import (BcertError, CapabilityError, CompositionInfeasibleError,
                     ConfigurationError, DwellViolationError, InputError,
                     UnverifiedCertificateError)
from .model import (EXT_PORT, BoxSet, Edge, FlattenedSystem, NetworkSpec,
                    SubsystemSpec, Violation, flatten, network_from_json,
                    network_to_json, subsystem_from_json, subsystem_to_json,
                    validate_network, wiring_substitution)
from .polyalg import (STD_GAUSSIAN, NoiseSpec, Polynomial, VariableSpace,
                      expectation_over_noise, parse_polynomial, poly_compose,
                      poly_eval)
from .project import (SCHEMA_VERSION, Project, cbc_from_json, cbc_to_json,
                      load_project, project_from_json, project_to_json,
                      save_project)
from .sim import Controller, SimReport, clopper_pearson, plot_data, \
    run_monte_carlo

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
