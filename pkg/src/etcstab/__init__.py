"""Event-triggered exponential stabilization of skew-adjoint linear systems."""
from .core_system import (ControlSystem, GramSpace, IllConditionedLyapunov, InvalidSystem,
                          NotExponentiallyStable, StabilityCertificate, certify_stability,
                          certify_system, check_skew_adjoint, closed_loop, compute_c1,
                          induced_norm, kappa, orthonormalize)
from .lyapunov import (LyapunovFunctional, TriggerDesign, build_lyapunov, decay_rate,
                       lyap_gradient, lyap_value, quadrature_oracle, trigger_bound)
from .models import (KdVSpec, RandomSkewSpec, ScalarSpec, TransportSpec, WaveSpec, build_model,
                     builtin_initial_state, counterexample_f0, spec_from_dict, transport_exact)
from .trigger_sim import (KERNEL_BACKEND, EventLocalizationError, TriggerConfig,
                          TriggeredTrajectory, dwell_bound, fit_decay, next_event, propagate_hold,
                          simulate, simulate_periodic, trigger_margin, verify_derivative_bound,
                          verify_sandwich)

__version__ = "0.1.0"

__all__ = [
    "ControlSystem", "GramSpace", "IllConditionedLyapunov", "InvalidSystem",
    "NotExponentiallyStable", "StabilityCertificate", "certify_stability", "certify_system",
    "check_skew_adjoint", "closed_loop", "compute_c1", "induced_norm", "kappa", "orthonormalize",
    "LyapunovFunctional", "TriggerDesign", "build_lyapunov", "decay_rate", "lyap_gradient",
    "lyap_value", "quadrature_oracle", "trigger_bound",
    "KdVSpec", "RandomSkewSpec", "ScalarSpec", "TransportSpec", "WaveSpec", "build_model",
    "builtin_initial_state", "counterexample_f0", "spec_from_dict", "transport_exact",
    "KERNEL_BACKEND", "EventLocalizationError", "TriggerConfig", "TriggeredTrajectory",
    "dwell_bound", "fit_decay", "next_event", "propagate_hold", "simulate", "simulate_periodic",
    "trigger_margin", "verify_derivative_bound", "verify_sandwich",
]
