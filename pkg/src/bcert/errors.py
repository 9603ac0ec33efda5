"""Shared exception taxonomy.

Every deliberate failure mode in the library maps to one of these, so the CLI
can translate exceptions into its exit-code contract (input error -> 2,
refutation/infeasibility -> 1).
"""


class BcertError(Exception):
    """Base class for all library errors."""


class InputError(BcertError, ValueError):
    """Malformed or domain-violating input (dimension mismatch, bad constants, ...)."""


class CapabilityError(BcertError, NotImplementedError):
    """Request outside the supported fragment (nonlinear gains, exotic moments, ...)."""


class DwellViolationError(InputError):
    """A mode switch was requested while the dwell counter forbids switching."""


class CompositionInfeasibleError(BcertError):
    """Small-gain or level-compatibility conditions fail, so no ABC can be composed."""


class ConfigurationError(BcertError):
    """Synthesis configuration admits no feasible candidate (e.g. every lambda <= gamma)."""


class UnverifiedCertificateError(BcertError):
    """Simulation was asked to trust a certificate that is not verified, without an override."""
