"""Exception taxonomy; the CLI maps each class to an exit code."""


class QeiError(Exception):
    exit_code = 2


class ConfigError(QeiError, ValueError):
    """Invalid configuration or input data."""

    exit_code = 2


class CertificationError(QeiError, ArithmeticError):
    """A numerical certificate (quadrature, ODE, truncation, eigensolver) failed."""

    exit_code = 3


class PhysicsViolation(QeiError):
    """An inequality that should hold was violated beyond tolerance."""

    exit_code = 1
