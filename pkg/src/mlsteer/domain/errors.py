import typing as t


class MLSteerError(Exception):
    """Base error class for exceptions raised in mlsteer library code.

    The code is the exit status used by the command line application.
    """

    def __init__(self, code: int, msg: str) -> None:
        """Create a new exception using a code and a message."""
        super().__init__(msg)
        self.code = code
        self.msg = msg


class ConfigError(MLSteerError):
    def __init__(self, details: str) -> None:
        super().__init__(2, details)


class ConfigParseError(ConfigError):
    def __init__(self, path: str, line: int, column: int, reason: str) -> None:
        super().__init__(
            f"Cannot parse {path}: {reason} (line {line}, column {column})"
        )
        self.line = line
        self.column = column


class SchemaError(ConfigError):
    def __init__(self, problems: t.Sequence[str]) -> None:
        super().__init__(
            "Invalid configuration:\n" + "\n".join(f"  - {p}" for p in problems)
        )
        self.problems = list(problems)


class MathDomainError(MLSteerError):
    def __init__(self, details: str) -> None:
        super().__init__(3, details)


class DimensionError(MathDomainError):
    pass


class PermutabilityError(MathDomainError):
    def __init__(self, commutator_norm: float, tolerance: float) -> None:
        super().__init__(
            f"Matrices A and B do not commute: commutator norm ||AB - BA|| = {commutator_norm:.3e}"
            f" exceeds tolerance {tolerance:.3e}"
        )
        self.commutator_norm = commutator_norm
        self.tolerance = tolerance


class OrderRangeError(MathDomainError):
    def __init__(self, alpha: float, low: float, high: float, usage: str) -> None:
        super().__init__(
            f"Fractional order alpha={alpha} is outside ({low:g}, {high:g}) required for {usage}"
        )
        self.alpha = alpha


class MeshError(MathDomainError):
    pass


class ArgumentGuardError(MathDomainError):
    def __init__(self, norm: float, guard: float) -> None:
        super().__init__(
            f"Mittag-Leffler argument norm {norm:.6g} exceeds the supported range {guard:g}"
        )


class LipschitzError(MathDomainError):
    def __init__(self, observed: float, declared: float) -> None:
        super().__init__(
            f"Diffusion violates its Lipschitz constant: observed ratio {observed:.6g} > declared {declared:.6g}"
        )


class OverflowDomainError(MathDomainError):
    pass


class ConvergenceError(MLSteerError):
    def __init__(self, details: str) -> None:
        super().__init__(4, details)


class SeriesConvergenceError(ConvergenceError):
    def __init__(self, max_terms: int, argument: float) -> None:
        super().__init__(
            f"Mittag-Leffler series did not converge within {max_terms} terms (argument norm {argument:.6g})"
        )


class PicardConvergenceError(ConvergenceError):
    def __init__(self, iterations: int, last_gap: float, last_ratio: float) -> None:
        super().__init__(
            f"Picard iteration did not converge within {iterations} iterations"
            f" (last gap {last_gap:.3e}, last ratio {last_ratio:.3f})"
        )
        self.last_ratio = last_ratio


class SingularGrammianError(MLSteerError):
    def __init__(self, min_eig: float, threshold: float) -> None:
        super().__init__(
            5,
            f"Controllability Grammian is singular: min eigenvalue {min_eig:.3e} <= threshold {threshold:.3e}",
        )
        self.min_eig = min_eig
