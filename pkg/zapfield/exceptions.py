class ZapfieldError(Exception):
    """
    Base class for every error raised by zapfield.
    """


class ConfigurationError(ZapfieldError, ValueError):
    """
    Exception raised when a configuration object holds an invalid value,
    or when a prompt cannot be mapped to a target behavior.
    """
    def __init__(self, message: str, field: str = None):
        """
        Create a new ConfigurationError.

        Args:
            message: Human readable description of the problem.
            field: Name of the offending configuration field, if any.

        """

        super().__init__(message)
        self.field = field


class InputError(ZapfieldError, ValueError):
    """
    Exception raised when an operation receives arguments it cannot accept,
    e.g. an empty prompt or a genome of the wrong length.
    """


class DomainError(ZapfieldError, ValueError):
    """
    Exception raised when a value falls outside the domain of an operation,
    e.g. a position outside the arena or a non-finite vector.
    """


class FormatError(ZapfieldError, ValueError):
    """
    Exception raised when a file does not follow its expected format.
    """
    def __init__(self, message: str, entry=None):
        """
        Create a new FormatError.

        Args:
            message: Human readable description of the problem.
            entry: The offending entry (prompt, key, line number), if known.

        """

        super().__init__(message)
        self.entry = entry


class EvaluatorError(ZapfieldError):
    """
    Exception raised when the external evaluator cannot produce a label:
    network failure, timeout, HTTP error or a reply outside the closed set.
    """
    def __init__(self, message: str, reply: str = None):
        """
        Create a new EvaluatorError.

        Args:
            message: Human readable description of the problem.
            reply: The raw reply received from the service, if any.

        """

        super().__init__(message)
        self.reply = reply


class InsufficientDataError(ZapfieldError, ValueError):
    """
    Exception raised when a statistical test has too few usable samples.
    """


class ContractViolation(ZapfieldError, AssertionError):
    """
    Exception raised when an internal contract is broken by the caller.
    """


class EvolutionError(ZapfieldError):
    """
    Exception raised when a fitness error aborts an optimizer run.
    """
    def __init__(self, message: str, log):
        """
        Create a new EvolutionError.

        Args:
            message: Human readable description of the problem.
            log: The EvolutionLog accumulated before the failure.

        """

        super().__init__(message)
        self.log = log


class UsageError(ZapfieldError):
    """
    Exception raised for command line usage problems argparse cannot detect.
    """
