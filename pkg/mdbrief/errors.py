"""Exception hierarchy and the CLI exit codes it maps to."""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARSE = 2
EXIT_RUNTIME = 3


class MdbriefError(Exception):
    """Root of all errors raised by mdbrief."""

    exit_code = EXIT_RUNTIME


class UsageError(MdbriefError):
    """Inconsistent command-line request (e.g. masked vs unmasked descriptor files)."""

    exit_code = EXIT_USAGE


class InputParseError(MdbriefError, ValueError):
    """Malformed input file: PGM, calibration, keypoints, tests, descriptors, configs."""

    exit_code = EXIT_PARSE


class ModelDomainError(MdbriefError, ValueError):
    """Point or pose outside the domain of a camera model."""

    exit_code = EXIT_RUNTIME


class LearningError(MdbriefError, RuntimeError):
    """Greedy test selection ran out of correlation budget.

    Attributes:
        achieved: number of tests admitted before giving up
    """

    exit_code = EXIT_RUNTIME

    def __init__(self, message: str, achieved: int = 0) -> None:
        super().__init__(message)
        self.achieved = achieved


class SimulationError(MdbriefError, RuntimeError):
    """Experiment cannot run as configured (visibility loss, too few keypoints)."""

    exit_code = EXIT_RUNTIME


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the CLI exit code."""
    if isinstance(exc, MdbriefError):
        return exc.exit_code
    if isinstance(exc, (FileNotFoundError, IsADirectoryError, UnicodeDecodeError)):
        return EXIT_PARSE
    return EXIT_RUNTIME
