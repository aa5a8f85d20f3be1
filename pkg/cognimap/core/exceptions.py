"""
Exception hierarchy shared by every cognimap module
"""

from typing import Optional


class CogniMapError(Exception):
    """Base class for all cognimap errors"""


class InputValueError(CogniMapError, ValueError):
    """An input violates a documented value invariant"""


class InputShapeError(InputValueError):
    """Array dimensions do not match each other or the camera model"""


class DegenerateInputError(InputValueError):
    """Not enough data to run an estimator"""


class DegenerateDistributionError(InputValueError):
    """All values are equal, no threshold separates them"""


class EmptyInputError(InputValueError):
    """An operation received an empty collection it cannot work with"""


class EmptySceneError(EmptyInputError):
    """A memory map cannot be created from an empty static cloud"""


class ContractViolationError(CogniMapError):
    """A caller broke an operation precondition (e.g. a rejected alignment was used)"""


class SceneGenerationError(CogniMapError):
    """The synthetic scene description cannot be rendered"""


class ConfigError(CogniMapError, ValueError):
    """Invalid configuration file, key or value"""


class SolverError(CogniMapError):
    """The factor-graph solver could not make progress"""

    def __init__(self, message: str, factor: Optional[str] = None):
        self.factor = factor
        super().__init__(f"{message} (factor={factor})" if factor else message)


class IngestError(CogniMapError):
    """A sequence file is missing or malformed"""

    def __init__(self, message: str, path: Optional[str] = None, field: Optional[str] = None):
        self.path = path
        self.field = field
        details = [part for part in (f"file={path}" if path else None,
                                     f"field={field}" if field else None) if part]
        super().__init__(f"{message} ({', '.join(details)})" if details else message)


class BankLoadError(CogniMapError):
    """A persisted memory bank is corrupt or incomplete"""

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        super().__init__(f"{message} (file={path})" if path else message)


class PipelineStageError(CogniMapError):
    """A pipeline stage failed; carries where it happened"""

    def __init__(self, message: str, frame_index: Optional[int] = None, stage: Optional[str] = None):
        self.frame_index = frame_index
        self.stage = stage
        super().__init__(f"{message} (frame={frame_index}, stage={stage})")
