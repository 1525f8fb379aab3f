from typing import Any, Dict, Optional, Sequence


class PRPNError(Exception):
    """Base class for every error raised by the PRPN package"""

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> Dict[str, Any]:
        """Convert to a JSON-serializable dict for the CLI error line"""
        return {
            "error": type(self).__name__,
            "message": self.message,
            **self.details,
        }


class ShapeError(PRPNError):
    """A kernel received operands whose shapes do not conform"""

    def __init__(self, kernel: str, *shapes: Sequence[int], reason: Optional[str] = None):
        shape_list = [list(s) for s in shapes]
        message = f"{kernel}: incompatible shapes {' vs '.join(str(tuple(s)) for s in shapes)}"
        if reason:
            message += f" ({reason})"
        super().__init__(message, kernel=kernel, shapes=shape_list)
        self.kernel = kernel
        self.shapes = shape_list


class GraphError(PRPNError):
    """Misuse of the backward graph (no recording context, consumed graph, ...)"""


class NumericalError(PRPNError):
    """NaN/Inf detected where finite values are required"""


class ConfigError(PRPNError):
    """Invalid or unknown configuration"""


class CorpusError(PRPNError):
    """Unreadable, empty or out-of-vocabulary corpus input"""


class TreeFormatError(PRPNError):
    """Malformed bracketed tree or inconsistent tree/distance lengths"""


class CheckpointError(PRPNError):
    """Checkpoint file that cannot be read back"""
