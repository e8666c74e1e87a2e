"""
Contains pybnl exception classes.
"""


class PybnlException(Exception):
    pass


class CoincidentNodesException(PybnlException):
    """Two nodes that must be distinct share a position"""
    pass


class NonUnitInputException(PybnlException):
    pass


class IsolatedNodeException(PybnlException):
    """A node has no neighbour to gossip with"""
    pass


class TooFewBeaconsException(PybnlException):
    pass


class DimensionMismatchException(PybnlException):
    pass


class SingularGroundedLaplacianException(PybnlException):
    """The follower block of the expected Laplacian is not positive definite; the network cannot be localised"""
    pass


class InadmissibleStepSizeException(PybnlException):
    pass


class InvalidParamsException(PybnlException):
    pass


class InsufficientDataException(PybnlException):
    pass


class BoundNotReachedException(PybnlException):
    pass


class ScenarioParseException(PybnlException):
    pass


class InadmissibleStepSizeWarning(UserWarning):
    """Step size outside the range that guarantees second moment convergence"""
