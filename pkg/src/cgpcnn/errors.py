"""Exception types shared across the package."""


class CgpError(Exception):
    pass


class ConfigInfeasible(CgpError):
    """No genotype satisfying the active-node window was found."""


class MutationStuck(CgpError):
    """A mutation operator exhausted its re-application budget."""


class GenotypeFormatError(CgpError):
    pass


class UnknownFunctionSet(CgpError, ValueError):
    pass


class ArityMismatch(CgpError, ValueError):
    pass


class InvalidArchitecture(CgpError):
    """Shape inference produced a zero-sized feature map."""

    def __init__(self, node_id, message=None):
        self.node_id = node_id
        super().__init__(message or f"node {node_id} produces an empty feature map")


class OutOfMemoryBudget(CgpError):
    def __init__(self, required, budget):
        self.required = required
        self.budget = budget
        super().__init__(f"estimated {required} bytes exceeds budget of {budget} bytes")


class ShapeMismatch(CgpError, ValueError):
    pass


class TrainingDiverged(CgpError, FloatingPointError):
    pass


class LabelOutOfRange(CgpError, ValueError):
    pass


class EpochOutOfRange(CgpError, ValueError):
    pass


class UnknownSurrogate(CgpError, ValueError):
    pass


class InvalidLambda(CgpError, ValueError):
    pass


class CorruptCheckpoint(CgpError):
    pass


class VersionMismatch(CgpError):
    pass


class MissingFile(CgpError, FileNotFoundError):
    pass


class CorruptRecord(CgpError):
    pass


class SpecInfeasible(CgpError, ValueError):
    pass
