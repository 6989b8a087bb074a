"""Exception hierarchy. Each class carries the CLI exit code for its error class."""


class NetInferError(Exception):
    exit_code = 1
    code = "error"


class SchemaError(NetInferError):
    exit_code = 2
    code = "schema"


class StructuralError(SchemaError):
    """Malformed call: wrong vector length, bad index, i == i' and the like."""

    code = "structural"


class IntegrityError(NetInferError):
    exit_code = 3
    code = "integrity"


class DesignMismatchError(IntegrityError):
    code = "design_mismatch"


class OverlapError(NetInferError):
    exit_code = 4
    code = "overlap"


class AssumptionError(NetInferError):
    exit_code = 4
    code = "assumption"


class DegenerateConditioningError(AssumptionError):
    code = "degenerate_conditioning"


class NonMeasurableDesignError(AssumptionError):
    code = "non_measurable"


class EnumerationInfeasible(NetInferError):
    exit_code = 5
    code = "enumeration_infeasible"


class UndefinedEstimateError(NetInferError):
    exit_code = 6
    code = "undefined_estimate"
