"""Exception hierarchy.

Every error carries a machine-readable ``code`` so the command line front end
can emit a stable JSON error object.
"""


class MarginalFlowError(Exception):
    code = "ERROR"

    def to_dict(self):
        return {"code": self.code, "message": str(self)}


class ConstructionError(MarginalFlowError, ValueError):
    code = "CONSTRUCTION"


class NotPSDError(ConstructionError):
    code = "NOT_PSD"


class RoleError(MarginalFlowError, TypeError):
    code = "ROLE"


class DomainError(MarginalFlowError, ValueError):
    code = "DOMAIN"


class OutOfDomainError(DomainError):
    code = "OUT_OF_DOMAIN"


class NonFiniteError(DomainError):
    code = "NON_FINITE"

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index

    def to_dict(self):
        out = super().to_dict()
        if self.index is not None:
            out["index"] = [int(i) for i in self.index]
        return out


class AssumptionViolation(MarginalFlowError, ValueError):
    code = "ASSUMPTION"


class UnderflowError(AssumptionViolation):
    code = "UNDERFLOW"


class UnsupportedDimensionError(MarginalFlowError, ValueError):
    code = "UNSUPPORTED_DIMENSION"


class FormatError(MarginalFlowError, ValueError):
    code = "BAD_FORMAT"


class BadMagicError(FormatError):
    code = "BAD_MAGIC"


class ConfigError(MarginalFlowError, ValueError):
    code = "CONFIG"

    def __init__(self, message, field=None, code=None):
        super().__init__(message)
        self.field = field
        if code is not None:
            self.code = code

    def to_dict(self):
        out = super().to_dict()
        if self.field is not None:
            out["field"] = self.field
        return out
