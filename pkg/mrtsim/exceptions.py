from typing import Optional


class ValidationError(ValueError):
    # field: JSON-path-like locator (e.g. "trial.components[1].id")
    # line: 1-based line number when the error comes from a file
    field: Optional[str]
    line: Optional[int]

    def __init__(self, message: str, field: str = None, line: int = None):
        self.field = field
        self.line = line
        prefix = ""
        if line is not None:
            prefix += "line {}: ".format(line)
        if field is not None:
            prefix += "{}: ".format(field)
        super().__init__(prefix + message)


class UnknownComponent(KeyError):
    pass


class ItineraryError(ValidationError):
    pass


class MalformedPayload(ValueError):
    pass


class RankDeficiencyError(ValueError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(
            "Design matrix is rank deficient, collinear columns: {}".format(
                ", ".join(self.columns)
            )
        )


class EventLogError(ValueError):
    pass


class ExportFormatError(ValueError):
    pass
