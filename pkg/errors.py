"""Exception types shared by every stage. Exit codes are assigned in app.py."""


class PestPulseError(ValueError):
    pass


class ValidationError(PestPulseError):
    """Bad arguments, lexicon or model order (exit 1)."""


class DataError(PestPulseError):
    """The data cannot support the requested computation (exit 2)."""


class StageError(DataError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
