class HeadSegError(Exception):
    pass


class ShapeError(HeadSegError, ValueError):
    pass


class SpatialCapExceeded(ShapeError):
    def __init__(self, tokens: int, cap: int):
        self.tokens = tokens
        self.cap = cap
        super().__init__(f"{tokens} spatial positions exceed the attention cap of {cap}")


class NonFiniteError(HeadSegError, FloatingPointError):
    def __init__(self, context: str):
        self.context = context
        super().__init__(f"non-finite values produced by {context}")


class GradientError(HeadSegError):
    pass


class ConfigError(HeadSegError, ValueError):
    pass


class DataError(HeadSegError):
    pass


class PhantomOutOfBounds(DataError, ValueError):
    pass


class MissingCounterpart(DataError):
    def __init__(self, sample_id: str, missing: str):
        self.sample_id = sample_id
        self.missing = missing
        super().__init__(f"{sample_id} has no counterpart in {missing}/")


class UnreadableImage(DataError):
    pass


class CheckpointError(DataError):
    pass


class UnknownLayer(HeadSegError, KeyError):
    pass


class ReportMismatch(HeadSegError):
    pass


class StatisticsError(HeadSegError, ValueError):
    pass


class MethodNotAvailable(HeadSegError):
    def __init__(self, method: str, context: str):
        self.method = method
        self.context = context
        super().__init__(repr(self))

    def __repr__(self):
        return f"{self.method} is not available for {self.context}"


class SampleNotFound(DataError, KeyError):
    def __init__(self, sample_id: str):
        self.sample_id = sample_id
        super().__init__(f"no sample with id {sample_id!r}")
