"""Typed errors for the fine-tuning driver."""


class DriverError(Exception):
    pass


class DataInvalid(DriverError):
    def __init__(self, line: int, reason: str) -> None:
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class UnknownBaseModel(DriverError):
    pass


class NonFiniteLoss(DriverError):
    pass


class OutOfMemory(DriverError):
    def __init__(self, batch_size: int, detail: str = "") -> None:
        self.batch_size = batch_size
        suffix = f": {detail}" if detail else ""
        super().__init__(f"out of memory at batch size {batch_size}{suffix}")
