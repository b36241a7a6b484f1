class InvalidInputError(ValueError):
    pass


class EmptyInputError(InvalidInputError):
    pass


class PoisonedUpdateError(FloatingPointError):
    """A loss or gradient came out non-finite; the update was not applied."""


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.key = key
        self.line = line


class MatrixParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"byte offset {offset}: {message}")
        self.offset = offset
