"""Exception hierarchy shared by all modules and mapped to CLI exit codes."""


class SpkevalError(Exception):
    """Base class for toolkit errors."""


class InputError(SpkevalError, ValueError):
    """Bad user input: malformed file, violated precondition, missing reference."""


class FormatError(InputError):
    """A binary or tabular file does not match its declared layout."""

    def __init__(self, message, offset=None, path=None):
        self.offset = offset
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte offset {offset}")
        prefix = f"{': '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class InvariantError(SpkevalError, RuntimeError):
    """An internal invariant was violated; indicates a bug, not bad input."""
