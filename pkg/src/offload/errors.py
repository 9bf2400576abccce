"""Exceptions shared by client and server, and remote-exception marshalling."""

import builtins
import importlib


class OutOfMemoryError(MemoryError):
    """A task's peak memory exceeded the heap of every available clone."""


class RemoteTaskError(RuntimeError):
    """A remote exception whose type cannot be rebuilt on this side."""

    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind
        self.message = message


def exception_kind(exc: BaseException) -> str:
    cls = type(exc)
    return f"{cls.__module__}:{cls.__qualname__}"


def exception_message(exc: BaseException) -> str:
    if len(exc.args) == 1 and isinstance(exc.args[0], str):
        return exc.args[0]
    return str(exc)


def rebuild_exception(kind: str, message: str) -> BaseException:
    """Recreate a remote exception from its ``module:qualname`` kind."""
    module, _, qualname = kind.partition(":")
    try:
        obj = builtins if module == "builtins" else importlib.import_module(module)
        for part in qualname.split("."):
            obj = getattr(obj, part)
        if isinstance(obj, type) and issubclass(obj, BaseException):
            return obj(message)
    except Exception:
        pass
    return RemoteTaskError(kind, message)
