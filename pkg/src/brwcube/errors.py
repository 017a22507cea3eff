"""Exception types shared across the package."""


class GuardError(RuntimeError):
    """A size or overflow guard refused the request.

    ``guard`` names the limit that was hit so callers (the CLI in
    particular) can report it.
    """

    def __init__(self, guard: str, message: str):
        super().__init__(f"[{guard}] {message}")
        self.guard = guard


class DisconnectedKernelError(ValueError):
    """The support graph of a kernel is not connected."""
