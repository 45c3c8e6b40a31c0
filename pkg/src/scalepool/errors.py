class ScalepoolError(Exception):
    pass


class ContractViolation(ScalepoolError):
    """A caller broke an operation's precondition."""


class NoEndpoint(ScalepoolError):
    """The virtual service has no selectable real server."""


class InvariantViolation(ScalepoolError):
    def __init__(self, invariant: str, detail: str = ""):
        self.invariant = invariant
        self.detail = detail
        msg = invariant if not detail else f"{invariant}: {detail}"
        super().__init__(msg)
