"""Exception hierarchy shared by every module of the package."""


class SelencError(Exception):
    """Base class. ``module`` names the subsystem that raised."""

    module = "selenc"


class ShapeError(SelencError):
    module = "nn"

    def __init__(self, message, layer=None):
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)
        self.layer = layer


class DivergenceError(SelencError):
    module = "nn"

    def __init__(self, message, batch=None):
        if batch is not None:
            message = f"batch {batch}: {message}"
        super().__init__(message)
        self.batch = batch


class SelectionError(SelencError):
    module = "pss"


class CipherError(SelencError):
    module = "dprm"


class GrantError(SelencError):
    module = "permissions"


class FormatError(SelencError):
    """A binary file or buffer failed to parse; ``offset`` is the byte position."""

    module = "io"

    def __init__(self, message, offset=None, tier=None):
        parts = [message]
        if offset is not None:
            parts.append(f"at offset {offset}")
        if tier is not None:
            parts.append(f"(tier {tier})")
        super().__init__(" ".join(parts))
        self.offset = offset
        self.tier = tier


class AttackError(SelencError):
    module = "attacks"


class AnalysisError(SelencError):
    module = "analysis"
