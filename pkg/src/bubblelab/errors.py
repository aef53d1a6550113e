"""Exception types shared across the package."""


class BubbleLabError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(BubbleLabError, ValueError):
    """An operation received values outside its documented domain."""


class InvalidParamsError(BubbleLabError, ValueError):
    """Market or agent parameters violate their invariants."""


class InsufficientDataError(BubbleLabError, ValueError):
    """Not enough observations for the requested statistic."""


class ConfigError(BubbleLabError, ValueError):
    """An experiment config file is malformed (unknown or missing fields)."""


class TransportError(BubbleLabError, RuntimeError):
    """An HTTP request to a chat endpoint failed after all retries."""


class ParseError(BubbleLabError, ValueError):
    """A chat response could not be parsed into a prediction.

    Carries the raw response text for post-mortems.
    """

    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text
