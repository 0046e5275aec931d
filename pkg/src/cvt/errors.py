class ConfigurationError(ValueError):
    """Invalid dataset, split, or experiment configuration."""


class NonFiniteLossError(RuntimeError):
    """A loss component became NaN or infinite during training.

    ``component`` names the offending term so the abort is diagnosable.
    """

    def __init__(self, component: str, value: float, step: int):
        self.component = component
        self.value = value
        self.step = step
        super().__init__(
            f"non-finite loss at step {step}: {component} = {value!r}; aborting run"
        )
