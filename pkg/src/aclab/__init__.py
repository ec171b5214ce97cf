"""Actor-critic representation lab: training, MI measurement and exact checks on contextual MDPs."""

__version__ = "0.1.0"
