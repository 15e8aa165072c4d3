"""creditshare: spatial-temporal redistribution of delayed episodic returns
for cooperative multi-agent reinforcement learning."""

__version__ = "0.1.0"
