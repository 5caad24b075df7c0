"""
citest: conditional independence tests built on empirical Rosenblatt transforms.
"""
__version__ = "1.0.0"
