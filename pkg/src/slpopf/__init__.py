"""Sequential linear programming for AC optimal power flow."""
__version__ = "0.1.0"
