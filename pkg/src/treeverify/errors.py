class Infeasible(Exception):
    """No output configuration satisfies the constraints."""
