"""Golden values for the access-range table and resident-block plans."""

# Columns: IN A B C, OUT A B C, IN AB BC CA, OUT AB BC CA.
ACCESS_RANGE_TABLE = """
Entry f f f f f f f f f f f f
BB1   f f f t f f f f f t f t
BB2   t t f t t f t t t t t t
BB3   t t f t t f t t t t t t
BB4   t f f f f f t t t f t t
BB5   f f f f f t f t t f t t
BB6   f f t f f f f t t f f f
Exit  f f f f f f f f f f f f
"""

ACCESS_RANGE_SETS = (("A", "B"), ("B", "C"), ("C", "A"))


def access_range_rows():
    return [line.split() for line in ACCESS_RANGE_TABLE.strip().splitlines()]


# (R_tb, expected resident blocks, pairs, unshared) at R = 16384, t = 0.1.
BLOCK_PLANS = [
    (2112, 14, 7, 0),
    (2176, 12, 5, 2),
    (9408, 2, 1, 0),
    (3840, 6, 2, 2),
]
