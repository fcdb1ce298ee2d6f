def cube_sign(x: int) -> int:
    y = x * x * x
    return y
