from icontract import ensure


@ensure(lambda result: result >= 0)
@ensure(lambda a, b, result: result == a - b or result == b - a)
def abs_diff(a: int, b: int) -> int:
    if a > b:
        return a - b
    return b - a
