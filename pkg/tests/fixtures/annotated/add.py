from icontract import ensure


@ensure(lambda a, b, result: result - a == b)
def add(a: int, b: int) -> int:
    return a + b
