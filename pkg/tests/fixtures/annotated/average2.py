from icontract import ensure


@ensure(lambda a, b, result: 2 * result <= a + b < 2 * result + 2)
def average2(a: int, b: int) -> int:
    total = a + b
    return total // 2
