from icontract import require, ensure


@require(lambda score: 0 <= score <= 100)
@ensure(lambda result: result in ("A", "B", "C", "F"))
@ensure(lambda score, result: (result == "A") == (score >= 90))
def grade(score: int) -> str:
    if score >= 90:
        return "A"
    elif score >= 80:
        return "B"
    elif score >= 70:
        return "C"
    return "F"
