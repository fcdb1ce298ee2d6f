# icontract annotated code
from icontract import require, ensure
class Absolute:
    @require(lambda num: isinstance(num, int))
    @ensure(lambda result: isinstance(result, int))
    @ensure(lambda result: result >= 0)
    @ensure(lambda num, result: (num >= 0 and result == num) or (num < 0 and result == -num))
    def absolute(self, num: int) -> int:
        if 0 <= num:
            return num
        else:
            return -num
