class PivotError(ArithmeticError):
    """Forward elimination hit an exactly zero pivot."""

    def __init__(self, index):
        super().__init__(f"zero pivot at row {index}")
        self.index = index
