"""Exception types shared across the package."""


class DataError(ValueError):
    """Invalid input data or configuration (CLI exit code 3)."""


class TaxonomyError(DataError):
    """Malformed taxonomy text or a structural violation of the tree contract."""


class NumericError(RuntimeError):
    """Non-finite values or solver breakdown; indicates a defect (CLI exit code 4)."""
