"""cilab: a desk-scale laboratory for oscillatory transport stages of
ideal MHD subsolutions, with certificate-driven verification."""

from .fields import (Grid, MapField, ScalarField, SupportBox, SymTensorField,
                     VectorField)
from .errors import CilabError

__version__ = "0.1.0"

__all__ = ["Grid", "ScalarField", "VectorField", "SymTensorField", "MapField",
           "SupportBox", "CilabError", "__version__"]
