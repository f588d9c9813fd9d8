"""
Jerarquía de excepciones del motor de mapeo.

`ValidationError` y sus subclases señalan documentos o argumentos mal formados
(la CLI los traduce a código de salida 1); el resto de `NumamapError` son
errores de ejecución (código 2).
"""


class NumamapError(Exception):
    """Error base del paquete."""


class ValidationError(NumamapError):
    """Documento o argumento inválido."""


class TopologyError(ValidationError):
    """Topología mal formada o consulta con identificadores desconocidos."""


class ScenarioError(ValidationError):
    """Escenario mal formado."""


class PerfParamsError(ValidationError):
    """Parámetros del modelo de rendimiento fuera de rango."""


class ConfigMismatchError(ValidationError):
    """Trazas o configuraciones que no se pueden comparar entre sí."""


class CapacityError(NumamapError):
    """No hay núcleos o memoria suficientes para la petición."""


class MappingError(NumamapError):
    """Consulta sobre una VM que no está mapeada."""


class OracleTooLargeError(NumamapError):
    """La instancia no es enumerable por el oráculo de fuerza bruta."""


class TraceError(NumamapError):
    """Traza ilegible o época fuera de rango."""
