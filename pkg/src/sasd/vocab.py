"""Attribute vocabulary shared by the mock backend and the scene generator.

The two modules are coupled through this file: every hue the generator can
paint has a colour word here, sitting at the centre of one of the mock's
eight hue bins. Extending one side means extending the other.
"""

COLOR_NAMES = ("red", "orange", "yellow", "green", "cyan", "blue", "purple", "pink")

# Fully saturated, value 220, hue exactly 45 * index degrees.
COLOR_RGB = {
    "red": (220, 0, 0),
    "orange": (220, 165, 0),
    "yellow": (110, 220, 0),
    "green": (0, 220, 55),
    "cyan": (0, 220, 220),
    "blue": (0, 55, 220),
    "purple": (110, 0, 220),
    "pink": (220, 0, 165),
}

SIZE_WORDS = ("small", "medium", "large")
# length < 20 -> small, 20 <= length < 40 -> medium, otherwise large
SIZE_BOUNDARIES = (20, 40)

SHAPE_WORDS = ("elongated", "compact")
MARKING_WORDS = ("striped", "plain")
OBJECT_WORDS = ("ship", "ships", "boat", "boats", "vessel", "vessels")

# Desaturated sea colour; saturation 16/76 stays below the 0.3 hue cut-off.
WATER_RGB = (60, 70, 76)
STRIPE_RGB = (240, 240, 240)
DOCK_RGB = (150, 150, 150)


def size_word(length: int) -> str:
    lo, hi = SIZE_BOUNDARIES
    if length < lo:
        return "small"
    if length < hi:
        return "medium"
    return "large"
