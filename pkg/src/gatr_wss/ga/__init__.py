from .algebra import (BASIS_NAMES, BASIS_VERSION, GRADES, embed_plane, embed_point,
                      embed_scalar, extract_plane, extract_point, extract_scalar,
                      geometric_product, grade_project, inner_product)
from .transforms import EuclideanTransform, apply_transform
