#include "hgformer/errors.hpp"
