#pragma once

#include <string>
#include <utility>
#include <vector>

#include "iseg/tensor.hpp"

namespace iseg {

// Named trainable parameters; names double as checkpoint entry keys.
using ParamList = std::vector<std::pair<std::string, Tensor>>;

}  // namespace iseg
