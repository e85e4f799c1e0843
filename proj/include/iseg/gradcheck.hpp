#pragma once

#include <cstdint>
#include <functional>

#include "iseg/tensor.hpp"

namespace iseg {

// Central-difference gradient oracle. Runs f once under a fresh tape to get
// the analytic gradient of x, then perturbs coordinates of x by +/-h and
// compares. Returns the max over probed coordinates of
//   |analytic - numeric| / max(1, |analytic|).
//
// f must rebuild its graph from x on every call and be deterministic; this
// is verified by evaluating it twice before probing. With max_coords > 0,
// only that many coordinates (sampled without replacement from the given
// seed) are probed -- used to keep large end-to-end checks within budget.
double finite_difference_check(const std::function<Tensor()>& f, Tensor x, double h = 1e-5,
                               std::int64_t max_coords = -1, std::uint64_t seed = 0);

}  // namespace iseg
