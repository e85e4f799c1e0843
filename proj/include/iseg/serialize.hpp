#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "iseg/tensor.hpp"

// On-disk formats, both little-endian regardless of host byte order.
//
// Tensor blob ("IATW"): magic, version u32, rank u32, dims u64[rank],
// payload f64[numel].
//
// Checkpoint container ("IATC"): magic, version u32, step u64, resolved
// config text (u64 length + bytes), entry count u64, then per entry a name
// (u32 length + bytes) followed by an IATW blob. Entries keep insertion
// order so save/load round-trips are byte-stable.

namespace iseg {

void save_tensor(std::ostream& os, const Tensor& t);
Tensor load_tensor(std::istream& is);

void save_tensor_file(const std::string& path, const Tensor& t);
Tensor load_tensor_file(const std::string& path);

struct Checkpoint {
    std::uint64_t step = 0;
    std::string config_text;
    std::vector<std::pair<std::string, Tensor>> entries;

    const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace iseg
