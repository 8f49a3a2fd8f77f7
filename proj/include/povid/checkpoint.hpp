#pragma once

#include <string>

#include "povid/policy.hpp"

namespace povid {

// Binary checkpoint: magic "POVD", a format version, the config block, then
// named arrays as (name, rank, dims, little-endian 32-bit reals) in row-major
// order. Round-trips bit-exactly.
void save_checkpoint(const PolicyParams<float>& params, const std::string& path);
PolicyParams<float> load_checkpoint(const std::string& path);

}  // namespace povid
