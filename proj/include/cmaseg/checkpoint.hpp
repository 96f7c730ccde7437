#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cmaseg/tensor.hpp"

namespace cmaseg {

// Checkpoint file layout: the 5-byte magic "CMAT1" followed by one record per
// tensor until end of file. Each record is
//   u64 name length | name bytes | u64 rank | u64 extents[rank] | f64 data[]
// with every integer and scalar little-endian. Values round-trip bit-exactly.
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& entries);
std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path);

}  // namespace cmaseg
