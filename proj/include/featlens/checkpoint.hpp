#pragma once

#include <map>
#include <string>

#include "featlens/tensor.hpp"

namespace featlens {

// Named-tensor container, format "FLNS":
//   magic "FLNS" | version u32 | entry count u32
//   per entry: name length u16 | name UTF-8 | rank u8 | dims u32 each
//              | payload f32 little-endian row-major
// Round trips are bit-identical; unknown versions are rejected.
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::map<std::string, Tensor>& tensors, const std::string& path);
std::map<std::string, Tensor> load_checkpoint(const std::string& path);

}  // namespace featlens
