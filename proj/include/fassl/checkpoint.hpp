#pragma once

#include <string>

#include "fassl/graph.hpp"

// Checkpoint format shared by teacher, student and prototype bank:
// magic "FASC", version u32=1, array count u32, then per array (sorted by
// name): name length u32, UTF-8 name, rank u32, dims u64 each, float32
// payload. Values are widened back to float64 on load.

namespace fassl::ckpt {

void save_checkpoint(const graph::ParamSet& params, const std::string& path);
graph::ParamSet load_checkpoint(const std::string& path);

}  // namespace fassl::ckpt
