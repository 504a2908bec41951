#pragma once

#include <string>

#include "picl/params.hpp"

namespace picl {

// Binary checkpoint: magic "PCKT1", then per parameter (insertion order):
// name length (u32 LE), name bytes, rank (u32 LE), dims (u64 LE each),
// values (f64 LE). Round-trips bit-exactly.
void save_checkpoint(const ParamSet& params, const std::string& path);
ParamSet load_checkpoint(const std::string& path);

}  // namespace picl
