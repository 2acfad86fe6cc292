#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pairdiff/adam.hpp"
#include "pairdiff/tensor.hpp"

namespace pairdiff::nd {

/// Checkpoint container format: magic "SATW", u32 LE version=1, u32 tensor
/// count; per tensor u16 name length, UTF-8 name, u8 rank, u32 dims, raw f32
/// little-endian payload. Writes go through a temp file plus rename.
void save_tensors(const std::string& path, const std::vector<std::pair<std::string, Tensor>>& tensors);
std::vector<std::pair<std::string, Tensor>> load_tensors(const std::string& path);

/// Store round-trip: parameter values only (optimizer state is not persisted).
void save_params(const std::string& path, const ParamStore& store);
/// Fills values of an already-built store by name; every store parameter must
/// be present in the file with a matching shape.
void load_params(const std::string& path, ParamStore& store);

}  // namespace pairdiff::nd
