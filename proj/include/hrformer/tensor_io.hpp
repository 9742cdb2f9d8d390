#pragma once

#include <filesystem>
#include <iosfwd>

#include "hrformer/tensor.hpp"

namespace hrformer {

// Dump layout: "HRTN", rank (u32 LE), extents (u64 LE each), row-major f64 LE payload.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace hrformer
