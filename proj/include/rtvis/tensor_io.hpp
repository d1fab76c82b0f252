#pragma once

#include <filesystem>
#include <iosfwd>

#include "rtvis/tensor.hpp"

namespace rtvis {

// TVT1 layout: "TVT1", u32 ndim, ndim × u32 extents, then float32 values.
// Every integer and float is little-endian, values row-major.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace rtvis
