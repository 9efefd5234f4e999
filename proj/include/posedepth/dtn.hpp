#pragma once

#include <filesystem>
#include <iosfwd>

#include "posedepth/tensor.hpp"

namespace posedepth {

/// DTN1 tensor container: the magic `DTN1`, a little-endian u32 rank, rank
/// little-endian u32 extents, then the row-major payload as little-endian
/// float32. Values are narrowed to float32 on write.
void write_dtn(std::ostream& out, const Tensor& t);
Tensor read_dtn(std::istream& in);

void write_dtn(const std::filesystem::path& path, const Tensor& t);
Tensor read_dtn(const std::filesystem::path& path);

}  // namespace posedepth
