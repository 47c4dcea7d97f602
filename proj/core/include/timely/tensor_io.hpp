#pragma once

#include <filesystem>
#include <iosfwd>

#include "timely/ndarray.hpp"

namespace timely {

// NDAR1 container: "NDAR1", u32 rank, rank x u64 dims, little-endian f64 payload.
void write_ndar(std::ostream& os, const NdArray& a);
NdArray read_ndar(std::istream& is);

void save_ndar(const std::filesystem::path& path, const NdArray& a);
NdArray load_ndar(const std::filesystem::path& path);

}  // namespace timely
