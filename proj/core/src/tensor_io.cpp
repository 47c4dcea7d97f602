#include "timely/tensor_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "timely/errors.hpp"

namespace timely {

namespace {

constexpr char kMagic[5] = {'N', 'D', 'A', 'R', '1'};

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

template <class T>
void put(std::ostream& os, T v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  T v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw CheckpointError("truncated NDAR1 record");
  return to_little(v);
}

}  // namespace

void write_ndar(std::ostream& os, const NdArray& a) {
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(a.rank()));
  for (std::size_t d : a.shape()) put<std::uint64_t>(os, d);
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(a.raw()), static_cast<std::streamsize>(a.size() * sizeof(double)));
  } else {
    for (double v : a.data()) put<double>(os, v);
  }
  if (!os) throw CheckpointError("failed writing NDAR1 record");
}

NdArray read_ndar(std::istream& is) {
  char magic[5];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("bad NDAR1 magic");
  }
  const auto rank = get<std::uint32_t>(is);
  if (rank > 16) throw CheckpointError("implausible NDAR1 rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(is));
  std::vector<double> data(numel(shape));
  if constexpr (std::endian::native == std::endian::little) {
    if (!is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)))) {
      throw CheckpointError("truncated NDAR1 payload");
    }
  } else {
    for (double& v : data) v = get<double>(is);
  }
  return NdArray(std::move(shape), std::move(data));
}

void save_ndar(const std::filesystem::path& path, const NdArray& a) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  write_ndar(os, a);
}

NdArray load_ndar(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path.string());
  return read_ndar(is);
}

}  // namespace timely
