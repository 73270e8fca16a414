#include "wildnet/wilddict.hpp"

#include <array>
#include <fstream>

namespace wildnet {
namespace {

void put_u64(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(b.data(), 8);
}

std::uint64_t get_u64(std::istream& in) {
  std::array<unsigned char, 8> b{};
  in.read(reinterpret_cast<char*>(b.data()), 8);
  if (!in) throw DataError("wilddict", "truncated store snapshot header");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
  return v;
}

}  // namespace

void save_store_snapshot(const std::string& path, const ContentStore<float>& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("wilddict", "cannot open '" + path + "' for writing");
  put_u64(out, static_cast<std::uint64_t>(store.channels()));
  put_u64(out, static_cast<std::uint64_t>(store.size()));
  put_u64(out, static_cast<std::uint64_t>(store.capacity()));
  put_u64(out, store.generation());
  const Matrix<float> rows = store.contents();
  out.write(reinterpret_cast<const char*>(rows.data()), static_cast<std::streamsize>(rows.size() * sizeof(float)));
  if (!out) throw DataError("wilddict", "failed writing store snapshot '" + path + "'");
}

ContentStore<float> load_store_snapshot(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("wilddict", "cannot open store snapshot '" + path + "'");
  const auto channels = static_cast<Index>(get_u64(in));
  const auto size = static_cast<Index>(get_u64(in));
  const auto capacity = static_cast<Index>(get_u64(in));
  const std::uint64_t generation = get_u64(in);
  if (channels < 1 || capacity < 1 || size > capacity) throw DataError("wilddict", "corrupt store snapshot header");
  Matrix<float> rows(channels, size);
  in.read(reinterpret_cast<char*>(rows.data()), static_cast<std::streamsize>(rows.size() * sizeof(float)));
  if (!in) throw DataError("wilddict", "truncated store snapshot '" + path + "'");
  return ContentStore<float>::from_contents(rows, capacity, generation);
}

}  // namespace wildnet
